#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoproxy/checkpoint.hpp"
#include "geoproxy/raster.hpp"

namespace geoproxy::nn {

// Patchify stem (kernel = stride = stem_kernel) followed by residual stages,
// global average pooling, a ReLU embedding layer of width E and a linear head.
// Each stage halves the spatial size in its first block.
struct ConvRegressorConfig {
    int input_size = kTileSize;
    int input_channels = 3;
    int stem_kernel = 4;
    std::vector<int> block_widths{16, 32, 64};
    int blocks_per_stage = 1;
    int embedding_dim = 512;
    int output_dim = 16;
    std::uint64_t seed = 1;

    void validate() const;  // throws SchemaError
    nlohmann::ordered_json to_json() const;
    static ConvRegressorConfig from_json(const nlohmann::json& j);
    // 8x8 input variant for tests.
    static ConvRegressorConfig tiny();
    bool operator==(const ConvRegressorConfig&) const = default;
};

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct ModelParams {
    ConvRegressorConfig config;
    std::vector<ParamTensor> tensors;
    std::optional<BandStats> band_stats;  // input normalization fitted on the training split

    const ParamTensor& get(std::string_view name) const;  // throws SchemaError
    ParamTensor& get(std::string_view name);
    std::size_t parameter_count() const;
    bool all_finite() const;
    // FNV-1a over names, shapes and values of tensors whose name starts with prefix
    // (empty prefix: all; "!head" excludes the head).
    std::uint64_t checksum(std::string_view prefix = "") const;
};

// Seeded He-scaled uniform init for convolutions and the embedding layer;
// head from uniform(-1/sqrt(E), 1/sqrt(E)).
ModelParams init_params(const ConvRegressorConfig& config);

// CHW float tensor. With stats, values are normalized (invalid pixels -> 0).
std::vector<float> to_tensor(const RasterGrid& tile, const BandStats* stats = nullptr);

// Inputs are normalized CHW tensors of size channels * input_size^2.
std::vector<double> forward(const ModelParams& params, std::span<const float> input);
std::vector<double> embed(const ModelParams& params, std::span<const float> input);
// Raw tile in, normalized with params.band_stats when present.
std::vector<double> predict(const ModelParams& params, const RasterGrid& tile);
std::vector<double> embed_tile(const ModelParams& params, const RasterGrid& tile);

struct TrainSpec {
    double learning_rate = 1e-3;
    int batch_size = 64;
    double train_fraction = 0.8;
    int max_epochs = 30;
    int patience = 5;
    std::uint64_t seed = 1;
    int threads = 1;

    void validate() const;  // throws InputError
    nlohmann::ordered_json to_json() const;
    static TrainSpec from_json(const nlohmann::json& j);
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Per stratum (sorted by name): seeded shuffle, first round(f * n) to train.
Split stratified_split(std::span<const std::string> strata, double train_fraction, std::uint64_t seed);

struct Dataset {
    std::span<const RasterGrid> tiles;
    std::vector<std::vector<double>> targets;
    std::vector<std::string> strata;  // e.g. state ids; empty means one stratum
};

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct TrainResult {
    ModelParams params;  // at best validation loss
    std::vector<EpochRecord> history;
    Split split;
    int best_epoch = 0;
    double best_val_mse = 0.0;
    double mean_predictor_val_mse = 0.0;
    bool beats_mean_predictor() const { return best_val_mse <= mean_predictor_val_mse; }
};

// Adam on MSE with early stopping. Band stats come from the training split.
// Targets are standardized per output during training and the scaling is
// folded into the head afterwards; the init head is read in standardized
// units. Throws NumericalError naming the batch on a non-finite loss.
TrainResult train(const Dataset& data, const TrainSpec& spec, const ModelParams& init);

void write_history(const std::filesystem::path& path, std::span<const EpochRecord> history);

ModelParams replace_head(const ModelParams& params, int output_dim, std::uint64_t seed);

struct GradCheckOptions {
    double epsilon = 1e-4;
    std::size_t max_params = 64;  // random subset size per check
    std::uint64_t seed = 7;
    std::function<bool(const std::string&)> filter;  // tensors to check; all when empty
    double corrupt = 0.0;  // analytic gradient scaled by (1 + corrupt)
};

// Max relative error |a - n| / max(|a|, |n|, 1e-8) between analytic and
// central-difference gradients of 0.5 * |f(x) - target|^2, in double precision.
double grad_check(const ModelParams& params, std::span<const float> input, std::span<const double> target,
                  const GradCheckOptions& options = {});

inline constexpr double kNightlightCellDegrees = 1.0 / 120.0;
inline constexpr int kNightlightMax = 63;

struct NightlightGrid {
    double origin_lon = 0.0;  // north-west corner
    double origin_lat = 0.0;
    double cell_deg = kNightlightCellDegrees;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;  // row-major, row 0 north

    int at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
    void validate() const;
    RasterGrid to_raster() const;
    static NightlightGrid from_raster(const RasterGrid& grid);  // throws SchemaError on non-integer or out-of-range cells
};

// Area-weighted mean intensity of the cells intersecting the footprint
// (clipped to the grid). Throws CoverageError when the centroid lies outside.
double sample_nightlight(const NightlightGrid& grid, LatLon centroid, double side = kFootprintSide);

TrainResult train_nightlight_baseline(std::span<const RasterGrid> tiles, std::span<const double> nightlight,
                                      std::vector<std::string> strata, const TrainSpec& spec,
                                      ConvRegressorConfig config);
double predict_nightlight(const ModelParams& params, const RasterGrid& tile);  // clipped to [0, 63]

Checkpoint to_checkpoint(const ModelParams& params, const TrainSpec* spec = nullptr);
ModelParams from_checkpoint(const Checkpoint& ck);

}  // namespace geoproxy::nn
