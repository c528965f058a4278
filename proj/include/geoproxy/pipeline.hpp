#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoproxy/align.hpp"
#include "geoproxy/compositing.hpp"
#include "geoproxy/evaluation.hpp"
#include "geoproxy/ingest.hpp"
#include "geoproxy/nn.hpp"
#include "geoproxy/synth.hpp"
#include "geoproxy/transfer.hpp"

namespace geoproxy::pipeline {

namespace fs = std::filesystem;

// JSON config file; command-line flags override it. Component seeds (model
// init, training, heads) are derived from the master seed.
struct PipelineConfig {
    fs::path data_dir = "data";   // synth-gen output: manifest, census, survey, nightlight, scenes
    fs::path work_dir = "work";   // composites, tables, models, heads, transforms, reports
    std::optional<fs::path> world_spec;
    std::uint64_t seed = 1;
    int threads = 1;
    nn::ConvRegressorConfig model;
    nn::TrainSpec train;
    transfer::HeadSpec head;
    std::vector<align::TransformKind> transforms{align::kAllKinds.begin(), align::kAllKinds.end()};

    void validate() const;  // throws InputError
    nlohmann::ordered_json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);  // throws SchemaError
    static PipelineConfig load(const fs::path& path);
    // Copies the master seed into the component seeds.
    void apply_seed();
};

// Work-directory layout.
struct WorkPaths {
    fs::path root;
    fs::path composites(int year) const { return root / "composites" / std::to_string(year); }
    fs::path composite(int year, const std::string& village) const { return composites(year) / (village + ".eorc"); }
    fs::path tables() const { return root / "tables"; }
    fs::path models() const { return root / "models"; }
    fs::path heads() const { return root / "heads"; }
    fs::path transforms() const { return root / "transforms"; }
    fs::path reports() const { return root / "reports"; }
};

// Census year for "1"/"2" (round index) or "2001"/"2011".
int parse_year(const std::string& s);

struct CompositeSummary {
    int year = 0;
    std::size_t villages = 0;
    std::size_t total_gaps = 0;
    double mean_gap_fraction = 0.0;
};

// Per-village composites of stored scenes; writes <year>/<village>.eorc,
// <village>.fill.csv (pixel_index, source_rank) and summary.csv.
CompositeSummary run_composite(const PipelineConfig& cfg, int year);
void write_composite(const WorkPaths& paths, const compositing::CompositeTile& tile);

// Village asset vectors, nightlight samples and tehsil truth for both rounds.
void run_build_assets(const PipelineConfig& cfg);

// Per-outcome R2 of model predictions on the validation villages.
std::vector<eval::OutcomeReport> validation_reports(const nn::TrainResult& result, std::span<const RasterGrid> tiles,
                                                    const std::vector<std::vector<double>>& targets,
                                                    const std::vector<std::string>& names, const std::string& path_tag);

nn::TrainResult run_train(const PipelineConfig& cfg);
nn::TrainResult run_train_nightlight(const PipelineConfig& cfg);

struct TransferSummary {
    std::vector<eval::OutcomeReport> distal_asset;
    std::vector<eval::OutcomeReport> distal_nightlight;
    std::vector<eval::OutcomeReport> assets_via_nightlight;
    eval::PathComparison comparison;
    std::optional<transfer::SurveyFit> survey_nfhs4;
    std::optional<transfer::SurveyFit> survey_nfhs5;
};

// Demographic outcomes through single-layer heads on each model's embeddings,
// asset vectors from nightlight embeddings, and the district survey heads
// (skipped with a warning below the district minimum).
struct TransferInputs {
    std::vector<std::string> village_ids;
    std::vector<ingest::VillageRecord> records;
    std::vector<std::vector<double>> asset_embeddings;
    std::vector<std::vector<double>> nightlight_embeddings;
    std::vector<std::vector<double>> assets;
    std::vector<std::vector<double>> demographics;
    std::vector<std::string> strata;
    std::map<std::string, ingest::HealthVector93> nfhs4, nfhs5;
};
TransferSummary transfer_stage(const TransferInputs& in, const transfer::HeadSpec& spec, const WorkPaths* out);
TransferSummary run_transfer(const PipelineConfig& cfg);

// Asset model on round-1 composites, aggregated to tehsils and scored against
// transformed round-1 truth.
align::TemporalReport run_temporal_eval(const PipelineConfig& cfg);
void write_temporal_outputs(const WorkPaths& paths, const align::TemporalReport& report);

// Generic per-column R2 of two CSVs sharing an id column (first column).
std::vector<eval::OutcomeReport> run_evaluate(const fs::path& pred, const fs::path& truth, const fs::path& out,
                                              eval::Level level, const std::string& path_tag);

// SVG charts, R2 histogram and summary.txt from the reports directory.
void run_report(const PipelineConfig& cfg);

// synth-gen (when a world spec is set) through report.
void run_all(const PipelineConfig& cfg);

// Composites rendered in memory from a synthetic world, in village order.
std::vector<compositing::CompositeTile> composite_world(const synth::World& world, int year, int threads);

}  // namespace geoproxy::pipeline
