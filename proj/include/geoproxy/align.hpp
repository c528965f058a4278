#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geoproxy/checkpoint.hpp"
#include "geoproxy/ingest.hpp"

namespace geoproxy::align {

// Row-major sample matrix: samples[i][k] is outcome k of sample i.
using Samples = std::vector<std::vector<double>>;

enum class TransformKind { none, simple, histogram, linear_ot };
inline constexpr std::array<TransformKind, 4> kAllKinds = {TransformKind::none, TransformKind::simple,
                                                           TransformKind::histogram, TransformKind::linear_ot};
std::string_view kind_name(TransformKind kind);
TransformKind parse_kind(std::string_view name);

inline constexpr int kHistogramBins = 10;

struct HistogramMap {
    std::vector<double> knots;   // source values, nondecreasing, bins + 1
    std::vector<double> edges;   // target bin edges, bins + 1
    bool constant = false;       // degenerate source
    double target_median = 0.0;
};

struct AlignmentTransform {
    TransformKind kind = TransformKind::none;
    std::size_t dim = 0;
    // simple
    std::vector<double> source_mean, source_std, target_mean, target_std;
    // histogram
    std::vector<HistogramMap> histograms;
    // linear-ot: y' = A y + b, A row-major dim x dim
    std::vector<double> A, b;

    std::vector<double> apply(std::span<const double> y) const;
    Samples apply(const Samples& ys) const;
};

AlignmentTransform fit_none(std::size_t dim);
AlignmentTransform fit_simple(const Samples& source, const Samples& target);
AlignmentTransform fit_histogram(const Samples& source, const Samples& target, int bins = kHistogramBins);
AlignmentTransform fit_linear_ot(const Samples& source, const Samples& target);
AlignmentTransform fit(TransformKind kind, const Samples& source, const Samples& target);

// Bin index of v for ascending edges: the number of interior edges <= v,
// so the last bin is closed on the right.
int histogram_bin(std::span<const double> edges, double v);
// Equal-width edges over the pooled min/max of both samples.
std::vector<double> pooled_edges(std::span<const double> a, std::span<const double> b, int bins);

Checkpoint to_checkpoint(const AlignmentTransform& t);
AlignmentTransform from_checkpoint(const Checkpoint& ck);

struct TehsilOutcome {
    std::string tehsil_id;
    int year = 0;
    std::optional<ingest::TehsilVector10> truth;
    std::vector<double> prediction;
    double population = 0.0;
};

// Population-weighted mean of village predictions per tehsil, ordered by
// tehsil id. Zero-population tehsils fall back to uniform weights (logged).
std::vector<TehsilOutcome> tehsil_aggregate(const std::map<std::string, std::vector<double>>& village_predictions,
                                            std::span<const ingest::VillageRecord> records, int year);

struct TemporalResult {
    std::string outcome;
    TransformKind kind = TransformKind::none;
    std::optional<double> r2;
    std::size_t n_tehsils = 0;
};

struct TemporalReport {
    std::vector<TemporalResult> results;
    std::vector<std::string> train_tehsils, test_tehsils;
    std::map<TransformKind, AlignmentTransform> transforms;

    std::optional<double> r2(const std::string& outcome, TransformKind kind) const;
};

// Village predictions on round-1 imagery from the round-2-trained model,
// as tehsil-level vectors (kTehsilNames order).
struct TemporalInputs {
    std::map<std::string, std::vector<double>> village_predictions;
    std::vector<ingest::VillageRecord> records;
    std::map<std::string, ingest::TehsilVector10> truth_early;  // 2001
    std::map<std::string, ingest::TehsilVector10> truth_late;   // 2011
};

// Splits tehsils 8:2 with the seed, fits each transform on training tehsils
// (early truth -> late truth) and scores aggregated predictions against the
// transformed early truth on test tehsils. Throws ProtocolError when a year
// is missing.
TemporalReport temporal_eval(const TemporalInputs& in, std::span<const TransformKind> kinds, std::uint64_t seed);

// Best transform by mean R2 over outcomes; the untransformed kind never takes
// part in selection.
TransformKind select_transform(const TemporalReport& report);

void write_temporal_report(const std::filesystem::path& path, const TemporalReport& report);

}  // namespace geoproxy::align
