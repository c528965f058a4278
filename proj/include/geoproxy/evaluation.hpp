#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geoproxy::eval {

// 1 - SS_res / SS_tot. nullopt when truth is constant (not evaluated).
// Throws InputError on length mismatch or fewer than two pairs.
std::optional<double> r_squared(std::span<const double> pred, std::span<const double> truth);

enum class Level { village, tehsil, district };
std::string_view level_name(Level level);
Level parse_level(std::string_view name);

struct OutcomeReport {
    std::string outcome;
    std::optional<double> r2;  // nullopt: not evaluated
    std::size_t n = 0;
    Level level = Level::village;
    std::string path;          // e.g. "asset", "nightlight", "direct"

    bool evaluated() const { return r2.has_value(); }
};

struct R2Histogram {
    std::vector<double> thresholds;  // ascending bin boundaries
    std::vector<std::size_t> counts; // thresholds.size() + 1 bins: (-inf,t0), [t0,t1), ..., [tk,inf)
    std::size_t at_least_zero = 0;
    std::size_t at_least_half = 0;
    std::size_t evaluated = 0;

    // Outcomes with r2 >= t.
    std::size_t count_at_least(double t) const;
};

// Unevaluated reports are skipped. Thresholds are sorted internally.
R2Histogram r2_histogram(std::span<const OutcomeReport> reports, std::vector<double> thresholds);
R2Histogram r2_histogram(std::span<const OutcomeReport> reports);  // default thresholds -0.5..0.9 step 0.1

struct PathRow {
    std::string outcome;
    double r2_asset = 0.0;
    double r2_nightlight = 0.0;
    double delta = 0.0;  // asset - nightlight
};

struct PathComparison {
    std::vector<PathRow> rows;
    double mean_delta = 0.0;
    double mean_asset = 0.0;
    double mean_nightlight = 0.0;
};

// Pairs outcomes evaluated on both sides; mismatched outcome sets are aligned
// on the intersection (logged).
PathComparison compare_paths(std::span<const OutcomeReport> asset, std::span<const OutcomeReport> nightlight);

// CSV with header outcome,r2,n,level,path; unevaluated r2 written as NA.
void write_reports(const std::filesystem::path& path, std::span<const OutcomeReport> reports);
std::vector<OutcomeReport> read_reports(const std::filesystem::path& path);
void write_comparison(const std::filesystem::path& path, const PathComparison& cmp);

// Self-contained SVG charts.
std::string svg_bar_chart(std::span<const OutcomeReport> reports, const std::string& title);
std::string svg_histogram(const R2Histogram& hist, const std::string& title);

}  // namespace geoproxy::eval
