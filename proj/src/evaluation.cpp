#include "geoproxy/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/raster_io.hpp"

namespace geoproxy::eval {

std::optional<double> r_squared(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw InputError("r_squared: prediction and truth lengths differ");
    if (truth.size() < 2) throw InputError("r_squared: need at least two pairs");
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    }
    if (!(ss_tot > 0.0)) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

std::string_view level_name(Level level) {
    switch (level) {
        case Level::village: return "village";
        case Level::tehsil: return "tehsil";
        case Level::district: return "district";
    }
    return "village";
}

Level parse_level(std::string_view name) {
    if (name == "village") return Level::village;
    if (name == "tehsil") return Level::tehsil;
    if (name == "district") return Level::district;
    throw SchemaError("unknown level '" + std::string(name) + "'");
}

std::size_t R2Histogram::count_at_least(double t) const {
    // Exact only for thresholds that are bin boundaries.
    std::size_t n = 0;
    for (std::size_t b = 0; b < thresholds.size(); ++b)
        if (thresholds[b] >= t) n += counts[b + 1];
    return n;
}

R2Histogram r2_histogram(std::span<const OutcomeReport> reports, std::vector<double> thresholds) {
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    R2Histogram h;
    h.thresholds = thresholds;
    h.counts.assign(thresholds.size() + 1, 0);
    for (const auto& r : reports) {
        if (!r.r2) continue;
        const double v = *r.r2;
        const auto bin = static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin());
        ++h.counts[bin];
        ++h.evaluated;
        if (v >= 0.0) ++h.at_least_zero;
        if (v >= 0.5) ++h.at_least_half;
    }
    return h;
}

R2Histogram r2_histogram(std::span<const OutcomeReport> reports) {
    std::vector<double> t;
    for (int k = -5; k <= 9; ++k) t.push_back(k / 10.0);
    return r2_histogram(reports, t);
}

PathComparison compare_paths(std::span<const OutcomeReport> asset, std::span<const OutcomeReport> nightlight) {
    std::map<std::string, double> night;
    for (const auto& r : nightlight)
        if (r.r2) night[r.outcome] = *r.r2;
    PathComparison out;
    std::size_t unmatched = 0;
    for (const auto& r : asset) {
        const auto it = night.find(r.outcome);
        if (!r.r2 || it == night.end()) {
            ++unmatched;
            continue;
        }
        out.rows.push_back({r.outcome, *r.r2, it->second, *r.r2 - it->second});
    }
    const std::size_t evaluated_night = night.size();
    if (unmatched > 0 || evaluated_night != out.rows.size())
        log::warn("evaluate", "outcome sets differ; compared ", out.rows.size(), " outcomes on the intersection");
    for (const auto& row : out.rows) {
        out.mean_delta += row.delta;
        out.mean_asset += row.r2_asset;
        out.mean_nightlight += row.r2_nightlight;
    }
    if (!out.rows.empty()) {
        const double n = static_cast<double>(out.rows.size());
        out.mean_delta /= n;
        out.mean_asset /= n;
        out.mean_nightlight /= n;
    }
    return out;
}

void write_reports(const std::filesystem::path& path, std::span<const OutcomeReport> reports) {
    csv::Table t;
    t.header = {"outcome", "r2", "n", "level", "path"};
    for (const auto& r : reports)
        t.rows.push_back({r.outcome, r.r2 ? csv::format_number(*r.r2) : "NA", std::to_string(r.n),
                          std::string(level_name(r.level)), r.path});
    csv::write(path, t);
}

std::vector<OutcomeReport> read_reports(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    const auto c_outcome = t.column("outcome"), c_r2 = t.column("r2"), c_n = t.column("n"), c_level = t.column("level"),
               c_path = t.column("path");
    std::vector<OutcomeReport> out;
    for (const auto& row : t.rows) {
        OutcomeReport r;
        r.outcome = row.at(c_outcome);
        if (!csv::is_absent(row.at(c_r2))) r.r2 = csv::parse_number(row.at(c_r2));
        r.n = static_cast<std::size_t>(csv::parse_number(row.at(c_n)));
        r.level = parse_level(row.at(c_level));
        r.path = row.at(c_path);
        out.push_back(std::move(r));
    }
    return out;
}

void write_comparison(const std::filesystem::path& path, const PathComparison& cmp) {
    csv::Table t;
    t.header = {"outcome", "r2_asset", "r2_nightlight", "delta"};
    for (const auto& r : cmp.rows)
        t.rows.push_back({r.outcome, csv::format_number(r.r2_asset), csv::format_number(r.r2_nightlight), csv::format_number(r.delta)});
    t.rows.push_back({"mean", csv::format_number(cmp.mean_asset), csv::format_number(cmp.mean_nightlight), csv::format_number(cmp.mean_delta)});
    csv::write(path, t);
}

namespace {

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fixed(double v, int digits = 2) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

}  // namespace

std::string svg_bar_chart(std::span<const OutcomeReport> reports, const std::string& title) {
    const double bar_h = 18, label_w = 260, plot_w = 400, top = 40;
    const double height = top + bar_h * static_cast<double>(reports.size()) + 40;
    double lo = 0.0, hi = 1.0;
    for (const auto& r : reports)
        if (r.r2) lo = std::min(lo, std::max(*r.r2, -1.0));
    const auto x_of = [&](double v) { return label_w + (std::clamp(v, lo, hi) - lo) / (hi - lo) * plot_w; };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label_w + plot_w + 80 << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
    os << "<line x1=\"" << x_of(0) << "\" y1=\"" << top - 5 << "\" x2=\"" << x_of(0) << "\" y2=\"" << height - 35
       << "\" stroke=\"#333\"/>\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const double y = top + bar_h * static_cast<double>(i);
        os << "<text x=\"" << label_w - 6 << "\" y=\"" << y + 12 << "\" text-anchor=\"end\">" << escape_xml(r.outcome)
           << "</text>\n";
        if (!r.r2) {
            os << "<text x=\"" << x_of(0) + 4 << "\" y=\"" << y + 12 << "\" fill=\"#888\">not evaluated</text>\n";
            continue;
        }
        const double x0 = std::min(x_of(0), x_of(*r.r2)), x1 = std::max(x_of(0), x_of(*r.r2));
        os << "<rect x=\"" << x0 << "\" y=\"" << y + 2 << "\" width=\"" << x1 - x0 << "\" height=\"" << bar_h - 4
           << "\" fill=\"" << (*r.r2 >= 0 ? "#3b6ea5" : "#b5473a") << "\"/>\n";
        os << "<text x=\"" << x1 + 4 << "\" y=\"" << y + 12 << "\">" << fixed(*r.r2) << "</text>\n";
    }
    os << "<text x=\"" << x_of(lo) << "\" y=\"" << height - 20 << "\">" << fixed(lo) << "</text>\n";
    os << "<text x=\"" << x_of(hi) << "\" y=\"" << height - 20 << "\" text-anchor=\"end\">" << fixed(hi) << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string svg_histogram(const R2Histogram& hist, const std::string& title) {
    const double w = 36, plot_h = 200, left = 40, top = 40;
    std::size_t max_count = 1;
    for (auto c : hist.counts) max_count = std::max(max_count, c);
    std::ostringstream os;
    const double width = left + w * static_cast<double>(hist.counts.size()) + 40;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + plot_h + 60
       << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        const double h = plot_h * static_cast<double>(hist.counts[b]) / static_cast<double>(max_count);
        const double x = left + w * static_cast<double>(b);
        os << "<rect x=\"" << x + 2 << "\" y=\"" << top + plot_h - h << "\" width=\"" << w - 4 << "\" height=\"" << h
           << "\" fill=\"#3b6ea5\"/>\n";
        os << "<text x=\"" << x + w / 2 << "\" y=\"" << top + plot_h - h - 3 << "\" text-anchor=\"middle\">"
           << hist.counts[b] << "</text>\n";
        const std::string label = b == 0 ? "<" + fixed(hist.thresholds.empty() ? 0.0 : hist.thresholds[0], 1)
                                         : fixed(hist.thresholds[b - 1], 1);
        os << "<text x=\"" << x + w / 2 << "\" y=\"" << top + plot_h + 14 << "\" text-anchor=\"middle\">"
           << escape_xml(label) << "</text>\n";
    }
    os << "<text x=\"" << left << "\" y=\"" << top + plot_h + 40 << "\">evaluated " << hist.evaluated << ", R2 &gt;= 0: "
       << hist.at_least_zero << ", R2 &gt;= 0.5: " << hist.at_least_half << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace geoproxy::eval
