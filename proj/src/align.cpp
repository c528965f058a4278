#include "geoproxy/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/rng.hpp"
#include "geoproxy/evaluation.hpp"

namespace geoproxy::align {

namespace {

std::size_t check_samples(const Samples& s, const char* what, std::size_t min_n) {
    if (s.size() < std::max<std::size_t>(min_n, 1)) throw InputError(std::string(what) + ": need at least " + std::to_string(std::max<std::size_t>(min_n, 1)) + " samples");
    const std::size_t dim = s.front().size();
    if (dim == 0) throw InputError(std::string(what) + ": samples have no outcomes");
    for (const auto& row : s)
        if (row.size() != dim) throw InputError(std::string(what) + ": ragged sample matrix");
    return dim;
}

std::vector<double> column(const Samples& s, std::size_t k) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i][k];
    return out;
}

void moments(std::span<const double> v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size()));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Eigen::MatrixXd to_matrix(const Samples& s) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(s.front().size()));
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t k = 0; k < s[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = s[i][k];
    return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
    const Eigen::MatrixXd c = x.rowwise() - mean.transpose();
    return (c.transpose() * c) / static_cast<double>(x.rows());
}

// Symmetric matrix function via eigendecomposition.
Eigen::MatrixXd sym_power(const Eigen::MatrixXd& m, double p, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericalError(std::string(what) + ": eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff())) throw NumericalError(std::string(what) + ": matrix is not positive semidefinite");
        const double v = std::max(ev(i), 0.0);
        if (p < 0 && v == 0.0) throw NumericalError(std::string(what) + ": singular matrix");
        ev(i) = std::pow(v, p);
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double map_histogram(const HistogramMap& h, double y) {
    if (h.constant) return h.target_median;
    const int bins = static_cast<int>(h.edges.size()) - 1;
    if (y < h.knots.front()) return h.edges.front();
    // Last knot not greater than y.
    const auto it = std::upper_bound(h.knots.begin(), h.knots.end(), y);
    const int k = static_cast<int>(it - h.knots.begin()) - 1;
    if (k >= bins) return h.edges.back();
    const double x0 = h.knots[static_cast<std::size_t>(k)], x1 = h.knots[static_cast<std::size_t>(k) + 1];
    const double e0 = h.edges[static_cast<std::size_t>(k)], e1 = h.edges[static_cast<std::size_t>(k) + 1];
    const double v = e0 + (y - x0) / (x1 - x0) * (e1 - e0);
    return std::min(v, std::nextafter(e1, e0));
}

}  // namespace

std::string_view kind_name(TransformKind kind) {
    switch (kind) {
        case TransformKind::none: return "none";
        case TransformKind::simple: return "simple";
        case TransformKind::histogram: return "histogram";
        case TransformKind::linear_ot: return "linear-ot";
    }
    return "none";
}

TransformKind parse_kind(std::string_view name) {
    for (auto k : kAllKinds)
        if (kind_name(k) == name) return k;
    throw InputError("unknown transform '" + std::string(name) + "' (expected none, simple, histogram, linear-ot)");
}

int histogram_bin(std::span<const double> edges, double v) {
    int b = 0;
    for (std::size_t k = 1; k + 1 < edges.size(); ++k)
        if (v >= edges[k]) b = static_cast<int>(k);
    return b;
}

std::vector<double> pooled_edges(std::span<const double> a, std::span<const double> b, int bins) {
    double lo = a.front(), hi = a.front();
    for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
    std::vector<double> e(static_cast<std::size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k) e[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / bins;
    e.back() = hi;
    return e;
}

std::vector<double> AlignmentTransform::apply(std::span<const double> y) const {
    if (y.size() != dim) throw InputError("transform expects " + std::to_string(dim) + " outcomes, got " + std::to_string(y.size()));
    std::vector<double> out(y.begin(), y.end());
    switch (kind) {
        case TransformKind::none: break;
        case TransformKind::simple:
            for (std::size_t k = 0; k < dim; ++k)
                out[k] = source_std[k] > 0.0 ? target_mean[k] + target_std[k] * (y[k] - source_mean[k]) / source_std[k] : target_mean[k];
            break;
        case TransformKind::histogram:
            for (std::size_t k = 0; k < dim; ++k) out[k] = map_histogram(histograms[k], y[k]);
            break;
        case TransformKind::linear_ot:
            for (std::size_t r = 0; r < dim; ++r) {
                double s = b[r];
                for (std::size_t c = 0; c < dim; ++c) s += A[r * dim + c] * y[c];
                out[r] = s;
            }
            break;
    }
    return out;
}

Samples AlignmentTransform::apply(const Samples& ys) const {
    Samples out;
    out.reserve(ys.size());
    for (const auto& y : ys) out.push_back(apply(y));
    return out;
}

AlignmentTransform fit_none(std::size_t dim) {
    AlignmentTransform t;
    t.dim = dim;
    return t;
}

AlignmentTransform fit_simple(const Samples& source, const Samples& target) {
    const std::size_t dim = check_samples(source, "fit_simple source", 2);
    if (check_samples(target, "fit_simple target", 2) != dim) throw InputError("fit_simple: outcome counts differ");
    AlignmentTransform t;
    t.kind = TransformKind::simple;
    t.dim = dim;
    t.source_mean.resize(dim), t.source_std.resize(dim), t.target_mean.resize(dim), t.target_std.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
        const auto s = column(source, k), g = column(target, k);
        moments(s, t.source_mean[k], t.source_std[k]);
        moments(g, t.target_mean[k], t.target_std[k]);
    }
    return t;
}

AlignmentTransform fit_histogram(const Samples& source, const Samples& target, int bins) {
    if (bins < 1) throw InputError("fit_histogram: bins must be positive");
    const auto nb = static_cast<std::size_t>(bins);
    const std::size_t dim = check_samples(source, "fit_histogram source", nb);
    if (check_samples(target, "fit_histogram target", nb) != dim) throw InputError("fit_histogram: outcome counts differ");
    AlignmentTransform t;
    t.kind = TransformKind::histogram;
    t.dim = dim;
    const std::size_t ns = source.size(), nt = target.size();
    for (std::size_t k = 0; k < dim; ++k) {
        auto s = column(source, k);
        const auto g = column(target, k);
        std::sort(s.begin(), s.end());
        HistogramMap h;
        h.edges = pooled_edges(s, g, bins);
        h.target_median = median(g);
        if (s.front() == s.back()) {
            h.constant = true;
            h.knots.assign(nb + 1, s.front());
            t.histograms.push_back(std::move(h));
            continue;
        }
        std::vector<std::size_t> below(nb + 1, 0);  // target samples in bins < k
        for (double v : g) {
            const auto bin = static_cast<std::size_t>(histogram_bin(h.edges, v));
            for (std::size_t kk = bin + 1; kk <= nb; ++kk) ++below[kk];
        }
        const double w = h.edges.back() - h.edges.front();
        h.knots.resize(nb + 1);
        for (std::size_t kk = 0; kk <= nb; ++kk) {
            const std::size_t m = (2 * ns * below[kk] + nt) / (2 * nt);
            if (m == 0)
                h.knots[kk] = h.edges.front() - w;
            else if (m >= ns)
                h.knots[kk] = s.back() + w;
            else
                h.knots[kk] = 0.5 * (s[m - 1] + s[m]);
        }
        t.histograms.push_back(std::move(h));
    }
    return t;
}

AlignmentTransform fit_linear_ot(const Samples& source, const Samples& target) {
    const std::size_t dim = check_samples(source, "fit_linear_ot source", 1);
    if (check_samples(target, "fit_linear_ot target", 1) != dim) throw InputError("fit_linear_ot: outcome counts differ");
    if (source.size() < dim + 1 || target.size() < dim + 1)
        throw InputError("fit_linear_ot: need at least dim + 1 samples on each side");
    const Eigen::MatrixXd xs = to_matrix(source), xt = to_matrix(target);
    const Eigen::VectorXd mu_s = xs.colwise().mean().transpose(), mu_t = xt.colwise().mean().transpose();
    Eigen::MatrixXd cs = covariance(xs, mu_s);
    const Eigen::MatrixXd ct = covariance(xt, mu_t);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cs, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() <= 1e-12 * scale) {
        log::warn("align", "source covariance is near singular; adding ridge 1e-8");
        cs += 1e-8 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    }
    const Eigen::MatrixXd s_half = sym_power(cs, 0.5, "fit_linear_ot");
    const Eigen::MatrixXd s_inv_half = sym_power(cs, -0.5, "fit_linear_ot");
    Eigen::MatrixXd middle = s_half * ct * s_half;
    middle = 0.5 * (middle + middle.transpose());
    Eigen::MatrixXd a = s_inv_half * sym_power(middle, 0.5, "fit_linear_ot") * s_inv_half;
    a = 0.5 * (a + a.transpose());
    const Eigen::VectorXd b = mu_t - a * mu_s;
    if (!a.allFinite() || !b.allFinite()) throw NumericalError("fit_linear_ot: non-finite transport map");
    AlignmentTransform t;
    t.kind = TransformKind::linear_ot;
    t.dim = dim;
    t.A.resize(dim * dim);
    t.b.resize(dim);
    for (std::size_t r = 0; r < dim; ++r) {
        t.b[r] = b(static_cast<Eigen::Index>(r));
        for (std::size_t c = 0; c < dim; ++c) t.A[r * dim + c] = a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    return t;
}

AlignmentTransform fit(TransformKind kind, const Samples& source, const Samples& target) {
    switch (kind) {
        case TransformKind::none: return fit_none(check_samples(source, "fit", 1));
        case TransformKind::simple: return fit_simple(source, target);
        case TransformKind::histogram: return fit_histogram(source, target);
        case TransformKind::linear_ot: return fit_linear_ot(source, target);
    }
    throw InputError("unknown transform kind");
}

namespace {

CheckpointEntry entry(std::string name, std::vector<std::uint32_t> shape, std::span<const double> values) {
    CheckpointEntry e{std::move(name), std::move(shape), {}};
    e.data.reserve(values.size());
    for (double v : values) e.data.push_back(static_cast<float>(v));
    return e;
}

std::vector<double> values(const Checkpoint& ck, const std::string& name, std::size_t expected) {
    const auto& e = ck.entry(name);
    if (e.data.size() != expected) throw SchemaError("transform entry '" + name + "' has the wrong size");
    return {e.data.begin(), e.data.end()};
}

}  // namespace

Checkpoint to_checkpoint(const AlignmentTransform& t) {
    Checkpoint ck;
    ck.header["format"] = "alignment-transform";
    ck.header["kind"] = std::string(kind_name(t.kind));
    ck.header["dim"] = t.dim;
    const auto d = static_cast<std::uint32_t>(t.dim);
    switch (t.kind) {
        case TransformKind::none: break;
        case TransformKind::simple:
            ck.entries.push_back(entry("source_mean", {d}, t.source_mean));
            ck.entries.push_back(entry("source_std", {d}, t.source_std));
            ck.entries.push_back(entry("target_mean", {d}, t.target_mean));
            ck.entries.push_back(entry("target_std", {d}, t.target_std));
            break;
        case TransformKind::histogram: {
            const auto nk = static_cast<std::uint32_t>(t.histograms.empty() ? 0 : t.histograms[0].knots.size());
            ck.header["bins"] = nk == 0 ? 0 : nk - 1;
            std::vector<double> knots, edges, constant, med;
            for (const auto& h : t.histograms) {
                knots.insert(knots.end(), h.knots.begin(), h.knots.end());
                edges.insert(edges.end(), h.edges.begin(), h.edges.end());
                constant.push_back(h.constant ? 1.0 : 0.0);
                med.push_back(h.target_median);
            }
            ck.entries.push_back(entry("knots", {d, nk}, knots));
            ck.entries.push_back(entry("edges", {d, nk}, edges));
            ck.entries.push_back(entry("constant", {d}, constant));
            ck.entries.push_back(entry("target_median", {d}, med));
            break;
        }
        case TransformKind::linear_ot:
            ck.entries.push_back(entry("A", {d, d}, t.A));
            ck.entries.push_back(entry("b", {d}, t.b));
            break;
    }
    return ck;
}

AlignmentTransform from_checkpoint(const Checkpoint& ck) {
    if (ck.header.value("format", std::string()) != "alignment-transform") throw SchemaError("checkpoint does not hold an alignment transform");
    AlignmentTransform t;
    t.kind = parse_kind(ck.header.at("kind").get<std::string>());
    t.dim = ck.header.at("dim").get<std::size_t>();
    switch (t.kind) {
        case TransformKind::none: break;
        case TransformKind::simple:
            t.source_mean = values(ck, "source_mean", t.dim);
            t.source_std = values(ck, "source_std", t.dim);
            t.target_mean = values(ck, "target_mean", t.dim);
            t.target_std = values(ck, "target_std", t.dim);
            break;
        case TransformKind::histogram: {
            const std::size_t nk = ck.header.at("bins").get<std::size_t>() + 1;
            const auto knots = values(ck, "knots", t.dim * nk), edges = values(ck, "edges", t.dim * nk);
            const auto constant = values(ck, "constant", t.dim), med = values(ck, "target_median", t.dim);
            for (std::size_t k = 0; k < t.dim; ++k) {
                HistogramMap h;
                h.knots.assign(knots.begin() + static_cast<std::ptrdiff_t>(k * nk), knots.begin() + static_cast<std::ptrdiff_t>((k + 1) * nk));
                h.edges.assign(edges.begin() + static_cast<std::ptrdiff_t>(k * nk), edges.begin() + static_cast<std::ptrdiff_t>((k + 1) * nk));
                h.constant = constant[k] != 0.0;
                h.target_median = med[k];
                t.histograms.push_back(std::move(h));
            }
            break;
        }
        case TransformKind::linear_ot:
            t.A = values(ck, "A", t.dim * t.dim);
            t.b = values(ck, "b", t.dim);
            break;
    }
    return t;
}

std::vector<TehsilOutcome> tehsil_aggregate(const std::map<std::string, std::vector<double>>& village_predictions,
                                            std::span<const ingest::VillageRecord> records, int year) {
    std::map<std::string, std::vector<const ingest::VillageRecord*>> members;
    for (const auto& r : records) {
        if (r.tehsil_id.empty()) throw InputError("village " + r.village_id + " has no tehsil");
        if (!(r.population >= 0.0)) throw InputError("village " + r.village_id + " has an invalid population");
        if (village_predictions.count(r.village_id)) members[r.tehsil_id].push_back(&r);
    }
    std::vector<TehsilOutcome> out;
    for (const auto& [tehsil, villages] : members) {
        double total = 0.0;
        for (const auto* v : villages) total += v->population;
        const bool uniform = !(total > 0.0);
        if (uniform) log::warn("align", "tehsil=", tehsil, " has zero total population; using uniform weights");
        TehsilOutcome t;
        t.tehsil_id = tehsil;
        t.year = year;
        t.population = total;
        for (const auto* v : villages) {
            const auto& p = village_predictions.at(v->village_id);
            if (t.prediction.empty()) t.prediction.assign(p.size(), 0.0);
            if (p.size() != t.prediction.size()) throw InputError("village predictions have inconsistent lengths");
            const double w = uniform ? 1.0 / static_cast<double>(villages.size()) : v->population / total;
            for (std::size_t k = 0; k < p.size(); ++k) t.prediction[k] += w * p[k];
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::optional<double> TemporalReport::r2(const std::string& outcome, TransformKind kind) const {
    for (const auto& r : results)
        if (r.outcome == outcome && r.kind == kind) return r.r2;
    return std::nullopt;
}

TemporalReport temporal_eval(const TemporalInputs& in, std::span<const TransformKind> kinds, std::uint64_t seed) {
    if (in.truth_early.empty()) throw ProtocolError("temporal evaluation needs round-1 (2001) tehsil truth");
    if (in.truth_late.empty()) throw ProtocolError("temporal evaluation needs round-2 (2011) tehsil truth");
    if (in.village_predictions.empty()) throw ProtocolError("temporal evaluation needs round-1 village predictions");
    const auto aggregated = tehsil_aggregate(in.village_predictions, in.records, in.truth_early.begin()->second.year);
    std::map<std::string, const std::vector<double>*> pred;
    for (const auto& t : aggregated) pred[t.tehsil_id] = &t.prediction;
    std::vector<std::string> ids;
    for (const auto& [id, v] : in.truth_early)
        if (in.truth_late.count(id) && pred.count(id)) ids.push_back(id);
    if (ids.size() < 5) throw ProtocolError("temporal evaluation needs at least 5 tehsils with both rounds and predictions");
    Rng rng(derive_seed(seed, {0x7e4511}));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(ids.size())));
    TemporalReport report;
    report.train_tehsils.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    report.test_tehsils.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(report.train_tehsils.begin(), report.train_tehsils.end());
    std::sort(report.test_tehsils.begin(), report.test_tehsils.end());
    auto as_samples = [](const std::map<std::string, ingest::TehsilVector10>& m, const std::vector<std::string>& keys) {
        Samples s;
        for (const auto& k : keys) {
            const auto& v = m.at(k).values;
            s.emplace_back(v.begin(), v.end());
        }
        return s;
    };
    const Samples source = as_samples(in.truth_early, report.train_tehsils);
    const Samples target = as_samples(in.truth_late, report.train_tehsils);
    const Samples test_truth = as_samples(in.truth_early, report.test_tehsils);
    for (auto kind : kinds) {
        const AlignmentTransform g = fit(kind, source, target);
        const Samples transformed = g.apply(test_truth);
        for (std::size_t k = 0; k < ingest::kTehsilCount; ++k) {
            std::vector<double> p, y;
            for (std::size_t i = 0; i < report.test_tehsils.size(); ++i) {
                const auto& pv = *pred.at(report.test_tehsils[i]);
                if (pv.size() != ingest::kTehsilCount) throw InputError("village predictions must have 10 tehsil outcomes");
                p.push_back(pv[k]);
                y.push_back(transformed[i][k]);
            }
            report.results.push_back({std::string(ingest::kTehsilNames[k]), kind, eval::r_squared(p, y), p.size()});
        }
        report.transforms[kind] = g;
    }
    log::info("temporal", "tehsils train=", report.train_tehsils.size(), " test=", report.test_tehsils.size());
    return report;
}

TransformKind select_transform(const TemporalReport& report) {
    std::map<TransformKind, std::pair<double, std::size_t>> sums;
    for (const auto& r : report.results) {
        if (r.kind == TransformKind::none || !r.r2) continue;
        sums[r.kind].first += *r.r2;
        ++sums[r.kind].second;
    }
    if (sums.empty()) throw ProtocolError("no transformed results to select from");
    auto best = sums.begin();
    for (auto it = sums.begin(); it != sums.end(); ++it)
        if (it->second.first / it->second.second > best->second.first / best->second.second) best = it;
    return best->first;
}

void write_temporal_report(const std::filesystem::path& path, const TemporalReport& report) {
    csv::Table t;
    t.header = {"outcome", "transform", "r2", "n_tehsils"};
    for (const auto& r : report.results)
        t.rows.push_back({r.outcome, std::string(kind_name(r.kind)), r.r2 ? csv::format_number(*r.r2) : "NA", std::to_string(r.n_tehsils)});
    csv::write(path, t);
}

}  // namespace geoproxy::align
