#include "geoproxy/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "geoproxy/checkpoint.hpp"
#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/evaluation.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/nn.hpp"
#include "geoproxy/rng.hpp"

namespace geoproxy::transfer {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void fit_scaling(const std::vector<std::vector<double>>& data, std::span<const std::size_t> rows, std::vector<double>& mean,
                 std::vector<double>& sd, bool skip_nan) {
    const std::size_t d = data.front().size();
    mean.assign(d, 0.0);
    sd.assign(d, 0.0);
    std::vector<double> count(d, 0.0);
    for (auto r : rows)
        for (std::size_t k = 0; k < d; ++k) {
            const double v = data[r][k];
            if (skip_nan && std::isnan(v)) continue;
            mean[k] += v;
            count[k] += 1.0;
        }
    for (std::size_t k = 0; k < d; ++k) mean[k] = count[k] > 0 ? mean[k] / count[k] : 0.0;
    for (auto r : rows)
        for (std::size_t k = 0; k < d; ++k) {
            const double v = data[r][k];
            if (skip_nan && std::isnan(v)) continue;
            sd[k] += (v - mean[k]) * (v - mean[k]);
        }
    for (std::size_t k = 0; k < d; ++k) {
        sd[k] = count[k] > 0 ? std::sqrt(sd[k] / count[k]) : 0.0;
        if (sd[k] < 1e-12) sd[k] = 0.0;
    }
}

// Embedding units that fire on a handful of training rows have a tiny spread,
// and standardizing by it blows held-out rows up by orders of magnitude. Such
// units are treated as constant.
inline constexpr double kMinRelativeFeatureStd = 1e-3;

void fit_feature_scaling(const std::vector<std::vector<double>>& data, std::span<const std::size_t> rows, std::vector<double>& mean,
                         std::vector<double>& sd) {
    fit_scaling(data, rows, mean, sd, false);
    const double largest = sd.empty() ? 0.0 : *std::max_element(sd.begin(), sd.end());
    for (auto& s : sd)
        if (s < kMinRelativeFeatureStd * largest) s = 0.0;
}

double scale(double v, double m, double s) { return s > 0.0 ? (v - m) / s : 0.0; }

// Flat parameter vector: W1 (rows1 x in), b1, then W2 (O x hidden), b2 for the two-layer head.
struct Layout {
    HeadKind kind;
    int in = 0, hidden = 0, out = 0;
    int rows1() const { return kind == HeadKind::single_layer ? out : hidden; }
    std::size_t w1() const { return 0; }
    std::size_t b1() const { return static_cast<std::size_t>(rows1()) * in; }
    std::size_t w2() const { return b1() + static_cast<std::size_t>(rows1()); }
    std::size_t b2() const { return w2() + (kind == HeadKind::two_layer ? static_cast<std::size_t>(out) * hidden : 0); }
    std::size_t size() const { return b2() + (kind == HeadKind::two_layer ? static_cast<std::size_t>(out) : 0); }
};

Layout layout_of(const HeadModel& m) { return {m.kind, m.input_dim, m.hidden, m.output_dim}; }

Eigen::VectorXd pack(const HeadModel& m) {
    const Layout L = layout_of(m);
    Eigen::VectorXd t(static_cast<Eigen::Index>(L.size()));
    std::copy(m.W1.begin(), m.W1.end(), t.data() + L.w1());
    std::copy(m.b1.begin(), m.b1.end(), t.data() + L.b1());
    if (m.kind == HeadKind::two_layer) {
        std::copy(m.W2.begin(), m.W2.end(), t.data() + L.w2());
        std::copy(m.b2.begin(), m.b2.end(), t.data() + L.b2());
    }
    return t;
}

void unpack(const Eigen::VectorXd& t, HeadModel& m) {
    const Layout L = layout_of(m);
    m.W1.assign(t.data() + L.w1(), t.data() + L.b1());
    m.b1.assign(t.data() + L.b1(), t.data() + L.w2());
    if (m.kind == HeadKind::two_layer) {
        m.W2.assign(t.data() + L.w2(), t.data() + L.b2());
        m.b2.assign(t.data() + L.b2(), t.data() + L.size());
    }
}

// Forward on standardized rows X (B x in); returns outputs in model units.
Mat forward_batch(const Layout& L, const Eigen::VectorXd& t, const Mat& X, Mat* hidden_out = nullptr) {
    Eigen::Map<const RowMat> W1(t.data() + L.w1(), L.rows1(), L.in);
    Eigen::Map<const Eigen::VectorXd> b1(t.data() + L.b1(), L.rows1());
    Mat Z = X * W1.transpose();
    Z.rowwise() += b1.transpose();
    Mat H = Z.cwiseMax(0.0);
    if (L.kind == HeadKind::single_layer) {
        if (hidden_out) *hidden_out = Z;
        return H;
    }
    Eigen::Map<const RowMat> W2(t.data() + L.w2(), L.out, L.hidden);
    Eigen::Map<const Eigen::VectorXd> b2(t.data() + L.b2(), L.out);
    Mat Y = H * W2.transpose();
    Y.rowwise() += b2.transpose();
    if (hidden_out) *hidden_out = H;
    return Y;
}

// Masked MSE and its gradient (weight decay on weights only).
double loss_grad(const Layout& L, const Eigen::VectorXd& t, const Mat& X, const Mat& Y, const Mat& M, double wd,
                 Eigen::VectorXd* grad) {
    Mat inner;
    const Mat P = forward_batch(L, t, X, &inner);
    const double count = std::max(M.sum(), 1.0);
    const Mat R = (P - Y).cwiseProduct(M);
    const double loss = R.squaredNorm() / count;
    if (!grad) return loss;
    grad->setZero(t.size());
    const Mat dP = 2.0 * R / count;
    Eigen::Map<const RowMat> W1(t.data() + L.w1(), L.rows1(), L.in);
    Eigen::Map<RowMat> gW1(grad->data() + L.w1(), L.rows1(), L.in);
    Eigen::Map<Eigen::VectorXd> gb1(grad->data() + L.b1(), L.rows1());
    if (L.kind == HeadKind::single_layer) {
        const Mat dZ = dP.cwiseProduct((inner.array() > 0.0).cast<double>().matrix());
        gW1 = dZ.transpose() * X + wd * Mat(W1);
        gb1 = dZ.colwise().sum().transpose();
        return loss;
    }
    Eigen::Map<const RowMat> W2(t.data() + L.w2(), L.out, L.hidden);
    Eigen::Map<RowMat> gW2(grad->data() + L.w2(), L.out, L.hidden);
    Eigen::Map<Eigen::VectorXd> gb2(grad->data() + L.b2(), L.out);
    gW2 = dP.transpose() * inner + wd * Mat(W2);
    gb2 = dP.colwise().sum().transpose();
    const Mat dH = dP * W2;
    const Mat dZ = dH.cwiseProduct((inner.array() > 0.0).cast<double>().matrix());
    gW1 = dZ.transpose() * X + wd * Mat(W1);
    gb1 = dZ.colwise().sum().transpose();
    return loss;
}

Mat rows_of(const Mat& A, std::span<const std::size_t> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = A.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

// Adam with minibatches and early stopping on the validation rows (when any).
int train_core(HeadModel& m, const Mat& X, const Mat& Y, const Mat& M, std::span<const std::size_t> train,
               std::span<const std::size_t> val, const HeadSpec& spec, std::uint64_t seed) {
    const Layout L = layout_of(m);
    Eigen::VectorXd t = pack(m);
    Eigen::VectorXd best = t, mom = Eigen::VectorXd::Zero(t.size()), vel = Eigen::VectorXd::Zero(t.size()), g;
    const Mat Xv = rows_of(X, val), Yv = rows_of(Y, val), Mv = rows_of(M, val);
    double best_val = val.empty() ? 0.0 : loss_grad(L, t, Xv, Yv, Mv, 0.0, nullptr);
    int since = 0, epochs = 0;
    std::int64_t step = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<std::size_t> order(train.begin(), train.end());
    const auto B = static_cast<std::size_t>(spec.batch_size);
    for (int epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        Rng rng(derive_seed(seed, {0x4ead, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s = 0; s < order.size(); s += B) {
            const std::span<const std::size_t> idx(order.data() + s, std::min(B, order.size() - s));
            const double loss = loss_grad(L, t, rows_of(X, idx), rows_of(Y, idx), rows_of(M, idx), spec.weight_decay, &g);
            if (!std::isfinite(loss)) throw NumericalError("non-finite head loss at epoch " + std::to_string(epoch));
            ++step;
            mom = b1 * mom + (1.0 - b1) * g;
            vel = b2 * vel + (1.0 - b2) * g.cwiseProduct(g);
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step)), c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            t.array() -= spec.learning_rate * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
        }
        epochs = epoch;
        if (val.empty()) continue;
        const double v = loss_grad(L, t, Xv, Yv, Mv, 0.0, nullptr);
        if (v < best_val) {
            best_val = v;
            best = t;
            since = 0;
        } else if (++since >= spec.patience) {
            break;
        }
    }
    unpack(val.empty() ? t : best, m);
    return epochs;
}

Mat feature_matrix(const HeadModel& m, const std::vector<std::vector<double>>& features) {
    Mat X(static_cast<Eigen::Index>(features.size()), m.input_dim);
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != static_cast<std::size_t>(m.input_dim)) throw InputError("head features have inconsistent dimensions");
        for (int k = 0; k < m.input_dim; ++k)
            X(static_cast<Eigen::Index>(i), k) = scale(features[i][static_cast<std::size_t>(k)], m.feature_mean[static_cast<std::size_t>(k)], m.feature_std[static_cast<std::size_t>(k)]);
    }
    return X;
}

void init_uniform(std::vector<double>& v, std::size_t n, double bound, Rng& rng) {
    v.resize(n);
    for (auto& x : v) x = uniform(rng, -bound, bound);
}

void init_output_layer(HeadModel& m, Rng& rng) {
    init_uniform(m.W2, static_cast<std::size_t>(m.output_dim) * static_cast<std::size_t>(m.hidden), 1.0 / std::sqrt(static_cast<double>(m.hidden)), rng);
    m.b2.assign(static_cast<std::size_t>(m.output_dim), 0.0);
}

// Two-layer fit on the given rows with an inner seeded 8:2 split for early
// stopping. Targets may hold NaN for absent values.
HeadModel fit_two_layer(const std::vector<std::vector<double>>& features, const std::vector<std::vector<double>>& targets,
                        std::span<const std::size_t> rows, const HeadSpec& spec, const HeadModel* warm, std::uint64_t seed) {
    HeadModel m;
    m.kind = HeadKind::two_layer;
    m.input_dim = static_cast<int>(features.front().size());
    m.output_dim = static_cast<int>(targets.front().size());
    Rng rng(derive_seed(seed, {0x1a7e}));
    if (warm) {
        if (warm->kind != HeadKind::two_layer || warm->input_dim != m.input_dim) throw InputError("warm start head does not match the features");
        m.hidden = warm->hidden;
        m.feature_mean = warm->feature_mean;
        m.feature_std = warm->feature_std;
        m.W1 = warm->W1;
        m.b1 = warm->b1;
    } else {
        m.hidden = spec.hidden;
        fit_feature_scaling(features, rows, m.feature_mean, m.feature_std);
        init_uniform(m.W1, static_cast<std::size_t>(m.hidden) * static_cast<std::size_t>(m.input_dim), std::sqrt(6.0 / m.input_dim), rng);
        m.b1.assign(static_cast<std::size_t>(m.hidden), 0.0);
    }
    init_output_layer(m, rng);
    fit_scaling(targets, rows, m.target_mean, m.target_std, true);
    const Mat X = feature_matrix(m, features);
    Mat Y = Mat::Zero(X.rows(), m.output_dim), M = Mat::Zero(X.rows(), m.output_dim);
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (int o = 0; o < m.output_dim; ++o) {
            const double v = targets[i][static_cast<std::size_t>(o)];
            if (std::isnan(v)) continue;
            const auto oo = static_cast<std::size_t>(o);
            Y(static_cast<Eigen::Index>(i), o) = m.target_std[oo] > 0.0 ? (v - m.target_mean[oo]) / m.target_std[oo] : 0.0;
            M(static_cast<Eigen::Index>(i), o) = 1.0;
        }
    std::vector<std::size_t> shuffled(rows.begin(), rows.end());
    Rng split_rng(derive_seed(seed, {0x5b17}));
    std::shuffle(shuffled.begin(), shuffled.end(), split_rng);
    std::size_t n_train = shuffled.size();
    if (shuffled.size() >= 5) n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(shuffled.size())));
    const std::span<const std::size_t> tr(shuffled.data(), n_train), va(shuffled.data() + n_train, shuffled.size() - n_train);
    train_core(m, X, Y, M, tr, va, spec, seed);
    return m;
}

std::vector<std::vector<double>> health_rows(const std::vector<std::string>& districts,
                                             const std::map<std::string, ingest::HealthVector93>& targets,
                                             const std::vector<int>& factors) {
    std::vector<std::vector<double>> out;
    for (const auto& d : districts) {
        const auto& hv = targets.at(d);
        std::vector<double> row;
        for (int f : factors) {
            const auto& v = hv.factors[static_cast<std::size_t>(f - 1)];
            row.push_back(v ? *v : kNaN);
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::map<std::string, int> assign_folds(const std::map<std::string, DistrictEmbedding>& embeddings, int folds, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& [id, e] : embeddings) ids.push_back(id);
    Rng rng(derive_seed(seed, {0xf01d}));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::map<std::string, int> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    return out;
}

struct SurveyData {
    std::vector<std::string> districts;
    std::vector<int> factors;
    std::vector<std::vector<double>> X, Y;
};

SurveyData survey_data(const std::map<std::string, DistrictEmbedding>& embeddings,
                       const std::map<std::string, ingest::HealthVector93>& targets) {
    SurveyData d;
    for (const auto& [id, e] : embeddings)
        if (targets.count(id)) d.districts.push_back(id);
    if (d.districts.size() < kMinSurveyDistricts)
        throw InputError("survey head needs at least " + std::to_string(kMinSurveyDistricts) + " districts with targets, got " +
                         std::to_string(d.districts.size()) + "; the split would be unstable");
    for (int f = 1; f <= ingest::kHealthFactorCount; ++f) {
        bool any = false;
        for (const auto& id : d.districts) any = any || targets.at(id).factors[static_cast<std::size_t>(f - 1)].has_value();
        if (any) d.factors.push_back(f);
    }
    if (d.factors.empty()) throw InputError("survey targets carry no factors");
    for (const auto& id : d.districts) d.X.push_back(embeddings.at(id).embedding);
    d.Y = health_rows(d.districts, targets, d.factors);
    return d;
}

std::vector<FactorResult> score_factors(const SurveyData& d, const std::vector<std::vector<double>>& oof) {
    std::vector<FactorResult> out;
    for (int f = 1; f <= ingest::kHealthFactorCount; ++f) {
        FactorResult r;
        r.factor = f;
        const auto it = std::find(d.factors.begin(), d.factors.end(), f);
        if (it != d.factors.end()) {
            const auto k = static_cast<std::size_t>(it - d.factors.begin());
            std::vector<double> p, y;
            for (std::size_t i = 0; i < d.districts.size(); ++i)
                if (!std::isnan(d.Y[i][k])) {
                    p.push_back(oof[i][k]);
                    y.push_back(d.Y[i][k]);
                }
            r.n_districts = y.size();
            if (y.size() >= 2) r.r2 = eval::r_squared(p, y);
        }
        out.push_back(r);
    }
    return out;
}

SurveyFit cross_validate(const SurveyData& d, const std::map<std::string, int>& fold_of, const HeadSpec& spec,
                         const std::vector<HeadModel>* warm_folds, const HeadModel* warm_all) {
    SurveyFit fit;
    fit.factors = d.factors;
    fit.fold_of = fold_of;
    std::vector<std::vector<double>> oof(d.districts.size());
    for (int k = 0; k < spec.folds; ++k) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < d.districts.size(); ++i) (fold_of.at(d.districts[i]) == k ? te : tr).push_back(i);
        const HeadModel* warm = warm_folds ? &warm_folds->at(static_cast<std::size_t>(k)) : nullptr;
        if (tr.empty()) throw InputError("survey fold " + std::to_string(k) + " has no training districts");
        HeadModel m = fit_two_layer(d.X, d.Y, tr, spec, warm, derive_seed(spec.seed, {0xf0, static_cast<std::uint64_t>(k)}));
        for (auto i : te) oof[i] = m.predict(d.X[i]);
        fit.fold_models.push_back(std::move(m));
    }
    std::vector<std::size_t> all(d.districts.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    fit.model = fit_two_layer(d.X, d.Y, all, spec, warm_all, derive_seed(spec.seed, {0xa11}));
    fit.results = score_factors(d, oof);
    log::info("transfer", "districts=", d.districts.size(), " factors=", d.factors.size(), " folds=", spec.folds);
    return fit;
}

}  // namespace

DistrictEmbedding district_embed(const std::string& district_id, std::span<const VillageEmbedding> villages) {
    if (villages.empty()) throw InputError("district " + district_id + " has no villages");
    const std::size_t dim = villages.front().embedding.size();
    double total = 0.0;
    for (const auto& v : villages) {
        if (v.embedding.size() != dim) throw InputError("district " + district_id + ": embeddings have differing dimensions");
        if (!(v.population >= 0.0)) throw InputError("district " + district_id + ": negative population");
        total += v.population;
    }
    const bool uniform_weights = !(total > 0.0);
    if (uniform_weights) log::warn("transfer", "district=", district_id, " has zero total population; using uniform weights");
    DistrictEmbedding out{district_id, std::vector<double>(dim, 0.0), total};
    for (const auto& v : villages) {
        const double w = uniform_weights ? 1.0 / static_cast<double>(villages.size()) : v.population / total;
        for (std::size_t k = 0; k < dim; ++k) out.embedding[k] += w * v.embedding[k];
    }
    return out;
}

std::map<std::string, DistrictEmbedding> district_embeddings(
    const std::map<std::string, std::vector<double>>& village_embeddings, std::span<const ingest::VillageRecord> records) {
    std::map<std::string, std::vector<VillageEmbedding>> groups;
    for (const auto& r : records) {
        const auto it = village_embeddings.find(r.village_id);
        if (it == village_embeddings.end()) continue;
        groups[r.district_id].push_back({it->second, r.population});
    }
    std::map<std::string, DistrictEmbedding> out;
    for (const auto& [id, villages] : groups) out.emplace(id, district_embed(id, villages));
    return out;
}

std::vector<double> HeadModel::predict(std::span<const double> features) const {
    if (features.size() != static_cast<std::size_t>(input_dim)) throw InputError("head expects " + std::to_string(input_dim) + " features");
    Eigen::VectorXd x(input_dim);
    for (int k = 0; k < input_dim; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        x(k) = scale(features[kk], feature_mean[kk], feature_std[kk]);
    }
    const int rows1 = kind == HeadKind::single_layer ? output_dim : hidden;
    Eigen::Map<const RowMat> W(W1.data(), rows1, input_dim);
    Eigen::VectorXd h = (W * x + Eigen::Map<const Eigen::VectorXd>(b1.data(), rows1)).cwiseMax(0.0);
    if (kind == HeadKind::single_layer) return {h.data(), h.data() + h.size()};
    Eigen::Map<const RowMat> V(W2.data(), output_dim, hidden);
    const Eigen::VectorXd y = V * h + Eigen::Map<const Eigen::VectorXd>(b2.data(), output_dim);
    std::vector<double> out(static_cast<std::size_t>(output_dim));
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = y(static_cast<Eigen::Index>(o)) * target_std[o] + target_mean[o];
    return out;
}

void HeadSpec::validate() const {
    if (!(learning_rate > 0.0)) throw InputError("head spec: learning rate must be positive");
    if (batch_size <= 0) throw InputError("head spec: batch size must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("head spec: train fraction must lie in (0, 1)");
    if (max_epochs < 0 || patience <= 0) throw InputError("head spec: invalid epoch settings");
    if (hidden <= 0) throw InputError("head spec: hidden width must be positive");
    if (folds < 2) throw InputError("head spec: need at least two folds");
    if (weight_decay < 0.0) throw InputError("head spec: weight decay must be nonnegative");
}

HeadFit fit_single_layer_head(const std::vector<std::vector<double>>& features,
                              const std::vector<std::vector<double>>& targets, const HeadSpec& spec,
                              std::span<const std::string> strata) {
    spec.validate();
    if (features.size() != targets.size()) throw InputError("head: feature and target counts differ");
    if (features.size() < 2) throw InputError("head: need at least two samples");
    for (const auto& t : targets)
        for (double v : t)
            if (!std::isfinite(v)) throw InputError("head: targets must be finite");
    std::vector<std::string> s(strata.begin(), strata.end());
    if (s.empty()) s.assign(features.size(), "all");
    const nn::Split split = nn::stratified_split(s, spec.train_fraction, spec.seed);
    if (split.val.empty()) throw InputError("head: validation split is empty");

    HeadFit fit;
    fit.train = split.train;
    fit.val = split.val;
    HeadModel& m = fit.model;
    m.kind = HeadKind::single_layer;
    m.input_dim = static_cast<int>(features.front().size());
    m.output_dim = static_cast<int>(targets.front().size());
    fit_feature_scaling(features, split.train, m.feature_mean, m.feature_std);
    std::vector<double> tmean, tsd;
    fit_scaling(targets, split.train, tmean, tsd, false);
    Rng rng(derive_seed(spec.seed, {0x51e}));
    init_uniform(m.W1, static_cast<std::size_t>(m.output_dim) * static_cast<std::size_t>(m.input_dim), 0.1 / std::sqrt(static_cast<double>(m.input_dim)), rng);
    m.b1 = tmean;
    const Mat X = feature_matrix(m, features);
    Mat Y(X.rows(), m.output_dim);
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (int o = 0; o < m.output_dim; ++o) Y(static_cast<Eigen::Index>(i), o) = targets[i][static_cast<std::size_t>(o)];
    const Mat M = Mat::Ones(X.rows(), m.output_dim);
    fit.epochs_run = train_core(m, X, Y, M, split.train, split.val, spec, spec.seed);

    fit.val_mse = 0.0;
    std::vector<std::vector<double>> p(static_cast<std::size_t>(m.output_dim)), y(static_cast<std::size_t>(m.output_dim));
    for (auto i : split.val) {
        const auto pred = m.predict(features[i]);
        for (std::size_t o = 0; o < pred.size(); ++o) {
            p[o].push_back(pred[o]);
            y[o].push_back(targets[i][o]);
            fit.val_mse += (pred[o] - targets[i][o]) * (pred[o] - targets[i][o]);
        }
    }
    fit.val_mse /= static_cast<double>(split.val.size() * static_cast<std::size_t>(m.output_dim));
    for (std::size_t o = 0; o < p.size(); ++o) fit.val_r2.push_back(p[o].size() >= 2 ? eval::r_squared(p[o], y[o]) : std::nullopt);
    return fit;
}

SurveyFit fit_survey_head(const std::map<std::string, DistrictEmbedding>& embeddings,
                          const std::map<std::string, ingest::HealthVector93>& targets, const HeadSpec& spec) {
    spec.validate();
    const SurveyData d = survey_data(embeddings, targets);
    return cross_validate(d, assign_folds(embeddings, spec.folds, spec.seed), spec, nullptr, nullptr);
}

HeadModel double_transfer(const HeadModel& head_nfhs4, const std::vector<std::vector<double>>& features,
                          const std::vector<std::vector<double>>& targets, const HeadSpec& spec) {
    spec.validate();
    if (features.size() != targets.size() || features.empty()) throw InputError("double transfer: feature and target counts differ");
    std::vector<std::size_t> rows(features.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return fit_two_layer(features, targets, rows, spec, &head_nfhs4, derive_seed(spec.seed, {0xd7}));
}

SurveyFit double_transfer_cv(const SurveyFit& nfhs4, const std::map<std::string, DistrictEmbedding>& embeddings,
                             const std::map<std::string, ingest::HealthVector93>& targets_nfhs5, const HeadSpec& spec) {
    spec.validate();
    if (nfhs4.fold_models.size() != static_cast<std::size_t>(spec.folds)) throw InputError("double transfer: fold count differs from the NFHS-4 fit");
    const SurveyData d = survey_data(embeddings, targets_nfhs5);
    for (const auto& id : d.districts)
        if (!nfhs4.fold_of.count(id)) throw InputError("double transfer: district " + id + " has no fold assignment");
    return cross_validate(d, nfhs4.fold_of, spec, &nfhs4.fold_models, &nfhs4.model);
}

void write_survey_report(const std::filesystem::path& path, std::span<const FactorResult> results, const std::string& path_tag) {
    csv::Table t;
    t.header = {"factor_id", "description", "r2", "n_districts", "path"};
    for (const auto& r : results)
        t.rows.push_back({ingest::health_factor_id(r.factor), std::string(ingest::health_factor_description(r.factor)),
                          r.r2 ? csv::format_number(*r.r2) : "NA", std::to_string(r.n_districts), path_tag});
    csv::write(path, t);
}

namespace {
CheckpointEntry head_entry(std::string name, std::vector<std::uint32_t> shape, const std::vector<double>& v) {
    CheckpointEntry e{std::move(name), std::move(shape), {}};
    for (double x : v) e.data.push_back(static_cast<float>(x));
    return e;
}
std::vector<double> head_values(const Checkpoint& ck, const std::string& name, std::size_t n) {
    const auto& e = ck.entry(name);
    if (e.data.size() != n) throw SchemaError("head entry '" + name + "' has the wrong size");
    return {e.data.begin(), e.data.end()};
}
}  // namespace

void write_head(const std::filesystem::path& path, const HeadModel& m) {
    Checkpoint ck;
    ck.header["format"] = "head";
    ck.header["kind"] = m.kind == HeadKind::single_layer ? "single-layer" : "two-layer";
    ck.header["input_dim"] = m.input_dim;
    ck.header["hidden"] = m.hidden;
    ck.header["output_dim"] = m.output_dim;
    const auto in = static_cast<std::uint32_t>(m.input_dim), out = static_cast<std::uint32_t>(m.output_dim),
               hid = static_cast<std::uint32_t>(m.hidden);
    const std::uint32_t rows1 = m.kind == HeadKind::single_layer ? out : hid;
    ck.entries.push_back(head_entry("feature_mean", {in}, m.feature_mean));
    ck.entries.push_back(head_entry("feature_std", {in}, m.feature_std));
    ck.entries.push_back(head_entry("W1", {rows1, in}, m.W1));
    ck.entries.push_back(head_entry("b1", {rows1}, m.b1));
    if (m.kind == HeadKind::two_layer) {
        ck.entries.push_back(head_entry("W2", {out, hid}, m.W2));
        ck.entries.push_back(head_entry("b2", {out}, m.b2));
        ck.entries.push_back(head_entry("target_mean", {out}, m.target_mean));
        ck.entries.push_back(head_entry("target_std", {out}, m.target_std));
    }
    write_checkpoint(path, ck);
}

HeadModel read_head(const std::filesystem::path& path) {
    const Checkpoint ck = read_checkpoint(path);
    if (ck.header.value("format", std::string()) != "head") throw SchemaError(path.string() + " does not hold a head model");
    HeadModel m;
    const auto kind = ck.header.at("kind").get<std::string>();
    if (kind != "single-layer" && kind != "two-layer") throw SchemaError("unknown head kind '" + kind + "'");
    m.kind = kind == "single-layer" ? HeadKind::single_layer : HeadKind::two_layer;
    m.input_dim = ck.header.at("input_dim").get<int>();
    m.hidden = ck.header.at("hidden").get<int>();
    m.output_dim = ck.header.at("output_dim").get<int>();
    const auto in = static_cast<std::size_t>(m.input_dim), out = static_cast<std::size_t>(m.output_dim), hid = static_cast<std::size_t>(m.hidden);
    const std::size_t rows1 = m.kind == HeadKind::single_layer ? out : hid;
    m.feature_mean = head_values(ck, "feature_mean", in);
    m.feature_std = head_values(ck, "feature_std", in);
    m.W1 = head_values(ck, "W1", rows1 * in);
    m.b1 = head_values(ck, "b1", rows1);
    if (m.kind == HeadKind::two_layer) {
        m.W2 = head_values(ck, "W2", out * hid);
        m.b2 = head_values(ck, "b2", out);
        m.target_mean = head_values(ck, "target_mean", out);
        m.target_std = head_values(ck, "target_std", out);
    }
    return m;
}

}  // namespace geoproxy::transfer
