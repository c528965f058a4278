#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "geoproxy/align.hpp"
#include "geoproxy/compositing.hpp"
#include "geoproxy/evaluation.hpp"
#include "geoproxy/ingest.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/nn.hpp"
#include "geoproxy/pipeline.hpp"
#include "geoproxy/rng.hpp"
#include "geoproxy/synth.hpp"
#include "geoproxy/transfer.hpp"
#include "support.hpp"

using namespace geoproxy;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

Outcome mosaic_oracle() {
    Rng rng(20240601);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto scenes = testing::random_mosaic_instance(rng, 8, 4, uniform(rng, 0.1, 0.6));
        const compositing::Mosaic m = compositing::recursive_mosaic(scenes, testing::full_footprint(8));
        const auto oracle = testing::brute_force_fill(scenes);
        for (std::size_t i = 0; i < 64; ++i) {
            bool same = m.fill_rank[i] == oracle.rank[i] && m.ms.valid(i) == (oracle.rank[i] >= 0);
            if (same && oracle.rank[i] >= 0) {
                const Scene& src = scenes[static_cast<std::size_t>(oracle.rank[i])];
                for (int b = 0; b < 4; ++b) same = same && m.ms.band(b)[i] == src.ms.band(b)[i];
                const int r = static_cast<int>(i / 8), c = static_cast<int>(i % 8);
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc)
                        same = same && m.pan.at(0, 2 * r + dr, 2 * c + dc) == src.pan.at(0, 2 * r + dr, 2 * c + dc);
            }
            mismatches += same ? 0 : 1;
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {mismatches == 0 && secs < 10.0, "200 instances, mismatched pixels=" + std::to_string(mismatches) + ", " + fmt(secs) + " s"};
}

Outcome pansharpen_consistency() {
    Rng rng(20240602);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const int n = 16 + static_cast<int>(uniform01(rng) * 33);
        const auto p = testing::band_limited_pair(rng, n);
        const RasterGrid out = compositing::pansharpen(p.ms, p.pan);
        for (int b = 0; b < 3; ++b)
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < n; ++c) {
                    const double avg = 0.25 * (out.at(b, 2 * r, 2 * c) + out.at(b, 2 * r + 1, 2 * c) +
                                               out.at(b, 2 * r, 2 * c + 1) + out.at(b, 2 * r + 1, 2 * c + 1));
                    worst = std::max(worst, std::abs(avg - p.ms.at(b, r, c)));
                }
    }
    return {worst < 0.02, "100 tiles, max block-average error=" + fmt(worst)};
}

Outcome c_correction() {
    Rng rng(20240603);
    double min_before = 1.0, max_after = 0.0;
    for (int t = 0; t < 10; ++t) {
        const auto sw = testing::lambertian_scene(rng, 64);
        const std::vector<double> ci(sw.illumination.cos_i.begin(), sw.illumination.cos_i.end());
        const Scene out = compositing::c_correct(sw.scene, sw.illumination);
        for (int b = 0; b < 4; ++b) {
            const auto before = sw.scene.ms.band(b), after = out.ms.band(b);
            min_before = std::min(min_before, std::abs(testing::pearson({before.begin(), before.end()}, ci)));
            max_after = std::max(max_after, std::abs(testing::pearson({after.begin(), after.end()}, ci)));
        }
    }
    return {min_before >= 0.9 && max_after < 0.1,
            "10 scenes x 4 bands, min |corr| before=" + fmt(min_before) + ", max |corr| after=" + fmt(max_after)};
}

Outcome gradient_check() {
    nn::ConvRegressorConfig cfg = nn::ConvRegressorConfig::tiny();
    cfg.blocks_per_stage = 2;  // identity and projection skips both present
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        cfg.seed = seed;
        nn::ModelParams p = nn::init_params(cfg);
        Rng rng(100 + seed);
        // zero biases put dead units exactly on the ReLU kink
        for (auto& t : p.tensors)
            if (t.name.ends_with(".b"))
                for (auto& v : t.data) v = static_cast<float>(uniform(rng, -0.1, 0.1));
        std::vector<float> x(static_cast<std::size_t>(cfg.input_channels * cfg.input_size * cfg.input_size));
        for (auto& v : x) v = static_cast<float>(normal(rng));
        std::vector<double> target;
        for (int o = 0; o < cfg.output_dim; ++o) target.push_back(normal(rng));
        nn::GradCheckOptions opt;
        opt.max_params = 1000000;
        opt.seed = seed;
        worst = std::max(worst, nn::grad_check(p, x, target, opt));
        checked += p.parameter_count();
    }
    return {worst < 1e-4, "3 models, " + std::to_string(checked) + " parameters, max relative error=" + fmt(worst)};
}

// Criteria 5-7 share one run on the default world.
struct WorldRun {
    Outcome learning, paths, temporal;
};

WorldRun default_world_run(int threads) {
    WorldRun out;
    const double cpu0 = cpu_seconds();
    pipeline::PipelineConfig cfg;
    cfg.threads = threads;
    cfg.apply_seed();
    const synth::World world = synth::build_world(synth::WorldSpec{});
    const std::size_t nv = world.villages.size();

    std::vector<RasterGrid> tiles;
    std::vector<std::size_t> index;
    {
        auto composites = pipeline::composite_world(world, synth::kRound2Year, threads);
        for (std::size_t i = 0; i < nv; ++i)
            if (!composites[i].total_gap()) {
                tiles.push_back(std::move(composites[i].grid));
                index.push_back(i);
            }
    }
    std::vector<std::vector<double>> assets;
    std::vector<std::string> strata;
    std::vector<double> night;
    for (std::size_t i : index) {
        assets.emplace_back(world.assets[i].values.begin(), world.assets[i].values.end());
        strata.push_back(world.villages[i].state_id);
        night.push_back(nn::sample_nightlight(world.nightlight, world.villages[i].centroid));
    }

    // 5: direct asset model
    nn::ConvRegressorConfig mc = cfg.model;
    mc.output_dim = static_cast<int>(ingest::kAssetCount);
    const nn::TrainResult asset_model = nn::train({tiles, assets, strata}, cfg.train, nn::init_params(mc));
    const double train_cpu = cpu_seconds() - cpu0;
    const auto names = std::vector<std::string>(ingest::kAssetNames.begin(), ingest::kAssetNames.end());
    const auto reports = pipeline::validation_reports(asset_model, tiles, assets, names, "asset");
    const auto hist = eval::r2_histogram(reports);
    double mean_r2 = 0.0;
    for (const auto& r : reports) mean_r2 += r.r2.value_or(0.0) / static_cast<double>(reports.size());
    out.learning = {hist.count_at_least(0.5) >= 8 && train_cpu < 30 * 60,
                    std::to_string(hist.count_at_least(0.5)) + " of 16 assets with validation R2 >= 0.5 (mean " + fmt(mean_r2, 3) +
                        "), composite+train CPU " + fmt(train_cpu, 4) + " s"};

    // 6: distal outcomes through heads on each model's embeddings
    const nn::TrainResult night_model = nn::train_nightlight_baseline(tiles, night, strata, cfg.train, cfg.model);
    pipeline::TransferInputs in;
    in.records = world.villages;
    for (std::size_t j = 0; j < index.size(); ++j) {
        const std::size_t i = index[j];
        in.village_ids.push_back(world.villages[i].village_id);
        in.asset_embeddings.push_back(nn::embed_tile(asset_model.params, tiles[j]));
        in.nightlight_embeddings.push_back(nn::embed_tile(night_model.params, tiles[j]));
        in.assets.push_back(assets[j]);
        const auto d = world.demographics[i].as_array();
        in.demographics.emplace_back(d.begin(), d.end());
        in.strata.push_back(strata[j]);
    }
    in.nfhs4 = world.nfhs4;
    in.nfhs5 = world.nfhs5;
    const auto summary = pipeline::transfer_stage(in, cfg.head, nullptr);
    const auto& cmp = summary.comparison;
    out.paths = {!cmp.rows.empty() && cmp.mean_asset > cmp.mean_nightlight,
                 std::to_string(cmp.rows.size()) + " distal outcomes, mean R2 asset=" + fmt(cmp.mean_asset, 3) +
                     " nightlight=" + fmt(cmp.mean_nightlight, 3)};

    // 7: round-1 imagery through the round-2 asset model
    tiles.clear();
    tiles.shrink_to_fit();
    align::TemporalInputs tin;
    {
        const auto early = pipeline::composite_world(world, synth::kRound1Year, threads);
        for (std::size_t i = 0; i < nv; ++i) {
            if (early[i].total_gap()) continue;
            const auto p = nn::predict(asset_model.params, early[i].grid);
            std::vector<double> v;
            for (auto name : ingest::kTehsilNames) v.push_back(p.at(ingest::asset_index(name)));
            tin.village_predictions[world.villages[i].village_id] = v;
        }
    }
    tin.records = world.villages;
    tin.truth_early = world.tehsil_truth.at(synth::kRound1Year);
    tin.truth_late = world.tehsil_truth.at(synth::kRound2Year);
    const auto report = align::temporal_eval(tin, cfg.transforms, cfg.seed);
    const auto phone_none = report.r2("has-phone", align::TransformKind::none);
    std::size_t drifted = 0, hist_wins = 0, ot_wins = 0;
    for (std::size_t k = 0; k < ingest::kTehsilCount; ++k) {
        const auto& d = world.spec.drift[k];
        if (d.shift == 0.0 && d.scale == 1.0) continue;
        ++drifted;
        const std::string name(ingest::kTehsilNames[k]);
        const auto none = report.r2(name, align::TransformKind::none);
        const auto h = report.r2(name, align::TransformKind::histogram);
        const auto ot = report.r2(name, align::TransformKind::linear_ot);
        hist_wins += (none && h && *h > *none) ? 1 : 0;
        ot_wins += (none && ot && *ot > *none) ? 1 : 0;
    }
    const double need = 0.9 * static_cast<double>(drifted);
    out.temporal = {drifted > 0 && phone_none && *phone_none < 0.0 && hist_wins >= need && ot_wins >= need,
                    "has-phone untransformed R2=" + (phone_none ? fmt(*phone_none) : std::string("n/a")) + ", histogram beats none on " +
                        std::to_string(hist_wins) + "/" + std::to_string(drifted) + ", linear-ot on " + std::to_string(ot_wins) + "/" +
                        std::to_string(drifted) + " drifted outcomes"};
    return out;
}

Outcome linear_ot_exactness() {
    Rng rng(20240608);
    constexpr int d = 10;
    constexpr std::size_t n = 10000;
    auto draw = [&](const Eigen::VectorXd& mu, const Eigen::MatrixXd& L) {
        align::Samples s;
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::VectorXd z(d);
            for (int k = 0; k < d; ++k) z(k) = normal(rng);
            const Eigen::VectorXd x = mu + L * z;
            s.emplace_back(x.data(), x.data() + d);
        }
        return s;
    };
    auto factor = [&] {
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c <= r; ++c) L(r, c) = uniform(rng, -1.0, 1.0) + (r == c ? 1.5 : 0.0);
        return L;
    };
    auto moments = [](const align::Samples& s, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = Eigen::VectorXd::Zero(d);
        for (const auto& row : s) mu += Eigen::Map<const Eigen::VectorXd>(row.data(), d);
        mu /= static_cast<double>(s.size());
        cov = Eigen::MatrixXd::Zero(d, d);
        for (const auto& row : s) {
            const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(row.data(), d) - mu;
            cov += c * c.transpose();
        }
        cov /= static_cast<double>(s.size());
    };
    Eigen::VectorXd mu_s(d), mu_t(d);
    for (int k = 0; k < d; ++k) mu_s(k) = uniform(rng, -2, 2), mu_t(k) = uniform(rng, -2, 2);
    const auto source = draw(mu_s, factor());
    const auto target = draw(mu_t, factor());
    const auto g = align::fit_linear_ot(source, target);
    Eigen::VectorXd mo, mt;
    Eigen::MatrixXd co, ct;
    moments(g.apply(source), mo, co);
    moments(target, mt, ct);
    const double mean_err = (mo - mt).cwiseAbs().maxCoeff(), cov_err = (co - ct).cwiseAbs().maxCoeff();
    const Eigen::Map<const Eigen::Matrix<double, d, d, Eigen::RowMajor>> A(g.A.data());
    const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues().minCoeff();
    return {mean_err < 1e-6 && cov_err < 1e-6 && asym < 1e-12 && min_eig >= 0.0,
            "mean err=" + fmt(mean_err) + ", cov err=" + fmt(cov_err) + ", asymmetry=" + fmt(asym) + ", min eigenvalue=" + fmt(min_eig)};
}

Outcome histogram_exactness() {
    Rng rng(20240609);
    int exact = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 50 + static_cast<std::size_t>(uniform01(rng) * 950);
        const double shift = uniform(rng, -1.0, 1.0), scale = uniform(rng, 0.3, 3.0), power = uniform(rng, 0.5, 3.0);
        align::Samples src(n, std::vector<double>(2)), tgt(n, std::vector<double>(2));
        for (std::size_t i = 0; i < n; ++i) {
            src[i] = {normal(rng), uniform01(rng)};
            tgt[i] = {shift + scale * normal(rng), std::pow(uniform01(rng), power)};
        }
        const auto t = align::fit_histogram(src, tgt);
        const auto out = t.apply(src);
        bool same = true;
        for (std::size_t k = 0; k < 2; ++k) {
            const auto& edges = t.histograms[k].edges;
            // independent count: bin b holds edges[b] <= v < edges[b+1], last bin closed
            std::vector<int> a(align::kHistogramBins, 0), b(align::kHistogramBins, 0);
            auto bin = [&](double v) {
                int j = 0;
                while (j + 1 < align::kHistogramBins && v >= edges[static_cast<std::size_t>(j + 1)]) ++j;
                return j;
            };
            for (std::size_t i = 0; i < n; ++i) ++a[static_cast<std::size_t>(bin(out[i][k]))], ++b[static_cast<std::size_t>(bin(tgt[i][k]))];
            same = same && a == b;
        }
        exact += same ? 1 : 0;
    }
    return {exact == 50, std::to_string(exact) + " of 50 trials with identical 10-bin counts"};
}

std::map<std::string, std::string> file_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::ostringstream os;
            os << in.rdbuf();
            out[fs::relative(e.path(), root).string()] = os.str();
        }
    return out;
}

Outcome determinism() {
    testing::TempDir dir("acceptance_det");
    {
        std::ofstream(dir / "world.cfg") << "seed = 11\nn_states = 2\nn_districts = 4\nn_tehsils = 20\nn_villages = 80\nscenes_per_year = 2\n";
    }
    auto run = [&](const std::string& tag) {
        pipeline::PipelineConfig cfg;
        cfg.seed = 17;
        cfg.threads = 1;
        cfg.world_spec = dir / "world.cfg";
        cfg.data_dir = dir / ("data_" + tag);
        cfg.work_dir = dir / ("work_" + tag);
        cfg.model.block_widths = {4, 8};
        cfg.model.embedding_dim = 16;
        cfg.train.batch_size = 16;
        cfg.train.max_epochs = 3;
        cfg.head.max_epochs = 40;
        cfg.head.hidden = 8;
        cfg.head.batch_size = 16;
        cfg.apply_seed();
        pipeline::run_all(cfg);
        return file_tree(cfg.work_dir);
    };
    const auto a = run("a"), b = run("b");
    std::size_t checkpoints = 0, reports = 0, differing = 0;
    std::string first;
    for (const auto& [name, bytes] : a) {
        checkpoints += name.ends_with(".eock") ? 1 : 0;
        reports += name.starts_with("reports/") ? 1 : 0;
        if (b.count(name) && b.at(name) == bytes) continue;
        if (++differing <= 3) first += " " + name;
    }
    return {a.size() == b.size() && differing == 0 && checkpoints > 0 && reports > 0,
            std::to_string(a.size()) + " files (" + std::to_string(checkpoints) + " checkpoints, " + std::to_string(reports) +
                " reports), differing=" + std::to_string(differing) + first};
}

Outcome aggregation() {
    Rng rng(20240611);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ingest::VillageRecord> rec;
        std::map<std::string, std::vector<double>> pred;
        const int dim = 1 + static_cast<int>(uniform01(rng) * 5);
        const int districts = 1 + static_cast<int>(uniform01(rng) * 5);
        const int villages = 5 + static_cast<int>(uniform01(rng) * 200);
        for (int v = 0; v < villages; ++v) {
            const int d = static_cast<int>(uniform01(rng) * districts);
            const std::string district = "d" + std::to_string(d);
            const std::string tehsil = district + "t" + std::to_string(static_cast<int>(uniform01(rng) * 4));
            const std::string id = "v" + std::to_string(v);
            rec.push_back({id, {}, std::floor(uniform(rng, 1.0, 20000.0)), tehsil, district, "s"});
            std::vector<double> p;
            for (int k = 0; k < dim; ++k) p.push_back(normal(rng));
            pred[id] = p;
        }
        // direct sums: unit -> (sum w * p, sum w)
        std::map<std::string, std::pair<std::vector<double>, double>> tsum, dsum;
        for (const auto& r : rec)
            for (auto* m : {&tsum, &dsum}) {
                auto& s = (*m)[m == &tsum ? r.tehsil_id : r.district_id];
                s.first.resize(static_cast<std::size_t>(dim), 0.0);
                for (int k = 0; k < dim; ++k) s.first[static_cast<std::size_t>(k)] += r.population * pred[r.village_id][static_cast<std::size_t>(k)];
                s.second += r.population;
            }
        const auto tehsils = align::tehsil_aggregate(pred, rec, 2011);
        if (tehsils.size() != tsum.size()) worst = 1.0;
        for (const auto& t : tehsils)
            for (int k = 0; k < dim; ++k) {
                const auto& s = tsum.at(t.tehsil_id);
                worst = std::max(worst, std::abs(t.prediction[static_cast<std::size_t>(k)] - s.first[static_cast<std::size_t>(k)] / s.second));
            }
        const auto dist = transfer::district_embeddings(pred, rec);
        if (dist.size() != dsum.size()) worst = 1.0;
        for (const auto& [id, e] : dist)
            for (int k = 0; k < dim; ++k) {
                const auto& s = dsum.at(id);
                worst = std::max(worst, std::abs(e.embedding[static_cast<std::size_t>(k)] - s.first[static_cast<std::size_t>(k)] / s.second));
            }
    }
    return {worst < 1e-9, "100 hierarchies, tehsil and district max deviation=" + fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria for the geoproxy pipeline"};
    int threads = 1;
    std::vector<int> only;
    app.add_option("--threads", threads, "worker threads for the default-world run")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);
    auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

    auto guarded = [](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };
    std::optional<WorldRun> world;
    auto from_world = [&](Outcome WorldRun::*field) {
        return [&, field] {
            if (!world) {
                try {
                    world = default_world_run(threads);
                } catch (const std::exception& e) {
                    const Outcome failed{false, std::string("exception: ") + e.what()};
                    world = WorldRun{failed, failed, failed};
                }
            }
            return (*world).*field;
        };
    };
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"1 compositing oracle equivalence", mosaic_oracle},
        {"2 pansharpen consistency", pansharpen_consistency},
        {"3 c-correction removes illumination correlation", c_correction},
        {"4 gradient correctness", gradient_check},
        {"5 cross-sectional learning on the default world", from_world(&WorldRun::learning)},
        {"6 asset path beats nightlight path on distal outcomes", from_world(&WorldRun::paths)},
        {"7 transforms recover drifted outcomes", from_world(&WorldRun::temporal)},
        {"8 linear OT exactness", linear_ot_exactness},
        {"9 histogram matching exactness", histogram_exactness},
        {"10 single-threaded end-to-end determinism", determinism},
        {"11 aggregation correctness", aggregation},
    };

    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        if (!wanted(static_cast<int>(k + 1))) continue;
        const Outcome o = guarded(criteria[k].second);
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << criteria[k].first << ": " << o.detail << std::endl;
        failed += o.pass ? 0 : 1;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
