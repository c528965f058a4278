#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "geoproxy/error.hpp"
#include "geoproxy/pipeline.hpp"
#include "geoproxy/synth.hpp"

namespace fs = std::filesystem;
using namespace geoproxy;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out;
    std::string data;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
    cmd->add_option("--config", c.config, "pipeline config (JSON)");
    cmd->add_option("--seed", c.seed, "master seed");
    cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", c.out, out_help);
}

// flags > file > defaults
pipeline::PipelineConfig resolve(const Common& c, bool out_is_data = false) {
    pipeline::PipelineConfig cfg = c.config.empty() ? pipeline::PipelineConfig{} : pipeline::PipelineConfig::load(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.threads) cfg.threads = *c.threads;
    if (!c.data.empty()) cfg.data_dir = c.data;
    if (!c.out.empty()) (out_is_data ? cfg.data_dir : cfg.work_dir) = c.out;
    cfg.apply_seed();
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Satellite-imagery development proxies: synthetic world, compositing, training, transfer and evaluation."};
    app.require_subcommand(1);
    Common common;

    auto* synth_gen = app.add_subcommand("synth-gen", "generate a synthetic world dataset");
    std::string spec_path;
    add_common(synth_gen, common, "dataset directory");
    synth_gen->add_option("--spec", spec_path, "world spec (key = value text)");

    auto* composite = app.add_subcommand("composite", "build per-village composites for one round");
    std::string year = "2";
    add_common(composite, common, "work directory");
    composite->add_option("--data", common.data, "dataset directory");
    composite->add_option("--year", year, "round: 1, 2, 2001 or 2011");

    auto* build_assets = app.add_subcommand("build-assets", "asset vectors, nightlight samples and tehsil truth");
    add_common(build_assets, common, "work directory");
    build_assets->add_option("--data", common.data, "dataset directory");

    auto* train = app.add_subcommand("train", "train the asset model on round-2 composites");
    add_common(train, common, "work directory");
    train->add_option("--data", common.data, "dataset directory");

    auto* train_nl = app.add_subcommand("train-nightlight", "train the nightlight baseline model");
    add_common(train_nl, common, "work directory");
    train_nl->add_option("--data", common.data, "dataset directory");

    auto* transfer = app.add_subcommand("transfer", "fit transfer heads on both models' embeddings");
    add_common(transfer, common, "work directory");
    transfer->add_option("--data", common.data, "dataset directory");

    auto* temporal = app.add_subcommand("temporal-eval", "tehsil-level temporal evaluation with alignment transforms");
    add_common(temporal, common, "work directory");
    temporal->add_option("--data", common.data, "dataset directory");

    auto* evaluate = app.add_subcommand("evaluate", "per-column R2 of a prediction table against a truth table");
    std::string pred, truth, level = "village", path_tag = "asset";
    add_common(evaluate, common, "report CSV");
    evaluate->add_option("--pred", pred, "prediction CSV (id column first)")->required();
    evaluate->add_option("--truth", truth, "truth CSV (id column first)")->required();
    evaluate->add_option("--level", level, "village, tehsil or district");
    evaluate->add_option("--path", path_tag, "path tag written to the report");

    auto* report = app.add_subcommand("report", "charts and summary from the reports directory");
    add_common(report, common, "work directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (synth_gen->parsed()) {
            const auto cfg = resolve(common, true);
            synth::WorldSpec spec;
            if (!spec_path.empty()) spec = synth::WorldSpec::read(spec_path);
            else if (cfg.world_spec) spec = synth::WorldSpec::read(*cfg.world_spec);
            if (common.seed) spec.seed = *common.seed;
            synth::generate_world(spec, cfg.data_dir, cfg.threads);
        } else if (composite->parsed()) {
            pipeline::run_composite(resolve(common), pipeline::parse_year(year));
        } else if (build_assets->parsed()) {
            pipeline::run_build_assets(resolve(common));
        } else if (train->parsed()) {
            pipeline::run_train(resolve(common));
        } else if (train_nl->parsed()) {
            pipeline::run_train_nightlight(resolve(common));
        } else if (transfer->parsed()) {
            pipeline::run_transfer(resolve(common));
        } else if (temporal->parsed()) {
            pipeline::run_temporal_eval(resolve(common));
        } else if (evaluate->parsed()) {
            const fs::path out = common.out.empty() ? fs::path("evaluation.csv") : fs::path(common.out);
            pipeline::run_evaluate(pred, truth, out, eval::parse_level(level), path_tag);
        } else if (report->parsed()) {
            pipeline::run_report(resolve(common));
        }
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
