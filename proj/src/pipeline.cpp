#include "geoproxy/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "geoproxy/checkpoint.hpp"
#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/parallel.hpp"
#include "geoproxy/raster_io.hpp"
#include "geoproxy/rng.hpp"

namespace geoproxy::pipeline {

namespace {

nlohmann::ordered_json head_to_json(const transfer::HeadSpec& h) {
    nlohmann::ordered_json j;
    j["learning_rate"] = h.learning_rate;
    j["batch_size"] = h.batch_size;
    j["train_fraction"] = h.train_fraction;
    j["max_epochs"] = h.max_epochs;
    j["patience"] = h.patience;
    j["hidden"] = h.hidden;
    j["weight_decay"] = h.weight_decay;
    j["folds"] = h.folds;
    return j;
}

transfer::HeadSpec head_from_json(const nlohmann::json& j) {
    transfer::HeadSpec h;
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.train_fraction = j.value("train_fraction", h.train_fraction);
    h.max_epochs = j.value("max_epochs", h.max_epochs);
    h.patience = j.value("patience", h.patience);
    h.hidden = j.value("hidden", h.hidden);
    h.weight_decay = j.value("weight_decay", h.weight_decay);
    h.folds = j.value("folds", h.folds);
    return h;
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
}

std::vector<ingest::VillageRecord> load_manifest(const PipelineConfig& cfg) {
    const fs::path p = cfg.data_dir / "villages.jsonl";
    require_file(p, "village manifest");
    auto records = ingest::read_village_manifest(p);
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.village_id < b.village_id; });
    return records;
}

using VectorTable = std::map<std::string, std::vector<double>>;

void write_vectors(const fs::path& path, const std::string& id_column, const std::vector<std::string>& names, const VectorTable& rows) {
    csv::Table t;
    t.header.push_back(id_column);
    t.header.insert(t.header.end(), names.begin(), names.end());
    for (const auto& [id, v] : rows) {
        std::vector<std::string> r{id};
        for (double x : v) r.push_back(csv::format_number(x));
        t.rows.push_back(std::move(r));
    }
    csv::write(path, t);
}

VectorTable read_vectors(const fs::path& path, const std::vector<std::string>& names) {
    require_file(path, "table");
    const csv::Table t = csv::read(path);
    std::vector<std::size_t> idx;
    for (const auto& n : names) idx.push_back(t.column(n));
    VectorTable out;
    for (const auto& row : t.rows) {
        std::vector<double> v;
        for (auto i : idx) v.push_back(csv::parse_number(row.at(i)));
        out[row.at(0)] = std::move(v);
    }
    return out;
}

template <std::size_t N>
std::vector<std::string> names_of(const std::array<std::string_view, N>& a) {
    return {a.begin(), a.end()};
}

// Composite tiles for the given villages; villages without a usable tile are
// dropped (with a warning) and the kept ids are returned alongside.
struct TileSet {
    std::vector<std::string> ids;
    std::vector<RasterGrid> tiles;
};

TileSet load_tiles(const WorkPaths& paths, int year, const std::vector<std::string>& ids) {
    TileSet out;
    std::size_t gaps = 0, missing = 0;
    for (const auto& id : ids) {
        const fs::path p = paths.composite(year, id);
        if (!fs::exists(p)) {
            ++missing;
            continue;
        }
        RasterGrid g = read_eorc(p);
        if (g.valid_count() == 0) {
            ++gaps;
            continue;
        }
        out.ids.push_back(id);
        out.tiles.push_back(std::move(g));
    }
    if (gaps || missing) log::warn("tiles", "year=", year, " skipped total-gap=", gaps, " missing=", missing);
    if (out.tiles.empty()) throw IoError("no composites for " + std::to_string(year) + " under " + paths.composites(year).string());
    return out;
}

std::map<std::string, ingest::VillageRecord> by_id(const std::vector<ingest::VillageRecord>& records) {
    std::map<std::string, ingest::VillageRecord> m;
    for (const auto& r : records) m[r.village_id] = r;
    return m;
}

std::vector<std::vector<double>> embed_all(const nn::ModelParams& params, std::span<const RasterGrid> tiles, int threads) {
    std::vector<std::vector<double>> out(tiles.size());
    parallel_for(tiles.size(), threads, [&](std::size_t i) { out[i] = nn::embed_tile(params, tiles[i]); });
    return out;
}

nn::ModelParams load_model(const fs::path& path) {
    require_file(path, "model checkpoint");
    return nn::from_checkpoint(read_checkpoint(path));
}

std::map<std::string, ingest::TehsilVector10> read_tehsil_truth(const WorkPaths& paths, int year) {
    const auto names = names_of(ingest::kTehsilNames);
    const auto rows = read_vectors(paths.tables() / ("tehsil_truth_" + std::to_string(year) + ".csv"), names);
    std::map<std::string, ingest::TehsilVector10> out;
    for (const auto& [id, v] : rows) {
        ingest::TehsilVector10 t;
        t.tehsil_id = id;
        t.year = year;
        std::copy(v.begin(), v.end(), t.values.begin());
        out[id] = t;
    }
    return out;
}

std::vector<eval::OutcomeReport> head_reports(const transfer::HeadFit& fit, const std::vector<std::string>& names, const std::string& tag) {
    std::vector<eval::OutcomeReport> out;
    for (std::size_t k = 0; k < names.size(); ++k) out.push_back({names[k], fit.val_r2[k], fit.val.size(), eval::Level::village, tag});
    return out;
}

}  // namespace

void PipelineConfig::validate() const {
    if (threads < 1) throw InputError("config: threads must be at least 1");
    if (data_dir.empty() || work_dir.empty()) throw InputError("config: data_dir and work_dir must be set");
    if (transforms.empty()) throw InputError("config: at least one transform kind is required");
    model.validate();
    train.validate();
    head.validate();
}

void PipelineConfig::apply_seed() {
    model.seed = derive_seed(seed, {0x30de1});
    train.seed = derive_seed(seed, {0x7a1});
    head.seed = derive_seed(seed, {0x4ead});
    train.threads = threads;
}

nlohmann::ordered_json PipelineConfig::to_json() const {
    nlohmann::ordered_json j;
    j["data_dir"] = data_dir.string();
    j["work_dir"] = work_dir.string();
    if (world_spec) j["world_spec"] = world_spec->string();
    j["seed"] = seed;
    j["threads"] = threads;
    auto m = model.to_json();
    m.erase("seed");
    j["model"] = m;
    auto t = train.to_json();
    t.erase("seed");
    j["train"] = t;
    j["head"] = head_to_json(head);
    std::vector<std::string> kinds;
    for (auto k : transforms) kinds.emplace_back(align::kind_name(k));
    j["transforms"] = kinds;
    return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {"data_dir", "work_dir", "world_spec", "seed", "threads", "model", "train", "head", "transforms"};
    if (!j.is_object()) throw SchemaError("config: expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw SchemaError("config: unknown key '" + k + "'");
    PipelineConfig c;
    try {
        if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
        if (j.contains("work_dir")) c.work_dir = j.at("work_dir").get<std::string>();
        if (j.contains("world_spec")) c.world_spec = fs::path(j.at("world_spec").get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        if (j.contains("model")) {
            nlohmann::json m = c.model.to_json();
            m.merge_patch(j.at("model"));
            c.model = nn::ConvRegressorConfig::from_json(m);
        }
        if (j.contains("train")) c.train = nn::TrainSpec::from_json(j.at("train"));
        if (j.contains("head")) c.head = head_from_json(j.at("head"));
        if (j.contains("transforms")) {
            c.transforms.clear();
            for (const auto& k : j.at("transforms")) c.transforms.push_back(align::parse_kind(k.get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    require_file(path, "config");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

int parse_year(const std::string& s) {
    if (s == "1" || s == "2001") return synth::kRound1Year;
    if (s == "2" || s == "2011") return synth::kRound2Year;
    throw InputError("unknown year '" + s + "'; use 1, 2, 2001 or 2011");
}

void write_composite(const WorkPaths& paths, const compositing::CompositeTile& tile) {
    fs::create_directories(paths.composites(tile.year));
    write_eorc(paths.composite(tile.year, tile.village_id), tile.grid);
    std::string text = "pixel_index,source_rank\n";
    for (std::size_t i = 0; i < tile.fill_rank.size(); ++i) text += std::to_string(i) + "," + std::to_string(tile.fill_rank[i]) + "\n";
    write_text_file(paths.composites(tile.year) / (tile.village_id + ".fill.csv"), text);
}

namespace {
CompositeSummary summarize(int year, const std::vector<std::string>& ids, const std::vector<compositing::CompositeTile>& tiles,
                           const WorkPaths* paths) {
    CompositeSummary s;
    s.year = year;
    s.villages = tiles.size();
    csv::Table t;
    t.header = {"village_id", "scenes_in", "scenes_used", "gap_fraction"};
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        s.mean_gap_fraction += tiles[i].gap_fraction;
        if (tiles[i].total_gap()) ++s.total_gaps;
        t.rows.push_back({ids[i], std::to_string(tiles[i].scenes_in), std::to_string(tiles[i].scenes_used), csv::format_number(tiles[i].gap_fraction)});
    }
    if (!tiles.empty()) s.mean_gap_fraction /= static_cast<double>(tiles.size());
    if (paths) csv::write(paths->composites(year) / "summary.csv", t);
    log::info("composite", "year=", year, " villages=", s.villages, " total_gaps=", s.total_gaps, " mean_gap=", s.mean_gap_fraction);
    return s;
}
}  // namespace

CompositeSummary run_composite(const PipelineConfig& cfg, int year) {
    cfg.validate();
    const auto records = load_manifest(cfg);
    const WorkPaths paths{cfg.work_dir};
    fs::create_directories(paths.composites(year));
    std::vector<compositing::CompositeTile> tiles(records.size());
    parallel_for(records.size(), cfg.threads, [&](std::size_t i) {
        const auto scenes = synth::read_village_scenes(cfg.data_dir, records[i].village_id, year);
        compositing::CompositeTile tile =
            compositing::build_composite(AOIFootprint{records[i].village_id, records[i].centroid}, year, scenes);
        write_composite(paths, tile);
        tile.grid = RasterGrid();
        tile.fill_rank.clear();
        tiles[i] = std::move(tile);
    });
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.village_id);
    return summarize(year, ids, tiles, &paths);
}

std::vector<compositing::CompositeTile> composite_world(const synth::World& world, int year, int threads) {
    std::vector<compositing::CompositeTile> tiles(world.villages.size());
    parallel_for(world.villages.size(), threads, [&](std::size_t i) {
        const auto scenes = synth::render_scenes(world, i, year);
        tiles[i] = compositing::build_composite(AOIFootprint{world.villages[i].village_id, world.villages[i].centroid}, year, scenes);
    });
    std::vector<std::string> ids;
    for (const auto& v : world.villages) ids.push_back(v.village_id);
    summarize(year, ids, tiles, nullptr);
    return tiles;
}

void run_build_assets(const PipelineConfig& cfg) {
    cfg.validate();
    const auto records = load_manifest(cfg);
    const WorkPaths paths{cfg.work_dir};
    fs::create_directories(paths.tables());

    const fs::path census = cfg.data_dir / "census" / "village_2011.csv";
    require_file(census, "village census table");
    const auto rows = ingest::read_census_table(census);
    VectorTable assets;
    std::size_t missing = 0;
    for (const auto& r : records) {
        const auto it = rows.find(r.village_id);
        if (it == rows.end()) {
            ++missing;
            continue;
        }
        const auto a = ingest::build_asset_vector(it->second);
        assets[r.village_id] = {a.values.begin(), a.values.end()};
    }
    if (missing) log::warn("build-assets", "villages without census rows: ", missing);
    write_vectors(paths.tables() / "assets_2011.csv", "village_id", names_of(ingest::kAssetNames), assets);

    const fs::path nl_path = cfg.data_dir / "nightlight" / "nightlight.eorc";
    require_file(nl_path, "nightlight grid");
    const auto grid = nn::NightlightGrid::from_raster(read_eorc(nl_path));
    VectorTable nl;
    std::size_t outside = 0;
    for (const auto& r : records) {
        try {
            nl[r.village_id] = {nn::sample_nightlight(grid, r.centroid)};
        } catch (const CoverageError&) {
            ++outside;
        }
    }
    if (outside) log::warn("build-assets", "villages outside the nightlight grid: ", outside);
    write_vectors(paths.tables() / "nightlight.csv", "village_id", {"nightlight"}, nl);

    for (int year : {synth::kRound1Year, synth::kRound2Year}) {
        std::map<std::string, ingest::TehsilTables> tables;
        for (const auto& name : ingest::tehsil_tables(year)) {
            const fs::path p = cfg.data_dir / "census" / ("tehsil_" + std::to_string(year) + "_" + name + ".csv");
            require_file(p, "tehsil table");
            for (auto& [tid, row] : ingest::read_census_table(p)) tables[tid][name] = std::move(row);
        }
        VectorTable truth;
        for (const auto& [tid, t] : tables)
            if (const auto v = ingest::build_tehsil_vector(tid, t, year)) truth[tid] = {v->values.begin(), v->values.end()};
        write_vectors(paths.tables() / ("tehsil_truth_" + std::to_string(year) + ".csv"), "tehsil_id", names_of(ingest::kTehsilNames), truth);
        log::info("build-assets", "year=", year, " tehsils=", truth.size());
    }
    log::info("build-assets", "villages=", assets.size());
}

std::vector<eval::OutcomeReport> validation_reports(const nn::TrainResult& result, std::span<const RasterGrid> tiles,
                                                    const std::vector<std::vector<double>>& targets,
                                                    const std::vector<std::string>& names, const std::string& path_tag) {
    std::vector<std::vector<double>> p(names.size()), y(names.size());
    for (auto i : result.split.val) {
        const auto pred = nn::predict(result.params, tiles[i]);
        for (std::size_t k = 0; k < names.size(); ++k) {
            p[k].push_back(pred[k]);
            y[k].push_back(targets[i][k]);
        }
    }
    std::vector<eval::OutcomeReport> out;
    for (std::size_t k = 0; k < names.size(); ++k)
        out.push_back({names[k], p[k].size() >= 2 ? eval::r_squared(p[k], y[k]) : std::nullopt, p[k].size(), eval::Level::village, path_tag});
    return out;
}

namespace {

struct TrainingData {
    TileSet tiles;
    std::vector<std::vector<double>> targets;
    std::vector<std::string> strata;
};

TrainingData training_data(const PipelineConfig& cfg, const std::string& table, const std::vector<std::string>& names) {
    const auto records = by_id(load_manifest(cfg));
    const WorkPaths paths{cfg.work_dir};
    const auto targets = read_vectors(paths.tables() / table, names);
    std::vector<std::string> ids;
    for (const auto& [id, rec] : records)
        if (targets.count(id)) ids.push_back(id);
    TrainingData d;
    d.tiles = load_tiles(paths, synth::kRound2Year, ids);
    for (const auto& id : d.tiles.ids) {
        d.targets.push_back(targets.at(id));
        d.strata.push_back(records.at(id).state_id);
    }
    return d;
}

void save_model(const WorkPaths& paths, const std::string& name, const nn::TrainResult& r, const nn::TrainSpec& spec) {
    fs::create_directories(paths.models());
    write_checkpoint(paths.models() / (name + ".eock"), nn::to_checkpoint(r.params, &spec));
    nn::write_history(paths.models() / (name + "_history.csv"), r.history);
}

}  // namespace

nn::TrainResult run_train(const PipelineConfig& cfg) {
    cfg.validate();
    const WorkPaths paths{cfg.work_dir};
    const auto names = names_of(ingest::kAssetNames);
    const TrainingData d = training_data(cfg, "assets_2011.csv", names);
    nn::ConvRegressorConfig mc = cfg.model;
    mc.output_dim = static_cast<int>(ingest::kAssetCount);
    log::info("train", "villages=", d.tiles.tiles.size(), " epochs<=", cfg.train.max_epochs);
    nn::TrainResult r = nn::train({d.tiles.tiles, d.targets, d.strata}, cfg.train, nn::init_params(mc));
    save_model(paths, "asset", r, cfg.train);
    fs::create_directories(paths.reports());
    eval::write_reports(paths.reports() / "asset_r2.csv", validation_reports(r, d.tiles.tiles, d.targets, names, "asset"));
    return r;
}

nn::TrainResult run_train_nightlight(const PipelineConfig& cfg) {
    cfg.validate();
    const WorkPaths paths{cfg.work_dir};
    const TrainingData d = training_data(cfg, "nightlight.csv", {"nightlight"});
    std::vector<double> values;
    for (const auto& t : d.targets) values.push_back(t[0]);
    log::info("train-nightlight", "villages=", d.tiles.tiles.size(), " epochs<=", cfg.train.max_epochs);
    nn::TrainResult r = nn::train_nightlight_baseline(d.tiles.tiles, values, d.strata, cfg.train, cfg.model);
    save_model(paths, "nightlight", r, cfg.train);
    fs::create_directories(paths.reports());
    eval::write_reports(paths.reports() / "nightlight_r2.csv", validation_reports(r, d.tiles.tiles, d.targets, {"nightlight"}, "nightlight"));
    return r;
}

TransferSummary transfer_stage(const TransferInputs& in, const transfer::HeadSpec& spec, const WorkPaths* out) {
    TransferSummary s;
    std::vector<std::string> demo_names(ingest::DemographicVector::names.begin(), ingest::DemographicVector::names.end());
    const auto asset_fit = transfer::fit_single_layer_head(in.asset_embeddings, in.demographics, spec, in.strata);
    const auto night_fit = transfer::fit_single_layer_head(in.nightlight_embeddings, in.demographics, spec, in.strata);
    s.distal_asset = head_reports(asset_fit, demo_names, "asset");
    s.distal_nightlight = head_reports(night_fit, demo_names, "nightlight");
    s.comparison = eval::compare_paths(s.distal_asset, s.distal_nightlight);
    const auto via_night = transfer::fit_single_layer_head(in.nightlight_embeddings, in.assets, spec, in.strata);
    s.assets_via_nightlight = head_reports(via_night, names_of(ingest::kAssetNames), "nightlight");

    std::map<std::string, std::vector<double>> asset_map, night_map;
    for (std::size_t i = 0; i < in.village_ids.size(); ++i) {
        asset_map[in.village_ids[i]] = in.asset_embeddings[i];
        night_map[in.village_ids[i]] = in.nightlight_embeddings[i];
    }
    const auto d_asset = transfer::district_embeddings(asset_map, in.records);
    const auto d_night = transfer::district_embeddings(night_map, in.records);
    std::size_t with_targets = 0;
    for (const auto& [id, e] : d_asset) with_targets += in.nfhs4.count(id);
    std::optional<transfer::SurveyFit> night4;
    if (with_targets < transfer::kMinSurveyDistricts) {
        log::warn("transfer", "districts with survey targets=", with_targets, " below the minimum of ", transfer::kMinSurveyDistricts,
                  "; survey heads skipped");
    } else {
        s.survey_nfhs4 = transfer::fit_survey_head(d_asset, in.nfhs4, spec);
        night4 = transfer::fit_survey_head(d_night, in.nfhs4, spec);
        if (!in.nfhs5.empty()) s.survey_nfhs5 = transfer::double_transfer_cv(*s.survey_nfhs4, d_asset, in.nfhs5, spec);
    }

    if (out) {
        fs::create_directories(out->heads());
        fs::create_directories(out->reports());
        transfer::write_head(out->heads() / "demographics_asset.eock", asset_fit.model);
        transfer::write_head(out->heads() / "demographics_nightlight.eock", night_fit.model);
        transfer::write_head(out->heads() / "assets_from_nightlight.eock", via_night.model);
        eval::write_reports(out->reports() / "distal_asset.csv", s.distal_asset);
        eval::write_reports(out->reports() / "distal_nightlight.csv", s.distal_nightlight);
        eval::write_reports(out->reports() / "assets_via_nightlight.csv", s.assets_via_nightlight);
        eval::write_comparison(out->reports() / "path_comparison.csv", s.comparison);
        if (s.survey_nfhs4) {
            transfer::write_head(out->heads() / "survey_nfhs4.eock", s.survey_nfhs4->model);
            transfer::write_survey_report(out->reports() / "survey_nfhs4_asset.csv", s.survey_nfhs4->results, "asset");
            transfer::write_survey_report(out->reports() / "survey_nfhs4_nightlight.csv", night4->results, "nightlight");
        }
        if (s.survey_nfhs5) {
            transfer::write_head(out->heads() / "survey_nfhs5.eock", s.survey_nfhs5->model);
            transfer::write_survey_report(out->reports() / "survey_nfhs5_asset.csv", s.survey_nfhs5->results, "asset");
        }
    }
    log::info("transfer", "villages=", in.village_ids.size(), " districts=", d_asset.size(), " mean_delta=", s.comparison.mean_delta);
    return s;
}

TransferSummary run_transfer(const PipelineConfig& cfg) {
    cfg.validate();
    const WorkPaths paths{cfg.work_dir};
    const auto records = load_manifest(cfg);
    const auto rec_by_id = by_id(records);
    const auto asset_model = load_model(paths.models() / "asset.eock");
    const auto night_model = load_model(paths.models() / "nightlight.eock");
    const auto assets = read_vectors(paths.tables() / "assets_2011.csv", names_of(ingest::kAssetNames));
    const fs::path demo_path = cfg.data_dir / "census" / "demographics_2011.csv";
    require_file(demo_path, "demographics table");
    const auto demographics = ingest::read_demographics(demo_path);
    std::vector<std::string> ids;
    for (const auto& r : records)
        if (assets.count(r.village_id) && demographics.count(r.village_id)) ids.push_back(r.village_id);
    const TileSet tiles = load_tiles(paths, synth::kRound2Year, ids);

    TransferInputs in;
    in.village_ids = tiles.ids;
    in.records = records;
    in.asset_embeddings = embed_all(asset_model, tiles.tiles, cfg.threads);
    in.nightlight_embeddings = embed_all(night_model, tiles.tiles, cfg.threads);
    for (const auto& id : tiles.ids) {
        in.assets.push_back(assets.at(id));
        const auto d = demographics.at(id).as_array();
        in.demographics.emplace_back(d.begin(), d.end());
        in.strata.push_back(rec_by_id.at(id).state_id);
    }
    const fs::path s4 = cfg.data_dir / "survey" / "nfhs4.csv", s5 = cfg.data_dir / "survey" / "nfhs5.csv";
    if (fs::exists(s4)) in.nfhs4 = ingest::load_health_vectors(s4, ingest::SurveyRound::nfhs4).vectors;
    if (fs::exists(s5)) in.nfhs5 = ingest::load_health_vectors(s5, ingest::SurveyRound::nfhs5).vectors;
    return transfer_stage(in, cfg.head, &paths);
}

void write_temporal_outputs(const WorkPaths& paths, const align::TemporalReport& report) {
    fs::create_directories(paths.reports());
    fs::create_directories(paths.transforms());
    align::write_temporal_report(paths.reports() / "temporal.csv", report);
    for (const auto& [kind, g] : report.transforms)
        write_checkpoint(paths.transforms() / (std::string(align::kind_name(kind)) + ".eock"), align::to_checkpoint(g));
    bool any_transformed = false;
    for (const auto& [kind, g] : report.transforms) any_transformed = any_transformed || kind != align::TransformKind::none;
    if (any_transformed) {
        const auto best = align::select_transform(report);
        write_text_file(paths.reports() / "selected_transform.txt", std::string(align::kind_name(best)) + "\n");
        log::info("temporal-eval", "selected transform=", align::kind_name(best));
    }
}

align::TemporalReport run_temporal_eval(const PipelineConfig& cfg) {
    cfg.validate();
    const WorkPaths paths{cfg.work_dir};
    const auto records = load_manifest(cfg);
    const auto model = load_model(paths.models() / "asset.eock");
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.village_id);
    const TileSet tiles = load_tiles(paths, synth::kRound1Year, ids);
    std::vector<std::vector<double>> preds(tiles.tiles.size());
    parallel_for(tiles.tiles.size(), cfg.threads, [&](std::size_t i) {
        const auto p = nn::predict(model, tiles.tiles[i]);
        for (std::size_t k = 0; k < ingest::kTehsilCount; ++k) preds[i].push_back(p.at(ingest::asset_index(ingest::kTehsilNames[k])));
    });
    align::TemporalInputs in;
    for (std::size_t i = 0; i < tiles.ids.size(); ++i) in.village_predictions[tiles.ids[i]] = preds[i];
    in.records = records;
    in.truth_early = read_tehsil_truth(paths, synth::kRound1Year);
    in.truth_late = read_tehsil_truth(paths, synth::kRound2Year);
    fs::create_directories(paths.tables());
    write_vectors(paths.tables() / "predictions_2001.csv", "village_id", names_of(ingest::kTehsilNames), in.village_predictions);
    const auto report = align::temporal_eval(in, cfg.transforms, cfg.seed);
    write_temporal_outputs(paths, report);
    return report;
}

std::vector<eval::OutcomeReport> run_evaluate(const fs::path& pred, const fs::path& truth, const fs::path& out,
                                              eval::Level level, const std::string& path_tag) {
    require_file(pred, "prediction table");
    require_file(truth, "truth table");
    const csv::Table p = csv::read(pred), t = csv::read(truth);
    if (p.header.empty() || t.header.empty()) throw SchemaError("evaluate: tables need an id column");
    std::map<std::string, const std::vector<std::string>*> prow, trow;
    for (const auto& r : p.rows) prow[r.at(0)] = &r;
    for (const auto& r : t.rows) trow[r.at(0)] = &r;
    std::vector<std::string> ids;
    for (const auto& [id, r] : trow)
        if (prow.count(id)) ids.push_back(id);
    if (ids.size() != trow.size() || ids.size() != prow.size())
        log::warn("evaluate", "ids aligned on intersection: ", ids.size(), " of pred=", prow.size(), " truth=", trow.size());
    std::vector<eval::OutcomeReport> reports;
    for (std::size_t tc = 1; tc < t.header.size(); ++tc) {
        const auto it = std::find(p.header.begin() + 1, p.header.end(), t.header[tc]);
        if (it == p.header.end()) {
            log::warn("evaluate", "outcome ", t.header[tc], " has no prediction column");
            continue;
        }
        const auto pc = static_cast<std::size_t>(it - p.header.begin());
        std::vector<double> pv, tv;
        for (const auto& id : ids) {
            const auto& a = prow.at(id)->at(pc);
            const auto& b = trow.at(id)->at(tc);
            if (csv::is_absent(a) || csv::is_absent(b)) continue;
            pv.push_back(csv::parse_number(a));
            tv.push_back(csv::parse_number(b));
        }
        reports.push_back({t.header[tc], pv.size() >= 2 ? eval::r_squared(pv, tv) : std::nullopt, pv.size(), level, path_tag});
    }
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    eval::write_reports(out, reports);
    log::info("evaluate", "outcomes=", reports.size(), " rows=", ids.size());
    return reports;
}

void run_report(const PipelineConfig& cfg) {
    const WorkPaths paths{cfg.work_dir};
    if (!fs::is_directory(paths.reports())) throw IoError("no reports under " + paths.reports().string());
    std::ostringstream summary;
    auto load = [&](const std::string& name) -> std::vector<eval::OutcomeReport> {
        const fs::path p = paths.reports() / (name + ".csv");
        return fs::exists(p) ? eval::read_reports(p) : std::vector<eval::OutcomeReport>{};
    };
    auto mean_r2 = [](const std::vector<eval::OutcomeReport>& r) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& x : r)
            if (x.r2) {
                s += *x.r2;
                ++n;
            }
        return n ? s / static_cast<double>(n) : std::nan("");
    };
    for (const std::string name : {"asset_r2", "nightlight_r2", "distal_asset", "distal_nightlight", "assets_via_nightlight"}) {
        const auto r = load(name);
        if (r.empty()) continue;
        write_text_file(paths.reports() / (name + ".svg"), eval::svg_bar_chart(r, name));
        const auto h = eval::r2_histogram(r);
        summary << name << ": outcomes=" << r.size() << " evaluated=" << h.evaluated << " mean_r2=" << csv::format_number(mean_r2(r))
                << " r2>=0=" << h.at_least_zero << " r2>=0.5=" << h.at_least_half << "\n";
        if (name == "asset_r2") write_text_file(paths.reports() / "asset_r2_histogram.svg", eval::svg_histogram(h, "asset R2 histogram"));
    }
    for (const std::string name : {"survey_nfhs4_asset", "survey_nfhs4_nightlight", "survey_nfhs5_asset"}) {
        const fs::path p = paths.reports() / (name + ".csv");
        if (!fs::exists(p)) continue;
        const csv::Table t = csv::read(p);
        std::vector<eval::OutcomeReport> r;
        const auto fc = t.column("factor_id"), rc = t.column("r2"), nc = t.column("n_districts");
        for (const auto& row : t.rows) {
            std::optional<double> v;
            if (!csv::is_absent(row.at(rc))) v = csv::parse_number(row.at(rc));
            r.push_back({row.at(fc), v, static_cast<std::size_t>(csv::parse_number(row.at(nc))), eval::Level::district, name});
        }
        const auto h = eval::r2_histogram(r);
        write_text_file(paths.reports() / (name + "_histogram.svg"), eval::svg_histogram(h, name));
        summary << name << ": factors evaluated=" << h.evaluated << " r2>=0=" << h.at_least_zero << " r2>=0.5=" << h.at_least_half << "\n";
    }
    const fs::path temporal = paths.reports() / "temporal.csv";
    if (fs::exists(temporal)) {
        const csv::Table t = csv::read(temporal);
        const auto oc = t.column("outcome"), kc = t.column("transform"), rc = t.column("r2"), nc = t.column("n_tehsils");
        std::map<std::string, std::vector<eval::OutcomeReport>> by_kind;
        std::vector<std::string> order;
        for (const auto& row : t.rows) {
            std::optional<double> v;
            if (!csv::is_absent(row.at(rc))) v = csv::parse_number(row.at(rc));
            if (!by_kind.count(row.at(kc))) order.push_back(row.at(kc));
            by_kind[row.at(kc)].push_back({row.at(oc), v, static_cast<std::size_t>(csv::parse_number(row.at(nc))), eval::Level::tehsil, row.at(kc)});
        }
        for (const auto& k : order) {
            write_text_file(paths.reports() / ("temporal_" + k + ".svg"), eval::svg_bar_chart(by_kind[k], "temporal R2, transform " + k));
            summary << "temporal " << k << ": mean_r2=" << csv::format_number(mean_r2(by_kind[k])) << "\n";
        }
        if (fs::exists(paths.reports() / "selected_transform.txt"))
            summary << "selected transform: " << read_text_file(paths.reports() / "selected_transform.txt");
    }
    const fs::path cmp = paths.reports() / "path_comparison.csv";
    if (fs::exists(cmp)) {
        const auto a = load("distal_asset"), n = load("distal_nightlight");
        const auto c = eval::compare_paths(a, n);
        summary << "asset vs nightlight (distal): mean_asset=" << csv::format_number(c.mean_asset)
                << " mean_nightlight=" << csv::format_number(c.mean_nightlight) << " mean_delta=" << csv::format_number(c.mean_delta) << "\n";
    }
    write_text_file(paths.reports() / "summary.txt", summary.str());
    log::info("report", "written=", (paths.reports() / "summary.txt").string());
}

void run_all(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.world_spec) {
        synth::WorldSpec spec = synth::WorldSpec::read(*cfg.world_spec);
        synth::generate_world(spec, cfg.data_dir, cfg.threads);
    }
    run_composite(cfg, synth::kRound1Year);
    run_composite(cfg, synth::kRound2Year);
    run_build_assets(cfg);
    run_train(cfg);
    run_train_nightlight(cfg);
    run_transfer(cfg);
    run_temporal_eval(cfg);
    run_report(cfg);
}

}  // namespace geoproxy::pipeline
