#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "geoproxy/error.hpp"
#include "geoproxy/ingest.hpp"
#include "geoproxy/raster_io.hpp"
#include "geoproxy/synth.hpp"
#include "support.hpp"

using namespace geoproxy;
using namespace geoproxy::synth;
namespace fs = std::filesystem;

namespace {

WorldSpec small_spec(std::uint64_t seed = 3) {
    WorldSpec s;
    s.seed = seed;
    s.n_states = 1;
    s.n_districts = 2;
    s.n_tehsils = 4;
    s.n_villages = 12;
    s.scenes_per_year = 2;
    return s;
}

WorldSpec medium_spec(std::uint64_t seed = 4) {
    WorldSpec s;
    s.seed = seed;
    s.n_states = 2;
    s.n_districts = 30;
    s.n_tehsils = 60;
    s.n_villages = 600;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("world spec text round trip and validation") {
    WorldSpec s = small_spec();
    s.drift[3] = {0.4, 1.25};
    s.independent_factors = {2, 7};
    const WorldSpec back = WorldSpec::parse(s.to_text());
    CHECK(back == s);

    const WorldSpec p = WorldSpec::parse("# comment\nseed = 9\nn_villages = 50\ndrift_profile = zero\ndrift.has-phone = 0.3, 1.0\n");
    CHECK(p.seed == 9);
    CHECK(p.n_villages == 50);
    CHECK(p.drift[3] == Drift{0.3, 1.0});
    CHECK(p.drift[0] == Drift{0.0, 1.0});

    CHECK_THROWS_AS(WorldSpec::parse("colour = red\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("n_villages = many\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("n_villages = 10\nn_tehsils = 40\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("drift.has-phone = 0.1, 0\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("drift.literacy = 0.1, 1\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("independent_factors = 4,4\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("independent_factors = 94\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("village_spacing_m = 3000\n"), SpecError);
    CHECK_THROWS_AS(WorldSpec::parse("cloud_rate = 1.5\n"), SpecError);

    testing::TempDir dir("spec");
    s.write(dir / "w.cfg");
    CHECK(WorldSpec::read(dir / "w.cfg") == s);
}

TEST_CASE("noiseless assets are bounded and monotone in development") {
    for (double q : {0.0, 0.3, 0.7, 1.0}) {
        ingest::AssetVector16 prev = noiseless_assets(0.0, q);
        for (int i = 1; i <= 100; ++i) {
            const ingest::AssetVector16 a = noiseless_assets(i / 100.0, q);
            for (std::size_t k = 0; k < ingest::kAssetCount; ++k) {
                CHECK(a[k] >= prev[k]);
                CHECK(a[k] >= 0.0);
                CHECK(a[k] <= 1.0);
            }
            prev = a;
        }
    }
}

TEST_CASE("world construction is deterministic") {
    const World a = build_world(small_spec()), b = build_world(small_spec());
    CHECK(a.villages.size() == 12);
    CHECK(a.village_census == b.village_census);
    CHECK(a.nightlight.values == b.nightlight.values);
    for (std::size_t i = 0; i < a.villages.size(); ++i) {
        CHECK(a.latents[i].z == b.latents[i].z);
        CHECK(a.assets[i].values == b.assets[i].values);
    }
    const World c = build_world(small_spec(4));
    CHECK(c.village_census != a.village_census);
    CHECK(a.index_of(a.villages[5].village_id) == 5);
    CHECK_THROWS(a.index_of("nope"));
}

TEST_CASE("world structure") {
    const World w = build_world(medium_spec());
    std::set<std::string> tehsils, districts, states;
    for (const auto& v : w.villages) {
        tehsils.insert(v.tehsil_id);
        districts.insert(v.district_id);
        states.insert(v.state_id);
    }
    CHECK(tehsils.size() == 60);
    CHECK(districts.size() == 30);
    CHECK(states.size() == 2);
    CHECK(w.nfhs4.size() == 30);
    CHECK(w.district_z.size() == 30);
    for (const auto& a : w.assets)
        for (double v : a.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    // village footprints never overlap
    for (std::size_t i = 1; i < w.villages.size(); ++i) {
        const LocalFrame f{w.villages[i - 1].centroid};
        const PointXY p = f.project(w.villages[i].centroid);
        CHECK(std::max(std::abs(p.x), std::abs(p.y)) > kFootprintSide);
    }
}

TEST_CASE("nightlight and built-up density follow development") {
    const World w = build_world(medium_spec());
    std::vector<double> z, light, built;
    for (std::size_t i = 0; i < w.villages.size(); ++i) {
        const double nl = nn::sample_nightlight(w.nightlight, w.villages[i].centroid);
        z.push_back(w.latents[i].z);
        light.push_back(nl);
        built.push_back(w.latents[i].built_up_density);
        CHECK(std::abs(nl - 63.0 * w.latents[i].z) < 6.0);
        if (w.latents[i].z == 0.0) CHECK(nl <= 5.0);
    }
    CHECK(testing::pearson(z, light) > 0.95);
    CHECK(testing::pearson(z, built) > 0.6);
    // the least developed tenth is sparsely built
    std::vector<std::size_t> order(z.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return z[a] < z[b]; });
    double low = 0.0, high = 0.0;
    for (std::size_t k = 0; k < 60; ++k) low += built[order[k]] / 60, high += built[order[order.size() - 1 - k]] / 60;
    CHECK(low < 0.5 * high);
}

TEST_CASE("zero drift keeps both rounds equal") {
    WorldSpec s = medium_spec();
    s.drift = zero_drift();
    const World w = build_world(s);
    for (std::size_t i = 0; i < w.villages.size(); ++i)
        for (std::size_t k = 0; k < ingest::kTehsilCount; ++k) CHECK(std::abs(w.outcomes_round1[i][k] - w.outcomes_round2[i][k]) < 1e-12);
    for (const auto& [id, late] : w.tehsil_truth.at(2011)) {
        const auto& early = w.tehsil_truth.at(2001).at(id);
        for (std::size_t k = 0; k < ingest::kTehsilCount; ++k) CHECK(std::abs(early.values[k] - late.values[k]) < 0.01);
    }
}

TEST_CASE("drift shifts the round-2 distribution") {
    WorldSpec s = medium_spec();
    s.drift = zero_drift();
    s.drift[0] = {0.05, 1.0};
    s.drift[4] = {-0.04, 1.0};
    const World w = build_world(s);
    for (std::size_t k : {std::size_t{0}, std::size_t{4}}) {
        std::vector<double> d;
        for (std::size_t i = 0; i < w.villages.size(); ++i) {
            const double y1 = w.outcomes_round1[i][k];
            if (y1 > 0.0 && y1 < 1.0) d.push_back(w.outcomes_round2[i][k] - y1);
        }
        const double m = mean(d);
        double ss = 0.0;
        for (double x : d) ss += (x - m) * (x - m);
        const double se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
        CHECK(std::abs(m - s.drift[k].shift) <= 3.0 * se + 1e-12);
    }
    CHECK(default_drift()[3].shift == 0.6);
}

TEST_CASE("tehsil truth is the household-weighted village mean") {
    const World w = build_world(medium_spec());
    std::map<std::string, std::pair<double, std::array<double, ingest::kTehsilCount>>> acc;
    for (std::size_t i = 0; i < w.villages.size(); ++i) {
        const double h = std::max(1.0, std::round(w.villages[i].population / 5.0));
        auto& a = acc[w.villages[i].tehsil_id];
        a.first += h;
        for (std::size_t k = 0; k < ingest::kTehsilCount; ++k) a.second[k] += h * w.outcomes_round2[i][k];
    }
    for (const auto& [id, a] : acc) {
        const auto& truth = w.tehsil_truth.at(2011).at(id);
        for (std::size_t k = 0; k < ingest::kTehsilCount; ++k)
            CHECK(std::abs(truth.values[k] - a.second[k] / a.first) < 5.0 / a.first + 1e-9);
    }
}

TEST_CASE("health factors link to development as flagged") {
    const World w = build_world(medium_spec());
    std::vector<double> z;
    for (const auto& [id, v] : w.district_z) z.push_back(v);
    for (int f = 1; f <= ingest::kHealthFactorCount; ++f) {
        std::vector<double> y;
        for (const auto& [id, v] : w.district_z) y.push_back(*w.nfhs4.at(id).factors[static_cast<std::size_t>(f - 1)]);
        const double rho = testing::pearson(z, y);
        if (w.linked[static_cast<std::size_t>(f - 1)])
            CHECK(std::abs(rho) >= 0.6);
        else
            CHECK(std::abs(rho) <= 0.1);
    }
    CHECK_FALSE(w.linked[2]);
    CHECK(w.linked[0]);
    // the follow-up round carries factors 29 to 71 only
    const auto& d5 = w.nfhs5.begin()->second;
    CHECK(d5.factors[28].has_value());
    CHECK(d5.factors[70].has_value());
    CHECK_FALSE(d5.factors[27].has_value());
    CHECK_FALSE(d5.factors[71].has_value());
}

TEST_CASE("rendered scenes") {
    const World w = build_world(small_spec());
    const auto scenes = render_scenes(w, 0, 2011);
    CHECK(scenes.size() == 2);
    for (const auto& s : scenes) {
        CHECK(s.scene.ms.width() == 120);
        CHECK(s.scene.pan.width() == 240);
        CHECK(s.scene.acquired.year == 2011);
        CHECK(s.illumination.cos_i.size() == s.scene.ms.pixel_count());
    }
    CHECK(render_scenes(w, 0, 2001).front().scene.acquired.year == 2001);
    CHECK_THROWS_AS(render_scenes(w, 0, 2005), InputError);
    CHECK_THROWS_AS(render_scenes(w, 99, 2011), InputError);
    const RasterGrid dem = village_dem(w, 0);
    CHECK(dem.width() == 120);
}

TEST_CASE("generated worlds are byte-identical and ingest back exactly") {
    testing::TempDir a("gen_a"), b("gen_b");
    generate_world(small_spec(), a.path(), 1);
    generate_world(small_spec(), b.path(), 2);
    const auto ta = tree(a.path()), tb = tree(b.path());
    CHECK(ta.size() == tb.size());
    CHECK(ta == tb);
    CHECK(ta.count("world.cfg"));
    CHECK(ta.count("oracle/latent.csv"));

    const World w = build_world(small_spec());
    const auto records = ingest::read_village_manifest(a / "villages.jsonl");
    REQUIRE(records.size() == w.villages.size());
    CHECK(records[3].village_id == w.villages[3].village_id);
    CHECK(records[3].centroid.lat == w.villages[3].centroid.lat);
    const auto census = ingest::read_census_table(a / "census" / "village_2011.csv");
    CHECK(census == w.village_census);
    for (std::size_t i = 0; i < w.villages.size(); ++i)
        CHECK(ingest::build_asset_vector(census.at(w.villages[i].village_id)).values == w.assets[i].values);
    for (int year : {2001, 2011})
        for (const auto& table : ingest::tehsil_tables(year)) {
            const auto rows = ingest::read_census_table(a / "census" / ("tehsil_" + std::to_string(year) + "_" + table + ".csv"));
            for (const auto& [tid, row] : rows) CHECK(row == w.tehsil_tables.at(year).at(tid).at(table));
        }
    const auto h4 = ingest::load_health_vectors(a / "survey" / "nfhs4.csv", ingest::SurveyRound::nfhs4);
    CHECK(h4.vectors.size() == w.nfhs4.size());
    CHECK(h4.vectors.begin()->second.factors == w.nfhs4.begin()->second.factors);
    CHECK(nn::NightlightGrid::from_raster(read_eorc(a / "nightlight" / "nightlight.eorc")).values == w.nightlight.values);

    const auto scenes = read_village_scenes(a.path(), w.villages[2].village_id, 2011);
    const auto direct = render_scenes(w, 2, 2011);
    REQUIRE(scenes.size() == direct.size());
    CHECK(scenes[1].scene.ms == direct[1].scene.ms);
    CHECK(scenes[1].scene.qa == direct[1].scene.qa);
    CHECK(scenes[1].illumination.cos_i == direct[1].illumination.cos_i);
    CHECK_THROWS_AS(read_village_scenes(a.path(), "v99999", 2011), IoError);
}

TEST_CASE("oracle answers") {
    const World w = build_world(small_spec());
    const OracleAnswers o = oracle_answers(small_spec());
    CHECK(o.latents.size() == w.latents.size());
    CHECK(o.latents[4].z == w.latents[4].z);
    CHECK(o.district_z == w.district_z);
    CHECK(o.drift == w.spec.drift);
}
