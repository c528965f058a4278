#include <fstream>
#include <sstream>

#include "doctest.h"
#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/ingest.hpp"
#include "support.hpp"

using namespace geoproxy;
using namespace geoproxy::ingest;

namespace {

CensusRow full_row(double value) {
    CensusRow row;
    for (const auto& f : asset_formulas())
        for (int c : f.columns) row[c] = value;
    return row;
}

TehsilTables full_tables(int year, double value, double denominator) {
    TehsilTables t;
    for (const auto& f : tehsil_formulas(year)) {
        auto& cols = t[std::string(f.table)];
        for (const auto& term : f.numerator)
            for (int c : term.columns) cols.emplace(c, value);
        cols[f.denominator] = denominator;
    }
    return t;
}

std::size_t tehsil_index(std::string_view name) {
    for (std::size_t k = 0; k < kTehsilCount; ++k)
        if (kTehsilNames[k] == name) return k;
    FAIL("unknown tehsil outcome");
    return 0;
}

std::string survey_header() {
    std::string h = "district_id";
    for (int f = 1; f <= kHealthFactorCount; ++f) h += "," + health_factor_id(f);
    return h + "\n";
}

std::string survey_row(const std::string& id, int columns = kHealthFactorCount) {
    std::string r = id;
    for (int f = 1; f <= columns; ++f) r += f == 3 ? ",940" : f == 37 ? ",2500" : "," + std::to_string(f % 90);
    return r + "\n";
}

}  // namespace

TEST_CASE("asset vector formulas") {
    CensusRow row = full_row(0.0);
    row[128] = 30;
    row[129] = 30;
    row[130] = 30;
    row[131] = 0;
    row[140] = 55;
    const AssetVector16 a = build_asset_vector(row);
    CHECK(a[asset_index("electronics")] == doctest::Approx(0.30));
    CHECK(a[asset_index("permanent-house")] == doctest::Approx(0.55));
    CHECK(a[asset_index("has-phone")] == 0.0);

    const AssetVector16 zero = build_asset_vector(full_row(0.0));
    for (double v : zero.values) CHECK(v == 0.0);
}

TEST_CASE("asset vector sums columns and clamps") {
    CensusRow row = full_row(10.0);
    const AssetVector16 a = build_asset_vector(row);
    CHECK(a[asset_index("rooms-under-3")] == doctest::Approx(0.30));
    CHECK(a[asset_index("water-natural")] == doctest::Approx(0.50));
    CHECK(a[asset_index("electronics")] == doctest::Approx(40.0 / 300.0));
    CHECK(a[asset_index("transport-cycle")] == doctest::Approx(0.10));
    const AssetVector16 big = build_asset_vector(full_row(90.0));
    for (double v : big.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(big[asset_index("electronics")] == 1.0);
}

TEST_CASE("missing census column is named") {
    CensusRow row = full_row(1.0);
    row.erase(133);
    try {
        (void)build_asset_vector(row);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("[133]") != std::string::npos);
    }
}

TEST_CASE("asset vector is monotone in every source column") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        CensusRow row;
        for (const auto& f : asset_formulas())
            for (int c : f.columns) row[c] = uniform(rng, 0.0, 30.0);
        const AssetVector16 base = build_asset_vector(row);
        for (auto& [col, v] : row) {
            CensusRow up = row;
            up[col] = v + uniform(rng, 0.0, 20.0);
            const AssetVector16 a = build_asset_vector(up);
            for (std::size_t k = 0; k < kAssetCount; ++k) CHECK(a[k] >= base[k]);
        }
    }
}

TEST_CASE("tehsil vector formulas for both rounds") {
    TehsilTables t11 = full_tables(2011, 0.0, 100.0);
    t11["HH-7"][9] = 40;
    t11["HH-7"][11] = 10;
    const auto v11 = build_tehsil_vector("t1", t11, 2011);
    REQUIRE(v11);
    CHECK(v11->year == 2011);
    CHECK(v11->values[tehsil_index("electric-like")] == doctest::Approx(0.5));

    TehsilTables t01 = full_tables(2001, 0.0, 200.0);
    t01["H-9"][3] = 90;
    t01["H-9"][5] = 10;
    const auto v01 = build_tehsil_vector("t1", t01, 2001);
    REQUIRE(v01);
    CHECK(v01->values[tehsil_index("electric-like")] == doctest::Approx(0.5));

    TehsilTables sat = full_tables(2001, 0.0, 50.0);
    sat["H-13"][6] = 50;
    CHECK(build_tehsil_vector("t1", sat, 2001)->values[tehsil_index("has-phone")] == 1.0);
}

TEST_CASE("tehsil electronics and cooking formulas") {
    TehsilTables t = full_tables(2011, 0.0, 100.0);
    for (int c : {10, 11, 12, 13}) t["HH-12"][c] = 15;
    t["HH-12"][20] = 5;
    t["HH-10"][9] = 40;
    t["HH-10"][14] = 10;
    t["HH-10"][15] = 10;
    const auto v = build_tehsil_vector("t", t, 2011);
    REQUIRE(v);
    CHECK(v->values[tehsil_index("electronics")] == doctest::Approx((60.0 / 3.0 + 5.0) / 100.0));
    CHECK(v->values[tehsil_index("cook-fuel-processed")] == doctest::Approx(0.5));
    CHECK(v->values[tehsil_index("bathroom-within")] == doctest::Approx(0.4));

    TehsilTables t01 = full_tables(2001, 0.0, 100.0);
    t01["H-13"][4] = 20;
    t01["H-13"][5] = 10;
    CHECK(build_tehsil_vector("t", t01, 2001)->values[tehsil_index("electronics")] == doctest::Approx(0.3));
}

TEST_CASE("zero denominator excludes the tehsil") {
    TehsilTables t = full_tables(2011, 1.0, 0.0);
    CHECK_FALSE(build_tehsil_vector("t", t, 2011).has_value());
    CHECK_THROWS_AS(tehsil_formulas(2005), InputError);
    TehsilTables missing = full_tables(2011, 1.0, 10.0);
    missing.erase("HH-12");
    CHECK_THROWS_AS(build_tehsil_vector("t", missing, 2011), SchemaError);
}

TEST_CASE("survey files") {
    std::string text = survey_header();
    for (int d = 0; d < 189; ++d) text += survey_row("d" + std::to_string(d));
    std::istringstream in(text);
    const HealthLoad all = load_health_vectors(in, SurveyRound::nfhs4);
    CHECK(all.vectors.size() == 189);
    CHECK(all.rejected == 0);
    CHECK(all.vectors.at("d7").factors[2] == 940.0);
    CHECK(all.vectors.at("d7").round == SurveyRound::nfhs4);

    std::istringstream empty("");
    CHECK(load_health_vectors(empty, SurveyRound::nfhs5).vectors.empty());

    std::string bad = survey_header() + survey_row("a") + survey_row("b", 60) + survey_row("c");
    std::istringstream in2(bad);
    const HealthLoad some = load_health_vectors(in2, SurveyRound::nfhs5);
    CHECK(some.vectors.size() == 2);
    CHECK(some.rejected == 1);
}

TEST_CASE("absent survey factors are not zero") {
    std::string row = "d1";
    for (int f = 1; f <= kHealthFactorCount; ++f) row += f == 10 ? ",NA" : f == 11 ? "," : ",0";
    std::istringstream in(survey_header() + row + "\n");
    const auto v = load_health_vectors(in, SurveyRound::nfhs4).vectors.at("d1");
    CHECK_FALSE(v.factors[9].has_value());
    CHECK_FALSE(v.factors[10].has_value());
    REQUIRE(v.factors[11].has_value());
    CHECK(*v.factors[11] == 0.0);
}

TEST_CASE("out-of-range survey values reject the row") {
    std::string row = "d1";
    for (int f = 1; f <= kHealthFactorCount; ++f) row += f == 5 ? ",140" : ",1";
    std::istringstream in(survey_header() + row + "\n" + survey_row("d2"));
    const auto load = load_health_vectors(in, SurveyRound::nfhs4);
    CHECK(load.vectors.size() == 1);
    CHECK(load.rejected == 1);
    std::istringstream wrong("district_id,factor-2\nd,1\n");
    CHECK_THROWS_AS(load_health_vectors(wrong, SurveyRound::nfhs4), SchemaError);
}

TEST_CASE("health factor catalogue") {
    CHECK(health_factor_id(37) == "factor-37");
    CHECK(health_factor_description(3).find("1,000") != std::string_view::npos);
    CHECK(health_factor_description(93) == "Oral cavity (%)");
    CHECK_THROWS_AS(health_factor_description(94), InputError);
    CHECK(parse_round("NFHS-5") == SurveyRound::nfhs5);
    CHECK(round_name(SurveyRound::nfhs4) == "NFHS-4");
}

TEST_CASE("village manifest round trip") {
    testing::TempDir dir("manifest");
    std::vector<VillageRecord> v{{"v1", {23.5, 80.25}, 1234.0, "t1", "d1", "s1"},
                                 {"v2", {22.125, 79.5}, 0.0, "t2", "d1", "s1"}};
    write_village_manifest(dir / "villages.jsonl", v);
    const auto back = read_village_manifest(dir / "villages.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].village_id == "v1");
    CHECK(back[0].centroid.lat == 23.5);
    CHECK(back[1].population == 0.0);
    CHECK(back[1].tehsil_id == "t2");

    std::istringstream negative(R"({"village_id":"x","lat":1,"lon":2,"population":-1,"tehsil_id":"t","district_id":"d","state_id":"s"})");
    CHECK_THROWS_AS(parse_village_manifest(negative), SchemaError);
    std::istringstream missing(R"({"village_id":"x","lat":1})");
    CHECK_THROWS_AS(parse_village_manifest(missing), SchemaError);
}

TEST_CASE("census tables round trip bit-exactly") {
    testing::TempDir dir("census");
    Rng rng(6);
    std::map<std::string, CensusRow> rows;
    for (int i = 0; i < 5; ++i) {
        CensusRow r;
        for (int c : {49, 50, 140}) r[c] = uniform(rng, 0.0, 100.0);
        rows["v" + std::to_string(i)] = r;
    }
    write_census_table(dir / "t.csv", "village_id", rows);
    CHECK(read_census_table(dir / "t.csv") == rows);
    CHECK(csv::read(dir / "t.csv").header == std::vector<std::string>{"village_id", "[49]", "[50]", "[140]"});
}

TEST_CASE("demographics are read in percent and stored as fractions") {
    testing::TempDir dir("demo");
    std::ofstream(dir / "d.csv") << "village_id,literacy_rate,working_population_share,scheduled_caste_share,scheduled_tribe_share\n"
                                 << "v1,55.5,40,12.25,0\n";
    const auto d = read_demographics(dir / "d.csv");
    CHECK(d.at("v1").literacy_rate == doctest::Approx(0.555));
    CHECK(d.at("v1").scheduled_caste_share == doctest::Approx(0.1225));
    CHECK(d.at("v1").scheduled_tribe_share == 0.0);
}
