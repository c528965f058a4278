#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geoproxy/raster.hpp"

namespace geoproxy::ingest {

struct VillageRecord {
    std::string village_id;
    LatLon centroid;
    double population = 0.0;
    std::string tehsil_id;
    std::string district_id;
    std::string state_id;
};

// One JSON object per line: {village_id, lat, lon, population, tehsil_id, district_id, state_id}.
std::vector<VillageRecord> read_village_manifest(const std::filesystem::path& path);
std::vector<VillageRecord> parse_village_manifest(std::istream& in);
void write_village_manifest(const std::filesystem::path& path, const std::vector<VillageRecord>& villages);

inline constexpr std::size_t kAssetCount = 16;
inline constexpr std::array<std::string_view, kAssetCount> kAssetNames = {
    "rooms-under-3",       "household-size-under-5",        "water-treated",       "water-untreated",
    "water-natural",       "electric-like",                 "oil-like",            "electronics",
    "has-phone",           "transport-cycle",               "transport-motorized", "no-assets",
    "banking-services-availability", "cook-fuel-processed", "bathroom-within",     "permanent-house"};

std::size_t asset_index(std::string_view name);

// Village-level asset fractions in [0, 1], ordered as kAssetNames.
struct AssetVector16 {
    std::array<double, kAssetCount> values{};

    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }
    bool operator==(const AssetVector16&) const = default;
};

// Census column index -> value. Village tables carry percentages of
// households; tehsil tables carry household counts.
using CensusRow = std::map<int, double>;

struct AssetFormula {
    std::string_view name;
    std::vector<int> columns;  // summed
    double divisor = 1.0;
};

// Aggregations over the village amenities table, one per asset.
const std::array<AssetFormula, kAssetCount>& asset_formulas();

// Throws SchemaError naming the first missing column.
AssetVector16 build_asset_vector(const CensusRow& row);

inline constexpr std::size_t kTehsilCount = 10;
inline constexpr std::array<std::string_view, kTehsilCount> kTehsilNames = {
    "electric-like", "oil-like",  "electronics",   "has-phone",           "transport-cycle",
    "transport-motorized", "no-assets", "banking-services-availability", "cook-fuel-processed", "bathroom-within"};

struct TehsilVector10 {
    std::string tehsil_id;
    int year = 0;
    std::array<double, kTehsilCount> values{};
};

struct TehsilTerm {
    std::vector<int> columns;
    double divisor = 1.0;
};

// value = (sum over terms of sum(columns) / divisor) / [denominator]
struct TehsilFormula {
    std::string_view name;
    std::string_view table;
    std::vector<TehsilTerm> numerator;
    int denominator = 0;
};

// Formulas for census round 2011 or 2001; any other year throws InputError.
const std::vector<TehsilFormula>& tehsil_formulas(int year);
std::vector<std::string> tehsil_tables(int year);

// Table name -> columns for one tehsil.
using TehsilTables = std::map<std::string, CensusRow>;

// Returns nullopt (and logs) when a denominator is zero.
std::optional<TehsilVector10> build_tehsil_vector(const std::string& tehsil_id, const TehsilTables& tables, int year);

inline constexpr int kHealthFactorCount = 93;
enum class SurveyRound { nfhs4, nfhs5 };
std::string_view round_name(SurveyRound round);
SurveyRound parse_round(std::string_view name);
std::string_view health_factor_description(int factor);  // 1-based
std::string health_factor_id(int factor);                 // "factor-<n>"

struct HealthVector93 {
    std::string district_id;
    SurveyRound round = SurveyRound::nfhs4;
    std::array<std::optional<double>, kHealthFactorCount> factors{};  // absent != zero
};

struct HealthLoad {
    std::map<std::string, HealthVector93> vectors;
    std::size_t rejected = 0;
};

// Survey CSV: district_id, factor-1..factor-93. Short or out-of-range rows
// are rejected and logged.
HealthLoad load_health_vectors(std::istream& in, SurveyRound round);
HealthLoad load_health_vectors(const std::filesystem::path& path, SurveyRound round);

struct DemographicVector {
    double literacy_rate = 0.0;
    double working_population_share = 0.0;
    double scheduled_caste_share = 0.0;
    double scheduled_tribe_share = 0.0;

    static constexpr std::array<std::string_view, 4> names = {
        "literacy_rate", "working_population_share", "scheduled_caste_share", "scheduled_tribe_share"};
    std::array<double, 4> as_array() const {
        return {literacy_rate, working_population_share, scheduled_caste_share, scheduled_tribe_share};
    }
};

// Census tables keyed by bracketed column headers ("[49]"); first column is the id.
std::map<std::string, CensusRow> read_census_table(const std::filesystem::path& path);
void write_census_table(const std::filesystem::path& path, const std::string& id_column,
                        const std::map<std::string, CensusRow>& rows);

// Demographics CSV in percentages: village_id plus DemographicVector::names.
std::map<std::string, DemographicVector> read_demographics(const std::filesystem::path& path);

}  // namespace geoproxy::ingest
