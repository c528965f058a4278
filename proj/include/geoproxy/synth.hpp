#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "geoproxy/compositing.hpp"
#include "geoproxy/ingest.hpp"
#include "geoproxy/nn.hpp"

namespace geoproxy::synth {

inline constexpr int kRound1Year = 2001;
inline constexpr int kRound2Year = 2011;
inline constexpr double kMinVillageSpacing = 6000.0;

// y2 = mu1 + shift + scale * (y1 - mu1), per tehsil outcome.
struct Drift {
    double shift = 0.0;
    double scale = 1.0;
    bool operator==(const Drift&) const = default;
};

using DriftProfile = std::array<Drift, ingest::kTehsilCount>;

DriftProfile default_drift();  // has-phone +0.6, the rest between -0.15 and +0.25
DriftProfile zero_drift();

// Key-value text ("key = value", '#' comments). Keys: seed, n_states,
// n_districts, n_tehsils, n_villages, scenes_per_year, cloud_rate,
// slc_gap_rate, village_spacing_m, center_lat, center_lon,
// independent_factors (comma list), drift_profile (default|zero) and
// drift.<outcome> = shift,scale.
struct WorldSpec {
    std::uint64_t seed = 1;
    int n_states = 2;
    int n_districts = 10;
    int n_tehsils = 40;
    int n_villages = 2000;
    int scenes_per_year = 4;
    double cloud_rate = 0.25;    // share of scenes carrying clouds
    double slc_gap_rate = 1.0;   // share of round-2 scenes carrying stripe gaps
    double village_spacing_m = 8000.0;
    double center_lat = 23.0;
    double center_lon = 80.0;
    DriftProfile drift = default_drift();
    std::vector<int> independent_factors;  // health factors unrelated to the latent score

    WorldSpec();
    void validate() const;  // throws SpecError
    std::string to_text() const;
    static WorldSpec parse(std::string_view text);  // throws SpecError
    static WorldSpec read(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;
    bool operator==(const WorldSpec&) const = default;
};

struct LatentVillage {
    std::string village_id;
    double z = 0.0;  // development score in [0, 1]
    double q = 0.0;  // housing quality in [0, 1], independent of z
    double built_up_density = 0.0;  // roof share of the footprint
    double road_fraction = 0.0;
    double roof_brightness = 0.0;   // mean roof albedo
    double population = 0.0;
};

// Asset fractions before sampling noise; nondecreasing in z for every asset.
ingest::AssetVector16 noiseless_assets(double z, double q);

struct World {
    WorldSpec spec;
    std::vector<ingest::VillageRecord> villages;  // ordered by id
    std::vector<LatentVillage> latents;
    std::vector<ingest::AssetVector16> assets_noiseless;
    std::map<std::string, ingest::CensusRow> village_census;  // 2011 amenities, percentages
    std::vector<ingest::AssetVector16> assets;                // derived from village_census
    std::vector<std::array<double, ingest::kTehsilCount>> outcomes_round1;
    std::vector<std::array<double, ingest::kTehsilCount>> outcomes_round2;
    std::vector<ingest::DemographicVector> demographics;
    std::map<int, std::map<std::string, ingest::TehsilTables>> tehsil_tables;  // year -> tehsil -> tables
    std::map<int, std::map<std::string, ingest::TehsilVector10>> tehsil_truth;
    std::map<std::string, double> district_z;  // population-weighted
    std::array<bool, ingest::kHealthFactorCount> linked{};
    std::array<int, ingest::kHealthFactorCount> sign{};
    std::map<std::string, ingest::HealthVector93> nfhs4, nfhs5;
    nn::NightlightGrid nightlight;

    std::size_t index_of(const std::string& village_id) const;
};

// Everything except imagery, which is rendered per village on demand.
World build_world(const WorldSpec& spec);

// 120 x 120 elevation grid at 30 m in the village's local frame.
RasterGrid village_dem(const World& world, std::size_t village);

// The village's scenes for one round (2001 or 2011), with illumination from
// village_dem.
std::vector<compositing::SceneWithIllumination> render_scenes(const World& world, std::size_t village, int year);

struct OracleAnswers {
    std::vector<LatentVillage> latents;
    std::vector<ingest::AssetVector16> assets_noiseless;
    std::map<std::string, double> district_z;
    std::array<bool, ingest::kHealthFactorCount> linked{};
    DriftProfile drift{};
};

OracleAnswers oracle_answers(const WorldSpec& spec);
OracleAnswers oracle_answers(const World& world);

// Writes world.cfg, villages.jsonl, census/, survey/, nightlight/, oracle/
// and scenes/<village>/{dem.eorc, <year>/<k>/...} under out.
void generate_world(const WorldSpec& spec, const std::filesystem::path& out, int threads = 1);

// Scene directory: ms.eorc, pan.eorc, qa.bin and scene.json.
void write_scene(const std::filesystem::path& dir, const Scene& scene);
Scene read_scene(const std::filesystem::path& dir);
// Scenes of one village-year as written by generate_world, illumination
// recomputed from the stored DEM.
std::vector<compositing::SceneWithIllumination> read_village_scenes(const std::filesystem::path& data_dir,
                                                                    const std::string& village_id, int year);

}  // namespace geoproxy::synth
