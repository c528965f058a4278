#include "geoproxy/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/parallel.hpp"
#include "geoproxy/raster_io.hpp"
#include "geoproxy/rng.hpp"

namespace geoproxy::synth {

namespace fs = std::filesystem;
using ingest::kTehsilCount;
using ingest::kTehsilNames;

namespace {

enum Tag : std::uint64_t {
    kTagDistrict = 0x51d0,
    kTagTehsil,
    kTagVillage,
    kTagGeo,
    kTagNoise,
    kTagHealth,
    kTagNight,
    kTagLayout,
    kTagDem,
    kTagScene,
};

constexpr double kC = 0.3;           // shading constant of the renderer
constexpr int kMsSize = 120;         // 30 m pixels, 3600 m
constexpr int kPanSize = 2 * kMsSize;
constexpr double kHalfExtent = kMsSize * kMsPixelSize / 2.0;

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

double hash01(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    const std::uint64_t h = splitmix64(seed ^ splitmix64(a * 0x9e3779b97f4a7c15ULL + b));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::string padded(char prefix, int v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%0*d", prefix, width, v);
    return buf;
}

double round_to(double v, double step) { return std::round(v / step) * step; }

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

double spec_number(const std::string& key, const std::string& value) {
    try {
        return csv::parse_number(value);
    } catch (const std::exception&) {
        throw SpecError("world spec: '" + key + "' expects a number, got '" + value + "'");
    }
}

int spec_int(const std::string& key, const std::string& value) {
    const double v = spec_number(key, value);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw SpecError("world spec: '" + key + "' expects an integer");
    return static_cast<int>(v);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

// Splits total into the given columns with decreasing fixed proportions; the
// last column absorbs rounding.
void split_into(ingest::CensusRow& row, const std::vector<int>& cols, double total, double step) {
    const auto m = cols.size();
    double wsum = 0.0;
    for (std::size_t j = 0; j < m; ++j) wsum += static_cast<double>(m - j);
    total = round_to(total, step);
    double used = 0.0;
    for (std::size_t j = 0; j + 1 < m; ++j) {
        const double v = round_to(total * static_cast<double>(m - j) / wsum, step);
        row[cols[j]] = v;
        used += v;
    }
    row[cols.back()] = round_to(total - used, step);
}

std::size_t tehsil_asset(std::size_t k) { return ingest::asset_index(kTehsilNames[k]); }

ingest::TehsilTables tehsil_tables_for(int year, double households, const std::array<double, kTehsilCount>& n) {
    // n[k]: household count with outcome k
    enum { elec, oil, electronics, phone, cycle, motor, none, bank, cook, bath };
    ingest::TehsilTables t;
    const double H = households;
    auto cnt = [](double v) { return std::round(v); };
    if (year == kRound2Year) {
        auto& hh7 = t["HH-7"];
        hh7[8] = H;
        split_into(hh7, {9, 11}, n[elec], 1.0);
        split_into(hh7, {10, 12}, n[oil], 1.0);
        auto& hh12 = t["HH-12"];
        hh12[8] = H;
        hh12[9] = cnt(n[bank]);
        split_into(hh12, {10, 11, 12, 13}, 3.0 * n[electronics], 1.0);
        split_into(hh12, {14, 15, 16}, n[phone], 1.0);
        hh12[17] = cnt(n[cycle]);
        split_into(hh12, {18, 19}, n[motor], 1.0);
        hh12[20] = 0.0;
        hh12[21] = cnt(n[none]);
        auto& hh10 = t["HH-10"];
        hh10[8] = H;
        hh10[9] = cnt(n[bath]);
        split_into(hh10, {14, 15}, n[cook] / H * hh10[9], 1.0);
    } else if (year == kRound1Year) {
        auto& h9 = t["H-9"];
        h9[2] = H;
        split_into(h9, {3, 5}, n[elec], 1.0);
        split_into(h9, {4, 6}, n[oil], 1.0);
        auto& h13 = t["H-13"];
        h13[2] = H;
        h13[3] = cnt(n[bank]);
        split_into(h13, {4, 5}, n[electronics], 1.0);
        h13[6] = cnt(n[phone]);
        h13[7] = cnt(n[cycle]);
        split_into(h13, {8, 9}, n[motor], 1.0);
        h13[10] = cnt(n[none]);
        auto& h10 = t["H-10"];
        h10[3] = H;
        split_into(h10, {8, 9}, n[cook], 1.0);
        auto& h11 = t["H-11"];
        h11[2] = H;
        h11[3] = cnt(n[bath]);
    } else {
        throw InputError("no census round for year " + std::to_string(year));
    }
    return t;
}

// Static 15 m land-cover layout of one village; identical in both rounds.
enum : std::uint8_t { kField = 0, kGround = 1, kRoof = 2, kRoad = 3 };

struct Layout {
    std::vector<std::uint8_t> cls;  // kPanSize^2
    std::vector<float> value;       // field vegetation or roof albedo
    std::vector<float> tex;         // static texture in [-1, 1]
};

Layout make_layout(std::uint64_t seed, double z, double q) {
    Rng rng(seed);
    Layout L;
    const std::size_t n = static_cast<std::size_t>(kPanSize) * kPanSize;
    L.cls.assign(n, kField);
    L.value.assign(n, 0.0f);
    L.tex.assign(n, 0.0f);
    const double fw = uniform(rng, 180.0, 420.0), fh = uniform(rng, 180.0, 420.0);
    const double fox = uniform(rng, 0.0, fw), foy = uniform(rng, 0.0, fh);
    const double radius = 250.0 + 1100.0 * z;
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double scx = uniform(rng, -150.0, 150.0), scy = uniform(rng, -150.0, 150.0);
    const double p_roof = 0.25 + 0.5 * z;
    const double spacing = 1000.0 - 750.0 * z;
    const double theta = uniform(rng, 0.0, std::numbers::pi / 2.0);
    const double rox = uniform(rng, 0.0, spacing), roy = uniform(rng, 0.0, spacing);
    const double ct = std::cos(theta), st = std::sin(theta);
    const std::uint64_t hs = rng();
    auto line_dist = [&](double u) {
        const double m = std::fmod(u, spacing);
        const double a = m < 0 ? m + spacing : m;
        return std::min(a, spacing - a);
    };
    for (int r = 0; r < kPanSize; ++r) {
        for (int c = 0; c < kPanSize; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * kPanSize + c;
            const double x = -kHalfExtent + (c + 0.5) * kTilePixelSize;
            const double y = kHalfExtent - (r + 0.5) * kTilePixelSize;
            L.tex[i] = static_cast<float>(2.0 * hash01(hs, 1, i) - 1.0);
            const double u = x * ct + y * st + rox, v = -x * st + y * ct + roy;
            if (std::min(line_dist(u), line_dist(v)) < 7.5) {
                L.cls[i] = kRoad;
                continue;
            }
            // Settlement membership is decided per 30 m block so roofs stay whole.
            const int br = r / 2, bc = c / 2;
            const double bx = -kHalfExtent + (bc + 0.5) * kMsPixelSize - scx;
            const double by = kHalfExtent - (br + 0.5) * kMsPixelSize - scy;
            const double rho = std::hypot(bx, by);
            const double edge = radius * (1.0 + 0.15 * std::sin(3.0 * std::atan2(by, bx) + phase));
            if (rho < edge) {
                const auto block = static_cast<std::uint64_t>(br) * kMsSize + static_cast<std::uint64_t>(bc);
                if (hash01(hs, 2, block) < p_roof) {
                    L.cls[i] = kRoof;
                    L.value[i] = static_cast<float>(0.08 + 0.42 * q + 0.06 * (hash01(hs, 3, block) - 0.5));
                } else {
                    L.cls[i] = kGround;
                }
                continue;
            }
            const auto fx = static_cast<std::int64_t>(std::floor((x + fox) / fw));
            const auto fy = static_cast<std::int64_t>(std::floor((y + foy) / fh));
            L.value[i] = static_cast<float>(0.35 + 0.65 * hash01(hs, static_cast<std::uint64_t>(fx + 1000), static_cast<std::uint64_t>(fy + 1000)));
        }
    }
    return L;
}

void layout_stats(const Layout& L, LatentVillage& lv) {
    // Footprint = central 224 x 224 pan pixels.
    const int m = (kPanSize - kTileSize) / 2;
    std::size_t roofs = 0, roads = 0, total = 0;
    double bright = 0.0;
    for (int r = m; r < m + kTileSize; ++r)
        for (int c = m; c < m + kTileSize; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * kPanSize + c;
            ++total;
            if (L.cls[i] == kRoof) {
                ++roofs;
                bright += L.value[i];
            } else if (L.cls[i] == kRoad) {
                ++roads;
            }
        }
    lv.built_up_density = static_cast<double>(roofs) / static_cast<double>(total);
    lv.road_fraction = static_cast<double>(roads) / static_cast<double>(total);
    lv.roof_brightness = roofs ? bright / static_cast<double>(roofs) : 0.0;
}

std::uint64_t layout_seed(const WorldSpec& spec, std::size_t v) { return derive_seed(spec.seed, {kTagLayout, v}); }

void build_health(World& w, Rng& rng) {
    std::vector<std::string> ids;
    std::vector<double> zd;
    for (const auto& [id, z] : w.district_z) {
        ids.push_back(id);
        zd.push_back(z);
    }
    const std::size_t D = ids.size();
    auto standardize = [](std::vector<double>& v) {
        double m = 0.0, s = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s += (x - m) * (x - m);
        s = std::sqrt(s / static_cast<double>(v.size()));
        for (double& x : v) x = s > 1e-12 ? (x - m) / s : 0.0;
    };
    std::vector<double> e = zd;
    standardize(e);
    for (const auto& id : ids) {
        w.nfhs4[id] = {id, ingest::SurveyRound::nfhs4, {}};
        w.nfhs5[id] = {id, ingest::SurveyRound::nfhs5, {}};
    }
    for (int f = 1; f <= ingest::kHealthFactorCount; ++f) {
        const auto fi = static_cast<std::size_t>(f - 1);
        const bool linked = std::find(w.spec.independent_factors.begin(), w.spec.independent_factors.end(), f) ==
                            w.spec.independent_factors.end();
        w.linked[fi] = linked;
        w.sign[fi] = uniform01(rng) < 0.35 ? -1 : 1;
        double base = uniform(rng, 30.0, 70.0), amp = uniform(rng, 4.0, 8.0), lo = 0.0, hi = 100.0, step = 0.1;
        if (f == 3 || f == 4) {
            base = uniform(rng, 920.0, 980.0);
            amp = uniform(rng, 8.0, 15.0);
            hi = 1100.0;
            step = 1.0;
        } else if (f == 37) {
            base = uniform(rng, 2000.0, 4000.0);
            amp = uniform(rng, 200.0, 500.0);
            hi = 1e6;
            step = 1.0;
        }
        std::vector<double> r(D);
        if (linked) {
            for (std::size_t d = 0; d < D; ++d) r[d] = e[d] + normal(rng, 0.0, 0.2);
        } else {
            for (std::size_t d = 0; d < D; ++d) r[d] = normal(rng);
            standardize(r);
            double dot = 0.0;
            for (std::size_t d = 0; d < D; ++d) dot += r[d] * e[d];
            for (std::size_t d = 0; d < D; ++d) r[d] -= dot / static_cast<double>(D) * e[d];
            standardize(r);
        }
        const double drift = normal(rng, 0.0, 0.3) * amp;
        for (std::size_t d = 0; d < D; ++d) {
            const double v4 = std::clamp(round_to(base + w.sign[fi] * amp * r[d], step), lo, hi);
            w.nfhs4[ids[d]].factors[fi] = v4;
            if (f >= 29 && f <= 71) w.nfhs5[ids[d]].factors[fi] = std::clamp(round_to(v4 + drift + normal(rng, 0.0, 0.05 * amp), step), lo, hi);
        }
    }
}

void build_nightlight(World& w) {
    double min_lat = 90, max_lat = -90, min_lon = 180, max_lon = -180;
    for (const auto& v : w.villages) {
        min_lat = std::min(min_lat, v.centroid.lat);
        max_lat = std::max(max_lat, v.centroid.lat);
        min_lon = std::min(min_lon, v.centroid.lon);
        max_lon = std::max(max_lon, v.centroid.lon);
    }
    auto& g = w.nightlight;
    g.cell_deg = nn::kNightlightCellDegrees;
    const double margin = 5000.0 / kMetersPerDegree / std::cos(max_lat * std::numbers::pi / 180.0);
    g.origin_lon = std::floor((min_lon - margin) / g.cell_deg) * g.cell_deg;
    g.origin_lat = std::ceil((max_lat + margin) / g.cell_deg) * g.cell_deg;
    g.width = static_cast<int>(std::ceil((max_lon + margin - g.origin_lon) / g.cell_deg));
    g.height = static_cast<int>(std::ceil((g.origin_lat - (min_lat - margin)) / g.cell_deg));
    g.values.assign(static_cast<std::size_t>(g.width) * g.height, 0);
    std::vector<double> owner_dist(g.values.size(), 1e300);
    for (std::size_t i = 0; i < w.villages.size(); ++i) {
        const auto& v = w.villages[i];
        Rng rng(derive_seed(w.spec.seed, {kTagNight, i}));
        const double coslat = std::cos(v.centroid.lat * std::numbers::pi / 180.0);
        const double half_lat = kFootprintSide / 2.0 / kMetersPerDegree + g.cell_deg;
        const double half_lon = kFootprintSide / 2.0 / (kMetersPerDegree * coslat) + g.cell_deg;
        const int c0 = std::max(0, static_cast<int>(std::floor((v.centroid.lon - half_lon - g.origin_lon) / g.cell_deg)));
        const int c1 = std::min(g.width - 1, static_cast<int>(std::floor((v.centroid.lon + half_lon - g.origin_lon) / g.cell_deg)));
        const int r0 = std::max(0, static_cast<int>(std::floor((g.origin_lat - (v.centroid.lat + half_lat)) / g.cell_deg)));
        const int r1 = std::min(g.height - 1, static_cast<int>(std::floor((g.origin_lat - (v.centroid.lat - half_lat)) / g.cell_deg)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double value = std::round(63.0 * clip01(w.latents[i].z + normal(rng, 0.0, 0.02)));
                const double clat = g.origin_lat - (r + 0.5) * g.cell_deg, clon = g.origin_lon + (c + 0.5) * g.cell_deg;
                const double d = std::hypot((clat - v.centroid.lat), (clon - v.centroid.lon) * coslat);
                const std::size_t idx = static_cast<std::size_t>(r) * g.width + c;
                if (d < owner_dist[idx]) {
                    owner_dist[idx] = d;
                    g.values[idx] = static_cast<std::uint8_t>(value);
                }
            }
    }
}

}  // namespace

DriftProfile default_drift() {
    // Order follows the tehsil outcome list.
    return {{{0.15, 1.0}, {-0.15, 1.0}, {0.2, 1.0}, {0.6, 1.0}, {0.1, 1.0}, {0.15, 1.0}, {-0.1, 1.0}, {0.25, 1.0}, {0.15, 1.0}, {0.1, 1.0}}};
}

DriftProfile zero_drift() {
    DriftProfile d;
    d.fill({0.0, 1.0});
    return d;
}

WorldSpec::WorldSpec() {
    for (int f = 3; f <= ingest::kHealthFactorCount; f += 3) independent_factors.push_back(f);
}

void WorldSpec::validate() const {
    if (n_states < 1) throw SpecError("world spec: need at least one state");
    if (n_districts < n_states) throw SpecError("world spec: districts must be at least as many as states");
    if (n_tehsils < n_districts) throw SpecError("world spec: tehsils must be at least as many as districts");
    if (n_villages < n_tehsils) throw SpecError("world spec: villages must be at least as many as tehsils");
    if (n_villages > 1000000) throw SpecError("world spec: too many villages");
    if (scenes_per_year < 1 || scenes_per_year > 64) throw SpecError("world spec: scenes_per_year must lie in [1, 64]");
    if (!(cloud_rate >= 0.0 && cloud_rate <= 1.0)) throw SpecError("world spec: cloud_rate must lie in [0, 1]");
    if (!(slc_gap_rate >= 0.0 && slc_gap_rate <= 1.0)) throw SpecError("world spec: slc_gap_rate must lie in [0, 1]");
    if (!(village_spacing_m >= kMinVillageSpacing && village_spacing_m < 1e6))
        throw SpecError("world spec: village_spacing_m must be at least 6000");
    if (!(std::abs(center_lat) <= 60.0) || !(std::abs(center_lon) <= 180.0)) throw SpecError("world spec: center out of range");
    for (std::size_t k = 0; k < drift.size(); ++k)
        if (!std::isfinite(drift[k].shift) || !std::isfinite(drift[k].scale) || drift[k].scale <= 0.0)
            throw SpecError("world spec: drift for " + std::string(kTehsilNames[k]) + " must be finite with a positive scale");
    std::vector<int> f = independent_factors;
    std::sort(f.begin(), f.end());
    if (std::adjacent_find(f.begin(), f.end()) != f.end()) throw SpecError("world spec: duplicate independent factor");
    for (int x : f)
        if (x < 1 || x > ingest::kHealthFactorCount) throw SpecError("world spec: independent factor out of range");
}

std::string WorldSpec::to_text() const {
    std::ostringstream o;
    o << "seed = " << seed << "\n";
    o << "n_states = " << n_states << "\n";
    o << "n_districts = " << n_districts << "\n";
    o << "n_tehsils = " << n_tehsils << "\n";
    o << "n_villages = " << n_villages << "\n";
    o << "scenes_per_year = " << scenes_per_year << "\n";
    o << "cloud_rate = " << csv::format_number(cloud_rate) << "\n";
    o << "slc_gap_rate = " << csv::format_number(slc_gap_rate) << "\n";
    o << "village_spacing_m = " << csv::format_number(village_spacing_m) << "\n";
    o << "center_lat = " << csv::format_number(center_lat) << "\n";
    o << "center_lon = " << csv::format_number(center_lon) << "\n";
    o << "independent_factors = ";
    for (std::size_t i = 0; i < independent_factors.size(); ++i) o << (i ? "," : "") << independent_factors[i];
    o << "\n";
    for (std::size_t k = 0; k < drift.size(); ++k)
        o << "drift." << kTehsilNames[k] << " = " << csv::format_number(drift[k].shift) << "," << csv::format_number(drift[k].scale) << "\n";
    return o.str();
}

WorldSpec WorldSpec::parse(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw SpecError("world spec line " + std::to_string(lineno) + ": expected key = value");
        kv.emplace_back(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
    }
    WorldSpec s;
    for (const auto& [k, v] : kv) {
        if (k != "drift_profile") continue;
        if (v == "default") s.drift = default_drift();
        else if (v == "zero") s.drift = zero_drift();
        else throw SpecError("world spec: unknown drift_profile '" + v + "'");
    }
    for (const auto& [k, v] : kv) {
        if (k == "drift_profile") continue;
        if (k == "seed") {
            const double x = spec_number(k, v);
            if (x < 0 || x != std::floor(x)) throw SpecError("world spec: seed must be a nonnegative integer");
            s.seed = std::stoull(v);
        } else if (k == "n_states") s.n_states = spec_int(k, v);
        else if (k == "n_districts") s.n_districts = spec_int(k, v);
        else if (k == "n_tehsils") s.n_tehsils = spec_int(k, v);
        else if (k == "n_villages") s.n_villages = spec_int(k, v);
        else if (k == "scenes_per_year") s.scenes_per_year = spec_int(k, v);
        else if (k == "cloud_rate") s.cloud_rate = spec_number(k, v);
        else if (k == "slc_gap_rate") s.slc_gap_rate = spec_number(k, v);
        else if (k == "village_spacing_m") s.village_spacing_m = spec_number(k, v);
        else if (k == "center_lat") s.center_lat = spec_number(k, v);
        else if (k == "center_lon") s.center_lon = spec_number(k, v);
        else if (k == "independent_factors") {
            s.independent_factors.clear();
            if (v != "none")
                for (const auto& item : split_list(v)) s.independent_factors.push_back(spec_int(k, item));
        } else if (k.rfind("drift.", 0) == 0) {
            const std::string name = k.substr(6);
            const auto it = std::find(kTehsilNames.begin(), kTehsilNames.end(), name);
            if (it == kTehsilNames.end()) throw SpecError("world spec: no drifting outcome named '" + name + "'");
            const auto parts = split_list(v);
            if (parts.empty() || parts.size() > 2) throw SpecError("world spec: '" + k + "' expects shift[,scale]");
            auto& d = s.drift[static_cast<std::size_t>(it - kTehsilNames.begin())];
            d.shift = spec_number(k, parts[0]);
            d.scale = parts.size() == 2 ? spec_number(k, parts[1]) : 1.0;
        } else {
            throw SpecError("world spec: unknown key '" + k + "'");
        }
    }
    s.validate();
    return s;
}

WorldSpec WorldSpec::read(const fs::path& path) { return parse(read_text_file(path)); }

void WorldSpec::write(const fs::path& path) const { write_text_file(path, to_text()); }

ingest::AssetVector16 noiseless_assets(double z, double q) {
    z = clip01(z);
    q = clip01(q);
    ingest::AssetVector16 a;
    const std::array<double, ingest::kAssetCount> v = {
        0.75 - 0.50 * q,  // rooms-under-3
        0.30 + 0.35 * z,  // household-size-under-5
        0.10 + 0.70 * z,  // water-treated
        0.50 - 0.35 * q,  // water-untreated
        0.45 - 0.40 * q,  // water-natural
        0.20 + 0.70 * z,  // electric-like
        0.75 - 0.55 * q,  // oil-like
        0.25 + 0.60 * z,  // electronics
        0.68 + 0.28 * z,  // has-phone
        0.25 + 0.40 * z,  // transport-cycle
        0.20 + 0.50 * z,  // transport-motorized
        0.55 - 0.45 * q,  // no-assets
        0.30 + 0.55 * z,  // banking-services-availability
        0.25 + 0.60 * z,  // cook-fuel-processed
        0.20 + 0.60 * z,  // bathroom-within
        0.15 + 0.75 * q,  // permanent-house
    };
    for (std::size_t k = 0; k < ingest::kAssetCount; ++k) a[k] = clip01(v[k]);
    return a;
}

std::size_t World::index_of(const std::string& village_id) const {
    const auto it = std::lower_bound(villages.begin(), villages.end(), village_id,
                                     [](const ingest::VillageRecord& r, const std::string& id) { return r.village_id < id; });
    if (it == villages.end() || it->village_id != village_id) throw InputError("unknown village " + village_id);
    return static_cast<std::size_t>(it - villages.begin());
}

World build_world(const WorldSpec& spec) {
    spec.validate();
    World w;
    w.spec = spec;
    const auto N = static_cast<std::size_t>(spec.n_villages);
    const auto T = static_cast<std::size_t>(spec.n_tehsils);
    const auto D = static_cast<std::size_t>(spec.n_districts);
    const auto S = static_cast<std::size_t>(spec.n_states);

    std::vector<double> zd(D), zt(T), qt(T);
    for (std::size_t d = 0; d < D; ++d) {
        Rng rng(derive_seed(spec.seed, {kTagDistrict, d}));
        zd[d] = uniform(rng, 0.15, 0.85);
    }
    for (std::size_t t = 0; t < T; ++t) {
        Rng rng(derive_seed(spec.seed, {kTagTehsil, t}));
        const std::size_t d = t * D / T;
        zt[t] = zd[d] + normal(rng, 0.0, 0.1);
        qt[t] = std::clamp(normal(rng, 0.5, 0.12), 0.1, 0.9);
    }

    const LocalFrame world_frame{{spec.center_lat, spec.center_lon}};
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(N))));
    const double jitter = (spec.village_spacing_m - kMinVillageSpacing) / 2.0;
    const double mid = (static_cast<double>(cols) - 1.0) / 2.0;
    w.villages.resize(N);
    w.latents.resize(N);
    w.assets_noiseless.resize(N);
    w.assets.resize(N);
    w.demographics.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        Rng rng(derive_seed(spec.seed, {kTagVillage, i}));
        const std::size_t t = i * T / N, d = t * D / T, s = d * S / D;
        auto& rec = w.villages[i];
        rec.village_id = padded('v', static_cast<int>(i), 5);
        rec.tehsil_id = padded('t', static_cast<int>(t), 3);
        rec.district_id = padded('d', static_cast<int>(d), 3);
        rec.state_id = padded('s', static_cast<int>(s), 2);
        const double x = (static_cast<double>(i % cols) - mid) * spec.village_spacing_m + uniform(rng, -jitter, jitter);
        const double y = (mid - static_cast<double>(i / cols)) * spec.village_spacing_m + uniform(rng, -jitter, jitter);
        rec.centroid = world_frame.unproject({x, y});
        rec.population = std::max(100.0, std::round(std::exp(normal(rng, std::log(1200.0), 0.45))));
        auto& lv = w.latents[i];
        lv.village_id = rec.village_id;
        lv.z = clip01(zt[t] + normal(rng, 0.0, 0.12));
        lv.q = clip01(qt[t] + normal(rng, 0.0, 0.18));
        lv.population = rec.population;
        layout_stats(make_layout(layout_seed(spec, i), lv.z, lv.q), lv);

        w.assets_noiseless[i] = noiseless_assets(lv.z, lv.q);
        Rng noise(derive_seed(spec.seed, {kTagNoise, i}));
        ingest::CensusRow row;
        const auto& formulas = ingest::asset_formulas();
        for (std::size_t k = 0; k < ingest::kAssetCount; ++k) {
            const double a = clip01(w.assets_noiseless[i][k] + normal(noise, 0.0, 0.03));
            split_into(row, formulas[k].columns, 100.0 * a * formulas[k].divisor, 0.01);
        }
        w.village_census[rec.village_id] = row;
        w.assets[i] = ingest::build_asset_vector(row);
        auto pct = [&](double v) { return round_to(100.0 * clip01(v + normal(noise, 0.0, 0.03)), 0.01) / 100.0; };
        w.demographics[i] = {pct(0.30 + 0.25 * lv.z + 0.30 * lv.q), pct(0.35 + 0.10 * lv.z + 0.25 * lv.q),
                             pct(0.32 - 0.10 * lv.z - 0.22 * lv.q), pct(0.28 - 0.06 * lv.z - 0.22 * lv.q)};
    }

    // Round-2 outcomes are the census values; round 1 undoes the drift.
    w.outcomes_round1.resize(N);
    w.outcomes_round2.resize(N);
    for (std::size_t k = 0; k < kTehsilCount; ++k) {
        const std::size_t a = tehsil_asset(k);
        double mu = 0.0;
        for (std::size_t i = 0; i < N; ++i) mu += w.assets[i][a];
        mu /= static_cast<double>(N);
        const Drift& dr = spec.drift[k];
        for (std::size_t i = 0; i < N; ++i) {
            const double y2 = w.assets[i][a];
            w.outcomes_round2[i][k] = y2;
            w.outcomes_round1[i][k] = clip01(mu - dr.shift + (y2 - mu) / dr.scale);
        }
    }

    std::map<std::string, std::pair<double, std::array<std::array<double, kTehsilCount>, 2>>> tehsil_counts;
    std::map<std::string, std::pair<double, double>> dz;
    for (std::size_t i = 0; i < N; ++i) {
        const auto& rec = w.villages[i];
        const double h = std::max(1.0, std::round(rec.population / 5.0));
        auto& tc = tehsil_counts[rec.tehsil_id];
        tc.first += h;
        for (std::size_t k = 0; k < kTehsilCount; ++k) {
            tc.second[0][k] += h * w.outcomes_round1[i][k];
            tc.second[1][k] += h * w.outcomes_round2[i][k];
        }
        dz[rec.district_id].first += rec.population * w.latents[i].z;
        dz[rec.district_id].second += rec.population;
    }
    for (const auto& [id, tc] : tehsil_counts) {
        for (int r = 0; r < 2; ++r) {
            const int year = r == 0 ? kRound1Year : kRound2Year;
            auto tables = tehsil_tables_for(year, tc.first, tc.second[static_cast<std::size_t>(r)]);
            const auto truth = ingest::build_tehsil_vector(id, tables, year);
            if (truth) w.tehsil_truth[year][id] = *truth;
            w.tehsil_tables[year][id] = std::move(tables);
        }
    }
    for (const auto& [id, p] : dz) w.district_z[id] = p.first / p.second;

    Rng hrng(derive_seed(spec.seed, {kTagHealth}));
    build_health(w, hrng);
    build_nightlight(w);
    log::info("synth", "villages=", N, " tehsils=", T, " districts=", D, " states=", S);
    return w;
}

RasterGrid village_dem(const World& world, std::size_t village) {
    Rng rng(derive_seed(world.spec.seed, {kTagDem, village}));
    RasterGrid dem(kMsSize, kMsSize, {"elevation"}, kMsPixelSize, -kHalfExtent, kHalfExtent);
    struct Hill {
        double x, y, a, s;
    };
    std::vector<Hill> hills;
    for (int h = 0; h < 3; ++h)
        hills.push_back({uniform(rng, -2000.0, 2000.0), uniform(rng, -2000.0, 2000.0), uniform(rng, 40.0, 150.0), uniform(rng, 500.0, 1400.0)});
    for (int r = 0; r < kMsSize; ++r)
        for (int c = 0; c < kMsSize; ++c) {
            double e = 300.0;
            const double x = dem.center_x(c), y = dem.center_y(r);
            for (const auto& h : hills) e += h.a * std::exp(-((x - h.x) * (x - h.x) + (y - h.y) * (y - h.y)) / (2.0 * h.s * h.s));
            dem.at(0, r, c) = static_cast<float>(e);
        }
    return dem;
}

std::vector<compositing::SceneWithIllumination> render_scenes(const World& world, std::size_t village, int year) {
    if (year != kRound1Year && year != kRound2Year) throw InputError("no imagery round for year " + std::to_string(year));
    if (village >= world.villages.size()) throw InputError("village index out of range");
    const auto& rec = world.villages[village];
    const auto& lv = world.latents[village];
    const Layout L = make_layout(layout_seed(world.spec, village), lv.z, lv.q);
    const RasterGrid dem = village_dem(world, village);
    const std::vector<std::string> ms_bands = {"blue", "green", "red", "nir"};
    static constexpr std::array<double, 4> kVeg = {0.03, 0.07, 0.04, 0.42};
    static constexpr std::array<double, 4> kSoil = {0.10, 0.14, 0.19, 0.26};
    static constexpr std::array<double, 4> kGroundAlb = {0.16, 0.19, 0.22, 0.27};
    static constexpr std::array<double, 4> kRoadAlb = {0.24, 0.25, 0.26, 0.27};
    static constexpr std::array<double, 4> kRoofTint = {0.92, 1.0, 1.04, 1.08};
    const std::size_t npan = static_cast<std::size_t>(kPanSize) * kPanSize;

    std::vector<compositing::SceneWithIllumination> out;
    for (int k = 0; k < world.spec.scenes_per_year; ++k) {
        Rng rng(derive_seed(world.spec.seed, {kTagScene, village, static_cast<std::uint64_t>(year), static_cast<std::uint64_t>(k)}));
        Scene s;
        s.id = rec.village_id + "-" + std::to_string(year) + "-" + std::to_string(k);
        s.frame = LocalFrame{rec.centroid};
        s.acquired = {year, 1 + k % 12, 1 + static_cast<int>(uniform01(rng) * 28.0)};
        s.tier = uniform01(rng) < 0.8 ? 1 : 2;
        s.sun_zenith = uniform(rng, 30.0, 50.0) * std::numbers::pi / 180.0;
        s.sun_azimuth = uniform(rng, 110.0, 160.0) * std::numbers::pi / 180.0;
        const double season = uniform(rng, 0.35, 1.0);
        const bool cloudy = uniform01(rng) < world.spec.cloud_rate;
        const bool striped = year == kRound2Year && uniform01(rng) < world.spec.slc_gap_rate;
        const double stripe_offset = uniform(rng, 0.0, 13.0);
        struct Blob {
            double x, y, r;
        };
        std::vector<Blob> blobs;
        if (cloudy) {
            const int nb = 1 + static_cast<int>(uniform01(rng) * 3.0);
            for (int b = 0; b < nb; ++b) blobs.push_back({uniform(rng, -1500.0, 1500.0), uniform(rng, -1500.0, 1500.0), uniform(rng, 250.0, 900.0)});
        }
        auto illum = compositing::illumination_from_dem(dem, s.sun_zenith, s.sun_azimuth);
        const double cos_z = std::cos(s.sun_zenith);

        // 15 m albedo for the four bands.
        std::vector<std::array<float, 4>> alb(npan);
        for (std::size_t i = 0; i < npan; ++i) {
            const double t = L.tex[i];
            std::array<double, 4> a{};
            switch (L.cls[i]) {
                case kField: {
                    const double veg = std::clamp(season * L.value[i] * (1.0 + 0.1 * t), 0.0, 1.0);
                    for (int b = 0; b < 4; ++b) a[static_cast<std::size_t>(b)] = veg * kVeg[static_cast<std::size_t>(b)] + (1.0 - veg) * kSoil[static_cast<std::size_t>(b)];
                    break;
                }
                case kGround: a = kGroundAlb; break;
                case kRoad: a = kRoadAlb; break;
                default:
                    for (int b = 0; b < 4; ++b) a[static_cast<std::size_t>(b)] = L.value[i] * kRoofTint[static_cast<std::size_t>(b)];
            }
            for (int b = 0; b < 4; ++b) alb[i][static_cast<std::size_t>(b)] = static_cast<float>(a[static_cast<std::size_t>(b)] + 0.012 * t);
        }

        s.ms = RasterGrid(kMsSize, kMsSize, ms_bands, kMsPixelSize, -kHalfExtent, kHalfExtent);
        s.pan = RasterGrid(kPanSize, kPanSize, {"pan"}, kTilePixelSize, -kHalfExtent, kHalfExtent);
        s.qa.assign(s.ms.pixel_count(), 0);
        for (int r = 0; r < kMsSize; ++r) {
            for (int c = 0; c < kMsSize; ++c) {
                const std::size_t mi = s.ms.index(r, c);
                const double shade = (illum.cos_i[mi] + kC) / (cos_z + kC);
                const double x = s.ms.center_x(c), y = s.ms.center_y(r);
                bool cloud = false;
                for (const auto& b : blobs) cloud = cloud || std::hypot(x - b.x, y - b.y) < b.r;
                bool gap = false;
                if (striped) {
                    const double phase = std::fmod(c + 0.12 * r + stripe_offset, 13.0);
                    gap = phase < 2.0;
                }
                for (int b = 0; b < 4; ++b) {
                    double m = 0.0;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc) m += alb[static_cast<std::size_t>(2 * r + dr) * kPanSize + static_cast<std::size_t>(2 * c + dc)][static_cast<std::size_t>(b)];
                    const double v = std::clamp(0.25 * m * shade + uniform(rng, -0.006, 0.006), 0.001, 0.98);
                    s.ms.at(b, r, c) = cloud ? 1.0f : gap ? 0.0f : static_cast<float>(v);
                }
                s.qa[mi] = cloud ? 1 : 0;
                s.ms.set_valid(r, c, !gap);
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc) {
                        const int pr = 2 * r + dr, pc = 2 * c + dc;
                        const auto& a = alb[static_cast<std::size_t>(pr) * kPanSize + static_cast<std::size_t>(pc)];
                        const double p = std::clamp((a[1] + a[2] + a[3]) / 3.0 * shade + uniform(rng, -0.006, 0.006), 0.001, 0.98);
                        s.pan.at(0, pr, pc) = cloud ? 1.0f : gap ? 0.0f : static_cast<float>(p);
                        s.pan.set_valid(pr, pc, !gap);
                    }
            }
        }
        out.push_back({std::move(s), std::move(illum)});
    }
    return out;
}

OracleAnswers oracle_answers(const World& world) {
    OracleAnswers o;
    o.latents = world.latents;
    o.assets_noiseless = world.assets_noiseless;
    o.district_z = world.district_z;
    o.linked = world.linked;
    o.drift = world.spec.drift;
    return o;
}

OracleAnswers oracle_answers(const WorldSpec& spec) { return oracle_answers(build_world(spec)); }

void write_scene(const fs::path& dir, const Scene& scene) {
    scene.validate();
    fs::create_directories(dir);
    write_eorc(dir / "ms.eorc", scene.ms);
    write_eorc(dir / "pan.eorc", scene.pan);
    write_file_bytes(dir / "qa.bin", scene.qa);
    nlohmann::ordered_json j;
    j["id"] = scene.id;
    j["acquired"] = scene.acquired.iso();
    j["tier"] = scene.tier;
    j["frame_lat"] = scene.frame.center.lat;
    j["frame_lon"] = scene.frame.center.lon;
    j["sun_zenith"] = scene.sun_zenith;
    j["sun_azimuth"] = scene.sun_azimuth;
    write_text_file(dir / "scene.json", j.dump(2) + "\n");
}

Scene read_scene(const fs::path& dir) {
    Scene s;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(dir / "scene.json"));
        s.id = j.at("id").get<std::string>();
        s.acquired = Date::parse(j.at("acquired").get<std::string>());
        s.tier = j.at("tier").get<int>();
        s.frame = LocalFrame{{j.at("frame_lat").get<double>(), j.at("frame_lon").get<double>()}};
        s.sun_zenith = j.at("sun_zenith").get<double>();
        s.sun_azimuth = j.at("sun_azimuth").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(dir.string() + "/scene.json: " + e.what());
    }
    s.ms = read_eorc(dir / "ms.eorc");
    s.pan = read_eorc(dir / "pan.eorc");
    s.qa = read_file_bytes(dir / "qa.bin");
    s.validate();
    return s;
}

std::vector<compositing::SceneWithIllumination> read_village_scenes(const fs::path& data_dir, const std::string& village_id, int year) {
    const fs::path vdir = data_dir / "scenes" / village_id;
    const fs::path ydir = vdir / std::to_string(year);
    if (!fs::is_directory(ydir)) throw IoError("no scenes for village " + village_id + " in " + std::to_string(year) + " under " + vdir.string());
    const RasterGrid dem = read_eorc(vdir / "dem.eorc");
    std::vector<int> ks;
    for (const auto& e : fs::directory_iterator(ydir))
        if (e.is_directory()) ks.push_back(std::stoi(e.path().filename().string()));
    std::sort(ks.begin(), ks.end());
    std::vector<compositing::SceneWithIllumination> out;
    for (int k : ks) {
        Scene s = read_scene(ydir / std::to_string(k));
        auto illum = compositing::illumination_from_dem(dem, s.sun_zenith, s.sun_azimuth);
        out.push_back({std::move(s), std::move(illum)});
    }
    return out;
}

namespace {

void write_health(const fs::path& path, const std::map<std::string, ingest::HealthVector93>& vectors) {
    csv::Table t;
    t.header.push_back("district_id");
    for (int f = 1; f <= ingest::kHealthFactorCount; ++f) t.header.push_back(ingest::health_factor_id(f));
    for (const auto& [id, hv] : vectors) {
        std::vector<std::string> row{id};
        for (const auto& v : hv.factors) row.push_back(v ? csv::format_number(*v) : "NA");
        t.rows.push_back(std::move(row));
    }
    csv::write(path, t);
}

void write_oracle(const fs::path& dir, const World& w) {
    fs::create_directories(dir);
    csv::Table lat;
    lat.header = {"village_id", "z", "q", "built_up_density", "road_fraction", "roof_brightness", "population"};
    for (const auto& l : w.latents)
        lat.rows.push_back({l.village_id, csv::format_number(l.z), csv::format_number(l.q), csv::format_number(l.built_up_density),
                            csv::format_number(l.road_fraction), csv::format_number(l.roof_brightness), csv::format_number(l.population)});
    csv::write(dir / "latent.csv", lat);
    csv::Table a;
    a.header.push_back("village_id");
    for (auto n : ingest::kAssetNames) a.header.emplace_back(n);
    for (std::size_t i = 0; i < w.villages.size(); ++i) {
        std::vector<std::string> row{w.villages[i].village_id};
        for (double v : w.assets_noiseless[i].values) row.push_back(csv::format_number(v));
        a.rows.push_back(std::move(row));
    }
    csv::write(dir / "assets_noiseless.csv", a);
    csv::Table f;
    f.header = {"factor_id", "linked", "sign"};
    for (int k = 1; k <= ingest::kHealthFactorCount; ++k)
        f.rows.push_back({ingest::health_factor_id(k), w.linked[static_cast<std::size_t>(k - 1)] ? "1" : "0",
                          std::to_string(w.sign[static_cast<std::size_t>(k - 1)])});
    csv::write(dir / "signal_flags.csv", f);
    csv::Table d;
    d.header = {"district_id", "z"};
    for (const auto& [id, z] : w.district_z) d.rows.push_back({id, csv::format_number(z)});
    csv::write(dir / "district_z.csv", d);
    csv::Table dr;
    dr.header = {"outcome", "shift", "scale"};
    for (std::size_t k = 0; k < kTehsilCount; ++k)
        dr.rows.push_back({std::string(kTehsilNames[k]), csv::format_number(w.spec.drift[k].shift), csv::format_number(w.spec.drift[k].scale)});
    csv::write(dir / "drift.csv", dr);
}

}  // namespace

void generate_world(const WorldSpec& spec, const fs::path& out, int threads) {
    const World w = build_world(spec);
    fs::create_directories(out / "census");
    fs::create_directories(out / "survey");
    fs::create_directories(out / "nightlight");
    spec.write(out / "world.cfg");
    ingest::write_village_manifest(out / "villages.jsonl", w.villages);
    ingest::write_census_table(out / "census" / "village_2011.csv", "village_id", w.village_census);
    csv::Table demo;
    demo.header.push_back("village_id");
    for (auto n : ingest::DemographicVector::names) demo.header.emplace_back(n);
    for (std::size_t i = 0; i < w.villages.size(); ++i) {
        std::vector<std::string> row{w.villages[i].village_id};
        for (double v : w.demographics[i].as_array()) row.push_back(csv::format_number(round_to(100.0 * v, 0.01)));
        demo.rows.push_back(std::move(row));
    }
    csv::write(out / "census" / "demographics_2011.csv", demo);
    for (const auto& [year, by_tehsil] : w.tehsil_tables)
        for (const auto& table : ingest::tehsil_tables(year)) {
            std::map<std::string, ingest::CensusRow> rows;
            for (const auto& [tid, tables] : by_tehsil) rows[tid] = tables.at(table);
            ingest::write_census_table(out / "census" / ("tehsil_" + std::to_string(year) + "_" + table + ".csv"), "tehsil_id", rows);
        }
    write_health(out / "survey" / "nfhs4.csv", w.nfhs4);
    write_health(out / "survey" / "nfhs5.csv", w.nfhs5);
    write_eorc(out / "nightlight" / "nightlight.eorc", w.nightlight.to_raster(), false, "degree");
    write_oracle(out / "oracle", w);

    parallel_for(w.villages.size(), threads, [&](std::size_t i) {
        const fs::path vdir = out / "scenes" / w.villages[i].village_id;
        fs::create_directories(vdir);
        write_eorc(vdir / "dem.eorc", village_dem(w, i), false);
        for (int year : {kRound1Year, kRound2Year}) {
            const auto scenes = render_scenes(w, i, year);
            for (std::size_t k = 0; k < scenes.size(); ++k) write_scene(vdir / std::to_string(year) / std::to_string(k), scenes[k].scene);
        }
    });
    log::info("synth-gen", "villages=", w.villages.size(), " out=", out.string());
}

}  // namespace geoproxy::synth
