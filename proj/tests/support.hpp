#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "geoproxy/compositing.hpp"
#include "geoproxy/raster.hpp"
#include "geoproxy/rng.hpp"

namespace testing {

using namespace geoproxy;

inline const LatLon kCenter{23.0, 80.0};

// n x n MS grid at 30 m centred on kCenter, pan 2n x 2n at 15 m, all zero
// and valid, no clouds.
inline Scene blank_scene(int n, const std::string& id = "s", Date date = {2011, 1, 1}) {
    Scene s;
    s.id = id;
    s.frame.center = kCenter;
    const double half = n * kMsPixelSize / 2.0;
    s.ms = RasterGrid(n, n, {"blue", "green", "red", "nir"}, kMsPixelSize, -half, half);
    s.pan = RasterGrid(2 * n, 2 * n, {"pan"}, kTilePixelSize, -half, half);
    s.qa.assign(s.ms.pixel_count(), 0);
    s.acquired = date;
    s.sun_zenith = 0.5;
    s.sun_azimuth = 2.0;
    return s;
}

// Footprint covering every MS pixel of blank_scene(n).
inline AOIFootprint full_footprint(int n, const std::string& id = "v") {
    return {id, kCenter, n * kMsPixelSize};
}

inline void fill_band(RasterGrid& g, const std::string& band, float v) {
    auto px = g.band(g.band_index(band));
    std::fill(px.begin(), px.end(), v);
}

inline void set_ndvi(Scene& s, double value) {
    // red = 0.2, nir chosen so (nir - red) / (nir + red) = value
    const double red = 0.2;
    const double nir = red * (1.0 + value) / (1.0 - value);
    fill_band(s.ms, "red", static_cast<float>(red));
    fill_band(s.ms, "nir", static_cast<float>(nir));
}

inline compositing::IlluminationGrid flat_illumination(int n, double zenith) {
    compositing::IlluminationGrid g;
    g.width = g.height = n;
    g.sun_zenith = zenith;
    g.cos_i.assign(static_cast<std::size_t>(n) * n, static_cast<float>(std::cos(zenith)));
    return g;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("geoproxy_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n, mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Random 8x8 multi-scene mosaic instance: per-scene validity, clouds,
// saturated values and invalid pan children at the given rates.
inline std::vector<Scene> random_mosaic_instance(Rng& rng, int n, int scenes, double bad_rate) {
    std::vector<Scene> out;
    for (int k = 0; k < scenes; ++k) {
        Scene s = blank_scene(n, "s" + std::to_string(k), {2011, 1 + k, 1});
        for (int b = 0; b < 4; ++b)
            for (auto& v : s.ms.band(b)) v = static_cast<float>(uniform(rng, 0.01, 0.9));
        for (auto& v : s.pan.band(0)) v = static_cast<float>(uniform(rng, 0.01, 0.9));
        for (std::size_t i = 0; i < s.ms.pixel_count(); ++i) {
            s.ms.set_valid(i, uniform01(rng) >= bad_rate);
            s.qa[i] = uniform01(rng) < bad_rate ? 1 : 0;
            if (uniform01(rng) < bad_rate / 2) s.ms.band(static_cast<int>(uniform01(rng) * 4))[i] = 1.0f;
        }
        for (std::size_t i = 0; i < s.pan.pixel_count(); ++i)
            if (uniform01(rng) < bad_rate / 4) s.pan.set_valid(i, false);
        out.push_back(std::move(s));
    }
    return out;
}

struct OracleFill {
    std::vector<int> rank;  // per MS pixel, -1 when never filled
};

// Per-pixel scan: the first scene in rank order where the pixel is valid,
// cloud-free, unsaturated in every band and has four valid, unsaturated
// pan children.
inline OracleFill brute_force_fill(const std::vector<Scene>& ranked) {
    const auto& ms0 = ranked.front().ms;
    OracleFill f;
    f.rank.assign(ms0.pixel_count(), -1);
    for (int r = 0; r < ms0.height(); ++r)
        for (int c = 0; c < ms0.width(); ++c)
            for (std::size_t k = 0; k < ranked.size(); ++k) {
                const Scene& s = ranked[k];
                bool ok = s.ms.valid(r, c) && s.qa[s.ms.index(r, c)] == 0;
                for (int b = 0; b < 4; ++b) ok = ok && s.ms.at(b, r, c) < 0.999f;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc)
                        ok = ok && s.pan.valid(2 * r + dr, 2 * c + dc) && s.pan.at(0, 2 * r + dr, 2 * c + dc) < 0.999f;
                if (ok) {
                    f.rank[ms0.index(r, c)] = static_cast<int>(k);
                    break;
                }
            }
    return f;
}

// True 15 m field per band built from low-frequency waves (periods of at
// least 24 pan pixels) sharing most of their texture; MS is its 2x2 block
// mean and pan the band average.
struct SharpenPair {
    RasterGrid ms;   // red, green, blue at 30 m
    RasterGrid pan;  // 15 m
    RasterGrid truth;
};

inline SharpenPair band_limited_pair(Rng& rng, int n) {
    const int m = 2 * n;
    constexpr double kPi = 3.14159265358979323846;
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> shared;
    for (int j = 0; j < 4; ++j) {
        const double per = uniform(rng, 24.0, 64.0), theta = uniform(rng, 0.0, 2 * kPi);
        shared.push_back({std::cos(theta) / per, std::sin(theta) / per, uniform(rng, 0.0, 2 * kPi), uniform(rng, 0.02, 0.06)});
    }
    SharpenPair p;
    p.truth = RasterGrid(m, m, {"red", "green", "blue"}, kTilePixelSize);
    for (int b = 0; b < 3; ++b) {
        const double base = uniform(rng, 0.15, 0.45), gain = uniform(rng, 0.6, 1.4);
        const double per = uniform(rng, 24.0, 64.0), theta = uniform(rng, 0.0, 2 * kPi);
        const Wave own{std::cos(theta) / per, std::sin(theta) / per, uniform(rng, 0.0, 2 * kPi), uniform(rng, 0.0, 0.02)};
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) {
                double v = base + own.amp * std::sin(2 * kPi * (own.fx * c + own.fy * r) + own.phase);
                for (const auto& w : shared) v += gain * w.amp * std::sin(2 * kPi * (w.fx * c + w.fy * r) + w.phase);
                p.truth.at(b, r, c) = static_cast<float>(v);
            }
    }
    p.ms = RasterGrid(n, n, {"red", "green", "blue"}, kMsPixelSize);
    p.pan = RasterGrid(m, m, {"pan"}, kTilePixelSize);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c)
            p.pan.at(0, r, c) = (p.truth.at(0, r, c) + p.truth.at(1, r, c) + p.truth.at(2, r, c)) / 3.0f;
    for (int b = 0; b < 3; ++b)
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                p.ms.at(b, r, c) = 0.25f * (p.truth.at(b, 2 * r, 2 * c) + p.truth.at(b, 2 * r + 1, 2 * c) +
                                            p.truth.at(b, 2 * r, 2 * c + 1) + p.truth.at(b, 2 * r + 1, 2 * c + 1));
    return p;
}

// Lambertian scene over random Gaussian hills: reflectance = albedo * cos(i)
// with 2% albedo texture.
inline compositing::SceneWithIllumination lambertian_scene(Rng& rng, int n) {
    RasterGrid dem(n, n, {"elevation"}, kMsPixelSize);
    for (int h = 0; h < 12; ++h) {
        const double cx = uniform(rng, 0, n), cy = uniform(rng, 0, n);
        const double sigma = uniform(rng, 4.0, 12.0), height = uniform(rng, -90.0, 90.0);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
                dem.at(0, r, c) += static_cast<float>(height * std::exp(-d2 / (2 * sigma * sigma)));
            }
    }
    const double zenith = uniform(rng, 0.5, 0.8), azimuth = uniform(rng, 1.5, 3.0);
    compositing::SceneWithIllumination out;
    out.illumination = compositing::illumination_from_dem(dem, zenith, azimuth);
    Scene s = blank_scene(n, "lambert");
    s.sun_zenith = zenith;
    s.sun_azimuth = azimuth;
    const double albedo[4] = {0.08, 0.12, 0.15, 0.35};
    for (int b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < s.ms.pixel_count(); ++i) {
            const double a = albedo[b] * (1.0 + normal(rng, 0.0, 0.02));
            s.ms.band(b)[i] = static_cast<float>(std::max(0.001, a * out.illumination.cos_i[i]));
        }
    for (int r = 0; r < 2 * n; ++r)
        for (int c = 0; c < 2 * n; ++c) {
            const std::size_t parent = s.ms.index(r / 2, c / 2);
            const double a = 0.13 * (1.0 + normal(rng, 0.0, 0.02));
            s.pan.at(0, r, c) = static_cast<float>(std::max(0.001, a * out.illumination.cos_i[parent]));
        }
    out.scene = std::move(s);
    return out;
}

}  // namespace testing
