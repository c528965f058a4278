#include "geoproxy/compositing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"

namespace geoproxy::compositing {

namespace {

const std::vector<std::string> kRgb = {"red", "green", "blue"};

bool same_grid(const RasterGrid& a, const RasterGrid& b) {
    return a.width() == b.width() && a.height() == b.height() && a.pixel_size() == b.pixel_size() &&
           a.origin_x() == b.origin_x() && a.origin_y() == b.origin_y();
}

bool in_union(std::span<const Rect> rects, double x, double y) {
    return std::any_of(rects.begin(), rects.end(), [&](const Rect& r) { return r.contains(x, y); });
}

// Mean over valid entries; used to neutralize invalid pixels before filtering.
double valid_mean(std::span<const float> v, std::span<const std::uint8_t> valid) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (valid[i]) {
            s += v[i];
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

std::vector<float> filled(std::span<const float> v, std::span<const std::uint8_t> valid) {
    const float m = static_cast<float>(valid_mean(v, valid));
    std::vector<float> out(v.begin(), v.end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!valid[i]) out[i] = m;
    return out;
}

struct PixelWindow {
    int row0 = 0, col0 = 0, rows = 0, cols = 0;
};

// Pixels of `grid` whose centers fall inside `r`.
PixelWindow window_inside(const RasterGrid& grid, const Rect& r) {
    int r0 = grid.height(), r1 = -1, c0 = grid.width(), c1 = -1;
    for (int row = 0; row < grid.height(); ++row) {
        const double y = grid.center_y(row);
        if (!(y > r.min_y && y <= r.max_y)) continue;
        r0 = std::min(r0, row);
        r1 = std::max(r1, row);
    }
    for (int col = 0; col < grid.width(); ++col) {
        const double x = grid.center_x(col);
        if (!(x >= r.min_x && x < r.max_x)) continue;
        c0 = std::min(c0, col);
        c1 = std::max(c1, col);
    }
    if (r1 < r0 || c1 < c0) return {};
    return {r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

// Bilinear sample of band `b` at fractional pixel coordinates, edge-clamped.
// Sets `ok` false when any pixel carrying nonzero weight is invalid.
float sample_bilinear(const RasterGrid& g, int b, double fx, double fy, bool& ok) {
    fx = std::clamp(fx, 0.0, static_cast<double>(g.width() - 1));
    fy = std::clamp(fy, 0.0, static_cast<double>(g.height() - 1));
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, g.width() - 1);
    const int y1 = std::min(y0 + 1, g.height() - 1);
    const double tx = fx - x0;
    const double ty = fy - y0;
    const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    const int xs[4] = {x0, x1, x0, x1};
    const int ys[4] = {y0, y0, y1, y1};
    double acc = 0.0;
    ok = true;
    for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0) continue;
        if (!g.valid(ys[k], xs[k])) ok = false;
        acc += w[k] * g.at(b, ys[k], xs[k]);
    }
    return static_cast<float>(acc);
}

}  // namespace

void IlluminationGrid::validate() const {
    if (width <= 0 || height <= 0) throw SchemaError("illumination grid dimensions must be positive");
    if (cos_i.size() != static_cast<std::size_t>(width) * height) throw SchemaError("illumination grid length mismatch");
    if (!(sun_zenith >= 0.0 && sun_zenith < M_PI / 2)) throw SchemaError("solar zenith must lie in [0, pi/2)");
    for (float c : cos_i)
        if (!(c >= -1.0f && c <= 1.0f)) throw SchemaError("cos(i) outside [-1, 1]");
}

IlluminationGrid illumination_from_dem(const RasterGrid& dem, double sun_zenith, double sun_azimuth) {
    IlluminationGrid g;
    g.width = dem.width();
    g.height = dem.height();
    g.sun_zenith = sun_zenith;
    g.cos_i.resize(dem.pixel_count());
    const double p = dem.pixel_size();
    const double sx = std::sin(sun_zenith) * std::sin(sun_azimuth);
    const double sy = std::sin(sun_zenith) * std::cos(sun_azimuth);
    const double sz = std::cos(sun_zenith);
    auto z = [&](int row, int col) {
        row = std::clamp(row, 0, dem.height() - 1);
        col = std::clamp(col, 0, dem.width() - 1);
        return static_cast<double>(dem.at(0, row, col));
    };
    for (int row = 0; row < dem.height(); ++row) {
        for (int col = 0; col < dem.width(); ++col) {
            const int cl = std::max(col - 1, 0), cr = std::min(col + 1, dem.width() - 1);
            const int rn = std::max(row - 1, 0), rs = std::min(row + 1, dem.height() - 1);
            const double dzdx = (z(row, cr) - z(row, cl)) / (p * std::max(1, cr - cl));
            const double dzdy = (z(rn, col) - z(rs, col)) / (p * std::max(1, rs - rn));  // north positive
            const double norm = std::sqrt(dzdx * dzdx + dzdy * dzdy + 1.0);
            const double c = (-dzdx * sx - dzdy * sy + sz) / norm;
            g.cos_i[dem.index(row, col)] = static_cast<float>(std::clamp(c, -1.0, 1.0));
        }
    }
    return g;
}

double cloud_fraction(const Scene& scene, std::span<const AOIFootprint> aoi_union) {
    std::vector<Rect> rects;
    rects.reserve(aoi_union.size());
    for (const auto& a : aoi_union) rects.push_back(a.rect_in(scene.frame));
    std::size_t inside = 0, flagged = 0;
    for (int row = 0; row < scene.ms.height(); ++row) {
        const double y = scene.ms.center_y(row);
        for (int col = 0; col < scene.ms.width(); ++col) {
            if (!in_union(rects, scene.ms.center_x(col), y)) continue;
            ++inside;
            if (scene.cloud(scene.ms.index(row, col))) ++flagged;
        }
    }
    if (inside == 0) throw CoverageError("scene '" + scene.id + "' does not cover the footprint union");
    return static_cast<double>(flagged) / static_cast<double>(inside);
}

std::vector<Scene> filter_scenes(std::span<const Scene> scenes, std::span<const AOIFootprint> aoi_union,
                                 double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw InputError("cloud threshold must lie in [0, 1]");
    std::vector<Scene> kept;
    for (const auto& s : scenes) {
        double f = 1.0;
        try {
            f = cloud_fraction(s, aoi_union);
        } catch (const CoverageError&) {
            log::debug("composite", "scene ", s.id, " misses the footprint union; dropped");
            continue;
        }
        if (f <= threshold) kept.push_back(s);
        else log::debug("composite", "scene ", s.id, " cloud fraction ", f, " above threshold; dropped");
    }
    return kept;
}

std::vector<Scene> rank_scenes(std::span<const Scene> scenes, const AOIFootprint& aoi) {
    struct Key {
        double ndvi;
        Date date;
        std::size_t order;
    };
    std::vector<Key> keys;
    keys.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        double v = kEmptyNdviSentinel;
        try {
            v = mean_ndvi(scenes[i], aoi);
        } catch (const CoverageError&) {
        }
        keys.push_back({v, scenes[i].acquired, i});
    }
    std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
        if (a.ndvi != b.ndvi) return a.ndvi > b.ndvi;
        if (a.date != b.date) return a.date < b.date;
        return a.order < b.order;
    });
    std::vector<Scene> out;
    out.reserve(scenes.size());
    for (const auto& k : keys) out.push_back(scenes[k.order]);
    return out;
}

std::vector<std::uint8_t> usable_mask(const Scene& scene) {
    const auto& ms = scene.ms;
    std::vector<std::uint8_t> ok(ms.pixel_count(), 0);
    for (int row = 0; row < ms.height(); ++row) {
        for (int col = 0; col < ms.width(); ++col) {
            const std::size_t i = ms.index(row, col);
            if (!ms.valid(i) || scene.cloud(i)) continue;
            bool saturated = false;
            for (int b = 0; b < ms.band_count(); ++b) saturated = saturated || ms.at(b, row, col) >= kSaturationLevel;
            if (saturated) continue;
            bool pan_ok = true;
            for (int dr = 0; dr < 2; ++dr)
                for (int dc = 0; dc < 2; ++dc) {
                    const int pr = 2 * row + dr, pc = 2 * col + dc;
                    pan_ok = pan_ok && scene.pan.valid(pr, pc) && scene.pan.at(0, pr, pc) < kSaturationLevel;
                }
            ok[i] = pan_ok ? 1 : 0;
        }
    }
    return ok;
}

Mosaic recursive_mosaic(std::span<const Scene> ranked, const AOIFootprint& aoi) {
    if (ranked.empty()) throw InputError("recursive_mosaic: no scenes");
    const Scene& first = ranked.front();
    for (const auto& s : ranked) {
        s.validate();
        if (!same_grid(s.ms, first.ms) || !same_grid(s.pan, first.pan))
            throw SchemaError("recursive_mosaic: scenes must share one pixel grid");
    }
    const PixelWindow w = window_inside(first.ms, aoi.rect_in(first.frame));
    if (w.rows == 0) throw CoverageError("recursive_mosaic: footprint of '" + aoi.village_id + "' misses the scene grid");

    const double p = first.ms.pixel_size();
    Mosaic out;
    out.ms = RasterGrid(w.cols, w.rows, first.ms.bands(), p, first.ms.origin_x() + w.col0 * p,
                        first.ms.origin_y() - w.row0 * p);
    out.pan = RasterGrid(2 * w.cols, 2 * w.rows, first.pan.bands(), first.pan.pixel_size(), out.ms.origin_x(),
                         out.ms.origin_y());
    std::fill(out.ms.mask().begin(), out.ms.mask().end(), std::uint8_t{0});
    std::fill(out.pan.mask().begin(), out.pan.mask().end(), std::uint8_t{0});
    out.fill_rank.assign(out.ms.pixel_count(), -1);

    std::size_t remaining = out.ms.pixel_count();
    for (std::size_t rank = 0; rank < ranked.size() && remaining > 0; ++rank) {
        const Scene& s = ranked[rank];
        const auto usable = usable_mask(s);
        for (int r = 0; r < w.rows; ++r) {
            for (int c = 0; c < w.cols; ++c) {
                const std::size_t o = out.ms.index(r, c);
                if (out.fill_rank[o] >= 0) continue;
                const int sr = w.row0 + r, sc = w.col0 + c;
                if (!usable[s.ms.index(sr, sc)]) continue;
                for (int b = 0; b < s.ms.band_count(); ++b) out.ms.at(b, r, c) = s.ms.at(b, sr, sc);
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc) {
                        for (int b = 0; b < s.pan.band_count(); ++b)
                            out.pan.at(b, 2 * r + dr, 2 * c + dc) = s.pan.at(b, 2 * sr + dr, 2 * sc + dc);
                        out.pan.set_valid(2 * r + dr, 2 * c + dc, true);
                    }
                out.ms.set_valid(o, true);
                out.fill_rank[o] = static_cast<std::int32_t>(rank);
                --remaining;
            }
        }
    }
    return out;
}

Scene c_correct(const Scene& scene, const IlluminationGrid& illum) {
    if (illum.width != scene.ms.width() || illum.height != scene.ms.height())
        throw SchemaError("c_correct: illumination grid does not match MS dimensions of scene '" + scene.id + "'");
    illum.validate();
    Scene out = scene;
    const double cos_z = std::cos(illum.sun_zenith);

    // Least-squares fit of value on cos(i) over usable pixels, then per-pixel rescale.
    auto correct_band = [&](RasterGrid& grid, int b, int scale) {
        double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (int row = 0; row < grid.height(); ++row)
            for (int col = 0; col < grid.width(); ++col) {
                const std::size_t ms_i = scene.ms.index(row / scale, col / scale);
                if (!grid.valid(row, col) || scene.cloud(ms_i)) continue;
                const double x = illum.cos_i[ms_i];
                const double y = grid.at(b, row, col);
                n += 1;
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
        if (n < 2) return;
        const double var = sxx - sx * sx / n;
        if (std::abs(var) < 1e-12) return;
        const double m = (sxy - sx * sy / n) / var;
        if (std::abs(m) < 1e-9) return;
        const double intercept = (sy - m * sx) / n;
        const double c = intercept / m;
        for (int row = 0; row < grid.height(); ++row)
            for (int col = 0; col < grid.width(); ++col) {
                if (!grid.valid(row, col)) continue;
                const double den = illum.cos_i[scene.ms.index(row / scale, col / scale)] + c;
                if (std::abs(den) < 1e-6) continue;
                grid.at(b, row, col) = static_cast<float>(grid.at(b, row, col) * (cos_z + c) / den);
            }
    };
    for (int b = 0; b < out.ms.band_count(); ++b) correct_band(out.ms, b, 1);
    for (int b = 0; b < out.pan.band_count(); ++b) correct_band(out.pan, b, 2);
    return out;
}

RasterGrid upsample_bilinear_x2(const RasterGrid& src) {
    RasterGrid out(2 * src.width(), 2 * src.height(), src.bands(), src.pixel_size() / 2, src.origin_x(), src.origin_y());
    for (int b = 0; b < src.band_count(); ++b)
        for (int r = 0; r < out.height(); ++r)
            for (int c = 0; c < out.width(); ++c) {
                bool ok = true;
                out.at(b, r, c) = sample_bilinear(src, b, (c + 0.5) / 2.0 - 0.5, (r + 0.5) / 2.0 - 0.5, ok);
            }
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) out.set_valid(r, c, src.valid(r / 2, c / 2));
    return out;
}

std::vector<float> binomial_lowpass(std::span<const float> band, int width, int height) {
    static constexpr double k[5] = {1, 4, 6, 4, 1};
    std::vector<double> tmp(band.size());
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            for (int d = -2; d <= 2; ++d) acc += k[d + 2] * band[static_cast<std::size_t>(r) * width + std::clamp(c + d, 0, width - 1)];
            tmp[static_cast<std::size_t>(r) * width + c] = acc / 16.0;
        }
    std::vector<float> out(band.size());
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            for (int d = -2; d <= 2; ++d) acc += k[d + 2] * tmp[static_cast<std::size_t>(std::clamp(r + d, 0, height - 1)) * width + c];
            out[static_cast<std::size_t>(r) * width + c] = static_cast<float>(acc / 16.0);
        }
    return out;
}

RasterGrid pansharpen(const RasterGrid& ms_rgb, const RasterGrid& pan) {
    if (pan.width() != 2 * ms_rgb.width() || pan.height() != 2 * ms_rgb.height())
        throw SchemaError("pansharpen: pan must be exactly twice the MS dimensions");
    if (pan.band_count() != 1) throw SchemaError("pansharpen: pan must have one band");

    RasterGrid ms_filled = ms_rgb;
    for (int b = 0; b < ms_rgb.band_count(); ++b) {
        const auto f = filled(ms_rgb.band(b), ms_rgb.mask());
        std::copy(f.begin(), f.end(), ms_filled.band(b).begin());
    }
    RasterGrid out = upsample_bilinear_x2(ms_filled);
    const auto p = filled(pan.band(0), pan.mask());
    const auto p_low = binomial_lowpass(p, pan.width(), pan.height());

    for (std::size_t i = 0; i < out.pixel_count(); ++i) out.set_valid(i, pan.valid(i) && ms_rgb.valid(
        static_cast<int>(i / out.width()) / 2, static_cast<int>(i % out.width()) / 2));

    double n = 0, mp = 0;
    for (std::size_t i = 0; i < out.pixel_count(); ++i)
        if (out.valid(i)) {
            n += 1;
            mp += p_low[i];
        }
    if (n == 0) return out;
    mp /= n;
    double var = 0;
    for (std::size_t i = 0; i < out.pixel_count(); ++i)
        if (out.valid(i)) var += (p_low[i] - mp) * (p_low[i] - mp);
    var /= n;

    for (int b = 0; b < out.band_count(); ++b) {
        auto up = out.band(b);
        double gain = 0.0;
        if (var >= 1e-12) {
            double mu = 0, cov = 0;
            for (std::size_t i = 0; i < up.size(); ++i)
                if (out.valid(i)) mu += up[i];
            mu /= n;
            for (std::size_t i = 0; i < up.size(); ++i)
                if (out.valid(i)) cov += (up[i] - mu) * (p_low[i] - mp);
            gain = (cov / n) / var;
        }
        if (gain == 0.0) continue;
        for (std::size_t i = 0; i < up.size(); ++i)
            up[i] = static_cast<float>(up[i] + gain * (static_cast<double>(p[i]) - p_low[i]));
    }
    return out;
}

CompositeTile build_composite(const AOIFootprint& village, int year, std::span<const SceneWithIllumination> scenes,
                              const CompositeOptions& options) {
    CompositeTile tile;
    tile.village_id = village.village_id;
    tile.year = year;
    tile.scenes_in = scenes.size();
    const double half = kTileSize * kTilePixelSize / 2.0;
    tile.grid = RasterGrid(kTileSize, kTileSize, kRgb, kTilePixelSize, -half, half);
    tile.fill_rank.assign(tile.grid.pixel_count(), -1);

    const std::vector<AOIFootprint> own{village};
    const std::span<const AOIFootprint> aoi_union = options.aoi_union.empty() ? std::span<const AOIFootprint>(own)
                                                                              : std::span<const AOIFootprint>(options.aoi_union);
    std::vector<Scene> kept;
    for (const auto& s : scenes) {
        double f = 1.0;
        try {
            f = cloud_fraction(s.scene, aoi_union);
        } catch (const CoverageError&) {
            continue;
        }
        if (f <= options.cloud_threshold) kept.push_back(c_correct(s.scene, s.illumination));
    }
    tile.scenes_used = kept.size();
    if (kept.empty()) {
        std::fill(tile.grid.mask().begin(), tile.grid.mask().end(), std::uint8_t{0});
        tile.gap_fraction = 1.0;
        log::warn("composite", "village=", village.village_id, " year=", year, " no usable scenes; tile is a total gap");
        return tile;
    }

    const auto ranked = rank_scenes(kept, village);
    const Mosaic mosaic = recursive_mosaic(ranked, village);
    const RasterGrid sharp = pansharpen(mosaic.ms.select_bands(kRgb), mosaic.pan);

    // Resample onto the 224 x 224 grid centered on the footprint.
    const Rect aoi = village.rect_in(ranked.front().frame);
    const double cx = 0.5 * (aoi.min_x + aoi.max_x);
    const double cy = 0.5 * (aoi.min_y + aoi.max_y);
    tile.grid = RasterGrid(kTileSize, kTileSize, kRgb, kTilePixelSize, cx - half, cy + half);
    std::size_t gaps = 0;
    for (int r = 0; r < kTileSize; ++r) {
        for (int c = 0; c < kTileSize; ++c) {
            const double x = tile.grid.center_x(c), y = tile.grid.center_y(r);
            const double fx = (x - sharp.origin_x()) / sharp.pixel_size() - 0.5;
            const double fy = (sharp.origin_y() - y) / sharp.pixel_size() - 0.5;
            bool ok = true;
            for (int b = 0; b < 3; ++b) {
                bool band_ok = true;
                tile.grid.at(b, r, c) = sample_bilinear(sharp, b, fx, fy, band_ok);
                ok = ok && band_ok;
            }
            const int mr = std::clamp(static_cast<int>(std::floor((mosaic.ms.origin_y() - y) / mosaic.ms.pixel_size())), 0, mosaic.ms.height() - 1);
            const int mc = std::clamp(static_cast<int>(std::floor((x - mosaic.ms.origin_x()) / mosaic.ms.pixel_size())), 0, mosaic.ms.width() - 1);
            const auto rank = mosaic.fill_rank[mosaic.ms.index(mr, mc)];
            ok = ok && rank >= 0;
            tile.grid.set_valid(r, c, ok);
            tile.fill_rank[tile.grid.index(r, c)] = ok ? rank : -1;
            if (!ok) {
                ++gaps;
                for (int b = 0; b < 3; ++b) tile.grid.at(b, r, c) = 0.0f;
            }
        }
    }
    tile.gap_fraction = static_cast<double>(gaps) / static_cast<double>(tile.grid.pixel_count());
    return tile;
}

}  // namespace geoproxy::compositing
