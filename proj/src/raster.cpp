#include "geoproxy/raster.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "geoproxy/error.hpp"

namespace geoproxy {

namespace {

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

PointXY LocalFrame::project(LatLon p) const {
    const double k = kMetersPerDegree * std::cos(deg2rad(center.lat));
    return {(p.lon - center.lon) * k, (p.lat - center.lat) * kMetersPerDegree};
}

LatLon LocalFrame::unproject(PointXY p) const {
    const double k = kMetersPerDegree * std::cos(deg2rad(center.lat));
    return {center.lat + p.y / kMetersPerDegree, center.lon + p.x / k};
}

RasterGrid::RasterGrid(int width, int height, std::vector<std::string> bands, double pixel_size, double origin_x,
                       double origin_y)
    : width_(width),
      height_(height),
      bands_(std::move(bands)),
      pixel_size_(pixel_size),
      origin_x_(origin_x),
      origin_y_(origin_y) {
    if (width <= 0 || height <= 0) throw SchemaError("raster dimensions must be positive");
    if (!(pixel_size > 0.0)) throw SchemaError("raster pixel_size must be positive");
    pixels_.assign(pixel_count() * bands_.size(), 0.0f);
    valid_.assign(pixel_count(), 1);
}

bool RasterGrid::has_band(std::string_view name) const {
    return std::find(bands_.begin(), bands_.end(), name) != bands_.end();
}

int RasterGrid::band_index(std::string_view name) const {
    const auto it = std::find(bands_.begin(), bands_.end(), name);
    if (it == bands_.end()) throw SchemaError("missing band '" + std::string(name) + "'");
    return static_cast<int>(it - bands_.begin());
}

std::size_t RasterGrid::valid_count() const {
    return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

void RasterGrid::validate() const {
    if (width_ <= 0 || height_ <= 0) throw SchemaError("raster dimensions must be positive");
    if (!(pixel_size_ > 0.0)) throw SchemaError("raster pixel_size must be positive");
    if (pixels_.size() != pixel_count() * bands_.size()) throw SchemaError("raster pixel array length mismatch");
    if (valid_.size() != pixel_count()) throw SchemaError("raster mask length mismatch");
}

RasterGrid RasterGrid::select_bands(const std::vector<std::string>& names) const {
    RasterGrid out(width_, height_, names, pixel_size_, origin_x_, origin_y_);
    for (std::size_t b = 0; b < names.size(); ++b) {
        const auto src = band(band_index(names[b]));
        std::copy(src.begin(), src.end(), out.band(static_cast<int>(b)).begin());
    }
    out.valid_ = valid_;
    return out;
}

std::string Date::iso() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
}

int Date::day_of_year() const {
    static constexpr int cumulative[] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    return cumulative[month - 1] + day + (leap && month > 2 ? 1 : 0);
}

Date Date::parse(std::string_view iso) {
    Date d;
    auto field = [&](std::size_t pos, std::size_t len, int& out) {
        if (iso.size() < pos + len) throw InputError("bad date '" + std::string(iso) + "'");
        const auto r = std::from_chars(iso.data() + pos, iso.data() + pos + len, out);
        if (r.ec != std::errc{}) throw InputError("bad date '" + std::string(iso) + "'");
    };
    field(0, 4, d.year);
    field(5, 2, d.month);
    field(8, 2, d.day);
    if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) throw InputError("bad date '" + std::string(iso) + "'");
    return d;
}

void Scene::validate() const {
    ms.validate();
    pan.validate();
    if (pan.width() != 2 * ms.width() || pan.height() != 2 * ms.height())
        throw SchemaError("scene " + id + ": pan must be exactly twice the MS dimensions");
    if (qa.size() != ms.pixel_count()) throw SchemaError("scene " + id + ": QA length must equal MS pixel count");
}

Rect AOIFootprint::rect_in(const LocalFrame& frame) const {
    const PointXY c = frame.project(centroid);
    const double h = side / 2.0;
    return {c.x - h, c.y - h, c.x + h, c.y + h};
}

RasterGrid ndvi(const RasterGrid& ms) {
    const int nir = ms.band_index("nir");
    const int red = ms.band_index("red");
    RasterGrid out(ms.width(), ms.height(), {"ndvi"}, ms.pixel_size(), ms.origin_x(), ms.origin_y());
    const auto n = ms.band(nir);
    const auto r = ms.band(red);
    auto o = out.band(0);
    for (std::size_t i = 0; i < ms.pixel_count(); ++i) {
        const double den = static_cast<double>(n[i]) + r[i];
        if (!ms.valid(i) || den == 0.0) {
            o[i] = 0.0f;
            out.set_valid(i, false);
            continue;
        }
        o[i] = static_cast<float>((static_cast<double>(n[i]) - r[i]) / den);
    }
    return out;
}

RasterGrid ndvi(const Scene& scene) {
    RasterGrid out = ndvi(scene.ms);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        if (scene.cloud(i)) {
            out.band(0)[i] = 0.0f;
            out.set_valid(i, false);
        }
    }
    return out;
}

double mean_ndvi(const Scene& scene, const AOIFootprint& aoi) {
    const Rect r = aoi.rect_in(scene.frame);
    if (!r.intersects(scene.ms.extent()))
        throw CoverageError("footprint of village '" + aoi.village_id + "' does not intersect scene '" + scene.id + "'");
    const RasterGrid v = ndvi(scene);
    double sum = 0.0;
    std::size_t count = 0;
    for (int row = 0; row < v.height(); ++row) {
        const double y = v.center_y(row);
        for (int col = 0; col < v.width(); ++col) {
            if (!v.valid(row, col) || !r.contains(v.center_x(col), y)) continue;
            sum += v.at(0, row, col);
            ++count;
        }
    }
    return count == 0 ? kEmptyNdviSentinel : sum / static_cast<double>(count);
}

void BandStatsAccumulator::add(const RasterGrid& t) {
    if (count_.empty()) {
        bands_ = t.bands();
        count_.assign(bands_.size(), 0.0);
        mean_.assign(bands_.size(), 0.0);
        m2_.assign(bands_.size(), 0.0);
    } else if (t.bands() != bands_) {
        throw SchemaError("compute_band_stats: tiles have differing band schemas");
    }
    // Chan et al. pairwise merge of per-tile (count, mean, M2), in tile order.
    for (std::size_t b = 0; b < bands_.size(); ++b) {
        const auto px = t.band(static_cast<int>(b));
        double n = 0.0, s = 0.0;
        for (std::size_t i = 0; i < px.size(); ++i)
            if (t.valid(i)) {
                s += px[i];
                n += 1.0;
            }
        if (n == 0.0) continue;
        const double m = s / n;
        double q = 0.0;
        for (std::size_t i = 0; i < px.size(); ++i)
            if (t.valid(i)) {
                const double d = px[i] - m;
                q += d * d;
            }
        const double total = count_[b] + n;
        const double delta = m - mean_[b];
        mean_[b] += delta * n / total;
        m2_[b] += q + delta * delta * count_[b] * n / total;
        count_[b] = total;
    }
    ++tiles_;
}

BandStats BandStatsAccumulator::result() const {
    if (tiles_ == 0) throw InputError("compute_band_stats: empty tile collection");
    BandStats out;
    out.bands = bands_;
    out.mean = mean_;
    out.stddev.resize(bands_.size());
    for (std::size_t b = 0; b < bands_.size(); ++b)
        out.stddev[b] = count_[b] > 0 ? std::sqrt(std::max(0.0, m2_[b] / count_[b])) : 0.0;
    return out;
}

BandStats compute_band_stats(std::span<const RasterGrid> tiles) {
    if (tiles.empty()) throw InputError("compute_band_stats: empty tile collection");
    BandStatsAccumulator acc;
    for (const auto& t : tiles) acc.add(t);
    return acc.result();
}

RasterGrid normalize(const RasterGrid& tile, const BandStats& stats) {
    if (tile.bands() != stats.bands) throw SchemaError("normalize: band schema does not match statistics");
    RasterGrid out = tile;
    for (int b = 0; b < tile.band_count(); ++b) {
        const double m = stats.mean[b];
        const double s = stats.stddev[b];
        auto px = out.band(b);
        for (std::size_t i = 0; i < px.size(); ++i) {
            if (s == 0.0 || !tile.valid(i))
                px[i] = 0.0f;
            else
                px[i] = static_cast<float>((px[i] - m) / s);
        }
    }
    return out;
}

}  // namespace geoproxy
