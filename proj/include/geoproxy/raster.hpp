#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geoproxy {

// WGS84 equatorial circumference / 360.
inline constexpr double kMetersPerDegree = 111319.49079327357;
inline constexpr double kFootprintSide = 3360.0;
inline constexpr int kTileSize = 224;
inline constexpr double kTilePixelSize = 15.0;
inline constexpr double kMsPixelSize = 30.0;
inline constexpr double kEmptyNdviSentinel = -2.0;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

struct PointXY {
    double x = 0.0;  // east, meters
    double y = 0.0;  // north, meters
};

// Axis-aligned rectangle in projected meters.
struct Rect {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;

    bool contains(double x, double y) const { return x >= min_x && x < max_x && y > min_y && y <= max_y; }
    bool intersects(const Rect& o) const {
        return min_x < o.max_x && o.min_x < max_x && min_y < o.max_y && o.min_y < max_y;
    }
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

// Local equirectangular projection; meters-per-degree of longitude fixed at lat0.
struct LocalFrame {
    LatLon center;

    PointXY project(LatLon p) const;
    LatLon unproject(PointXY p) const;
};

// Multi-band float raster. Pixels are band-major (band, row, col); row 0 is the
// northern edge, origin is the north-west corner.
class RasterGrid {
public:
    RasterGrid() = default;
    RasterGrid(int width, int height, std::vector<std::string> bands, double pixel_size = 1.0,
               double origin_x = 0.0, double origin_y = 0.0);

    int width() const { return width_; }
    int height() const { return height_; }
    int band_count() const { return static_cast<int>(bands_.size()); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }
    const std::vector<std::string>& bands() const { return bands_; }
    double pixel_size() const { return pixel_size_; }
    double origin_x() const { return origin_x_; }
    double origin_y() const { return origin_y_; }

    bool has_band(std::string_view name) const;
    // Throws SchemaError naming the missing band.
    int band_index(std::string_view name) const;

    float at(int band, int row, int col) const { return pixels_[offset(band, row, col)]; }
    float& at(int band, int row, int col) { return pixels_[offset(band, row, col)]; }
    std::span<const float> band(int b) const { return {pixels_.data() + static_cast<std::size_t>(b) * pixel_count(), pixel_count()}; }
    std::span<float> band(int b) { return {pixels_.data() + static_cast<std::size_t>(b) * pixel_count(), pixel_count()}; }

    bool valid(int row, int col) const { return valid_[index(row, col)] != 0; }
    bool valid(std::size_t i) const { return valid_[i] != 0; }
    void set_valid(int row, int col, bool v) { valid_[index(row, col)] = v ? 1 : 0; }
    void set_valid(std::size_t i, bool v) { valid_[i] = v ? 1 : 0; }

    const std::vector<float>& pixels() const { return pixels_; }
    std::vector<float>& pixels() { return pixels_; }
    const std::vector<std::uint8_t>& mask() const { return valid_; }
    std::vector<std::uint8_t>& mask() { return valid_; }
    std::size_t valid_count() const;

    double center_x(int col) const { return origin_x_ + (col + 0.5) * pixel_size_; }
    double center_y(int row) const { return origin_y_ - (row + 0.5) * pixel_size_; }
    Rect extent() const {
        return {origin_x_, origin_y_ - height_ * pixel_size_, origin_x_ + width_ * pixel_size_, origin_y_};
    }

    std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width_ + col; }

    // Throws SchemaError when an invariant does not hold.
    void validate() const;

    // Copy of a subset of bands (in the given order).
    RasterGrid select_bands(const std::vector<std::string>& names) const;

    bool operator==(const RasterGrid&) const = default;

private:
    std::size_t offset(int band, int row, int col) const {
        return static_cast<std::size_t>(band) * pixel_count() + index(row, col);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::string> bands_;
    std::vector<float> pixels_;
    std::vector<std::uint8_t> valid_;
    double pixel_size_ = 1.0;
    double origin_x_ = 0.0;
    double origin_y_ = 0.0;
};

struct Date {
    int year = 2000;
    int month = 1;
    int day = 1;

    auto operator<=>(const Date&) const = default;
    std::string iso() const;
    int day_of_year() const;
    static Date parse(std::string_view iso);
};

struct Scene {
    std::string id;
    RasterGrid ms;                  // blue, green, red, nir at 30 m
    RasterGrid pan;                 // one band at 15 m
    std::vector<std::uint8_t> qa;   // 1 where the QA band flags cloud
    Date acquired;
    int tier = 1;
    LocalFrame frame;               // projection of ms/pan coordinates
    double sun_zenith = 0.0;        // radians
    double sun_azimuth = 0.0;       // radians, clockwise from north

    void validate() const;
    bool cloud(std::size_t ms_pixel) const { return qa[ms_pixel] != 0; }
};

struct AOIFootprint {
    std::string village_id;
    LatLon centroid;
    double side = kFootprintSide;

    Rect rect_in(const LocalFrame& frame) const;
    double area_km2() const { return side * side / 1.0e6; }
};

struct BandStats {
    std::vector<std::string> bands;
    std::vector<double> mean;
    std::vector<double> stddev;
};

// (nir - red) / (nir + red); zero-denominator pixels are invalid with value 0.
RasterGrid ndvi(const RasterGrid& ms);
// As above, additionally invalidating QA-flagged cloud pixels.
RasterGrid ndvi(const Scene& scene);

// Mean NDVI over valid pixels whose centers fall inside the footprint;
// kEmptyNdviSentinel when there are none. Throws CoverageError when the
// footprint misses the scene.
double mean_ndvi(const Scene& scene, const AOIFootprint& aoi);

// Population mean/std per band over valid pixels of every tile.
BandStats compute_band_stats(std::span<const RasterGrid> tiles);

// Streaming form of compute_band_stats; tiles merge in the order added.
class BandStatsAccumulator {
public:
    void add(const RasterGrid& tile);
    BandStats result() const;  // throws InputError when nothing was added

private:
    std::vector<std::string> bands_;
    std::vector<double> count_, mean_, m2_;
    std::size_t tiles_ = 0;
};

// (x - mean) / std per band; zero-std bands and invalid pixels become 0.
RasterGrid normalize(const RasterGrid& tile, const BandStats& stats);

}  // namespace geoproxy
