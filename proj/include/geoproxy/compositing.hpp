#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geoproxy/raster.hpp"

namespace geoproxy::compositing {

inline constexpr double kCloudThreshold = 0.05;
// Fraction of the representable maximum (reflectance 1.0) treated as saturated.
inline constexpr float kSaturationLevel = 0.999f;

struct IlluminationGrid {
    int width = 0;
    int height = 0;
    std::vector<float> cos_i;  // per MS pixel
    double sun_zenith = 0.0;   // radians, [0, pi/2)

    void validate() const;
};

// Per-pixel cos(i) for a DEM (same grid as the MS bands) under the given sun.
IlluminationGrid illumination_from_dem(const RasterGrid& dem, double sun_zenith, double sun_azimuth);

struct CompositeTile {
    std::string village_id;
    int year = 0;
    RasterGrid grid;                     // 224 x 224, {red, green, blue}, 15 m
    std::vector<std::int32_t> fill_rank; // per pixel: rank of the source scene, -1 if unfilled
    std::size_t scenes_in = 0;
    std::size_t scenes_used = 0;         // after cloud filtering
    double gap_fraction = 0.0;           // unfilled share of the tile

    bool total_gap() const { return gap_fraction >= 1.0; }
};

// Share of QA-flagged MS pixels among those whose centers fall in the union
// of footprints. Throws CoverageError when no pixel falls in the union.
double cloud_fraction(const Scene& scene, std::span<const AOIFootprint> aoi_union);

// Keeps scenes with cloud_fraction <= threshold, preserving order. Scenes
// that miss the union entirely are dropped.
std::vector<Scene> filter_scenes(std::span<const Scene> scenes, std::span<const AOIFootprint> aoi_union,
                                 double threshold = kCloudThreshold);

// Descending mean NDVI; ties broken by earlier acquisition date, then input order.
std::vector<Scene> rank_scenes(std::span<const Scene> scenes, const AOIFootprint& aoi);

// An MS pixel is usable when it is valid, not cloud-flagged, not saturated in
// any band, and its four pan children are valid.
std::vector<std::uint8_t> usable_mask(const Scene& scene);

struct Mosaic {
    RasterGrid ms;                        // cropped to the footprint's MS pixels
    RasterGrid pan;                       // matching 15 m window
    std::vector<std::int32_t> fill_rank;  // per MS pixel, -1 if never filled
};

// First-usable-in-rank-order fill over the MS pixels covered by the
// footprint; pan pixels follow their parent MS pixel. All scenes must share
// one pixel grid.
Mosaic recursive_mosaic(std::span<const Scene> ranked, const AOIFootprint& aoi);

// Teillet C-correction with per-band regression of reflectance on cos(i).
Scene c_correct(const Scene& scene, const IlluminationGrid& illum);

// MRA fusion: bilinear x2 upsample of the MS bands plus covariance-gain
// injection of pan detail against a 5x5 binomial low-pass of pan.
RasterGrid pansharpen(const RasterGrid& ms_rgb, const RasterGrid& pan);

// x2 bilinear upsample (pixel-center aligned, edge-clamped).
RasterGrid upsample_bilinear_x2(const RasterGrid& src);
// 5x5 binomial [1 4 6 4 1]/16 separable low-pass with edge clamping.
std::vector<float> binomial_lowpass(std::span<const float> band, int width, int height);

struct SceneWithIllumination {
    Scene scene;
    IlluminationGrid illumination;
};

struct CompositeOptions {
    double cloud_threshold = kCloudThreshold;
    std::vector<AOIFootprint> aoi_union;  // defaults to the village footprint
};

// filter -> c_correct -> rank -> mosaic -> pansharpen -> 224x224 resample.
CompositeTile build_composite(const AOIFootprint& village, int year, std::span<const SceneWithIllumination> scenes,
                              const CompositeOptions& options = {});

}  // namespace geoproxy::compositing
