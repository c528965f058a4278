#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geoproxy/raster.hpp"

namespace geoproxy {

// Raster container "EORC1": magic, u32 width, u32 height, u32 band_count,
// f64 pixel_size, f64 origin_x, f64 origin_y, u8 has_mask, band-major f32
// pixels, then width*height mask bytes when has_mask is set. All
// little-endian. Band names live in a "<file>.json" sidecar.
std::vector<std::uint8_t> encode_eorc(const RasterGrid& grid, bool with_mask = true);
RasterGrid decode_eorc(std::span<const std::uint8_t> bytes, std::vector<std::string> band_names = {});

void write_eorc(const std::filesystem::path& path, const RasterGrid& grid, bool with_mask = true,
                const std::string& units = "m");
RasterGrid read_eorc(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

// Whole-file helpers shared by the container readers.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace geoproxy
