#include "geoproxy/raster_io.hpp"

#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "bytes.hpp"
#include "geoproxy/error.hpp"

namespace geoproxy {

namespace {

constexpr std::string_view kMagic = "EORC1";

}  // namespace

std::vector<std::uint8_t> encode_eorc(const RasterGrid& grid, bool with_mask) {
    grid.validate();
    detail::ByteWriter w;
    w.str(kMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.width()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.height()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.band_count()));
    w.put<double>(grid.pixel_size());
    w.put<double>(grid.origin_x());
    w.put<double>(grid.origin_y());
    w.put<std::uint8_t>(with_mask ? 1 : 0);
    w.raw(grid.pixels().data(), grid.pixels().size() * sizeof(float));
    if (with_mask) w.raw(grid.mask().data(), grid.mask().size());
    return std::move(w.bytes());
}

RasterGrid decode_eorc(std::span<const std::uint8_t> bytes, std::vector<std::string> band_names) {
    detail::ByteReader r(bytes);
    if (r.remaining() < kMagic.size() || r.str(kMagic.size()) != kMagic) throw SchemaError("not an EORC1 raster container");
    const auto width = r.get<std::uint32_t>();
    const auto height = r.get<std::uint32_t>();
    const auto band_count = r.get<std::uint32_t>();
    const auto pixel_size = r.get<double>();
    const auto origin_x = r.get<double>();
    const auto origin_y = r.get<double>();
    const auto has_mask = r.get<std::uint8_t>();
    if (band_names.empty())
        for (std::uint32_t b = 0; b < band_count; ++b) band_names.push_back("band" + std::to_string(b + 1));
    if (band_names.size() != band_count) throw SchemaError("EORC band manifest does not match band_count");
    RasterGrid grid(static_cast<int>(width), static_cast<int>(height), std::move(band_names), pixel_size, origin_x, origin_y);
    r.raw(grid.pixels().data(), grid.pixels().size() * sizeof(float));
    if (has_mask) r.raw(grid.mask().data(), grid.mask().size());
    if (r.remaining() != 0) throw SchemaError("trailing bytes after EORC payload");
    for (auto m : grid.mask())
        if (m > 1) throw SchemaError("EORC mask bytes must be 0 or 1");
    return grid;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

void write_eorc(const std::filesystem::path& path, const RasterGrid& grid, bool with_mask, const std::string& units) {
    write_file_bytes(path, encode_eorc(grid, with_mask));
    nlohmann::json side = {{"bands", grid.bands()}, {"units", units}};
    write_text_file(sidecar_path(path), side.dump(2) + "\n");
}

RasterGrid read_eorc(const std::filesystem::path& path) {
    std::vector<std::string> names;
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        try {
            names = nlohmann::json::parse(read_text_file(side)).at("bands").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("bad band manifest " + side.string() + ": " + e.what());
        }
    }
    const auto bytes = read_file_bytes(path);
    return decode_eorc(bytes, std::move(names));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

}  // namespace geoproxy
