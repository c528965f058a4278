#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace geoproxy {

// Container "EOCK1": magic, u32 header length, UTF-8 JSON header, u32 entry
// count, then per entry u16 name length, name, u32 rank, u32 dims[rank],
// u64 byte offset into the data block; then the data block of little-endian
// f32 arrays in entry order.
struct CheckpointEntry {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> data;

    std::size_t element_count() const;
};

struct Checkpoint {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry& entry(const std::string& name) const;  // throws SchemaError
    bool has(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace geoproxy
