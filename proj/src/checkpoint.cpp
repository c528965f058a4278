#include "geoproxy/checkpoint.hpp"

#include <algorithm>

#include "bytes.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/raster_io.hpp"

namespace geoproxy {

namespace {
constexpr char kMagic[5] = {'E', 'O', 'C', 'K', '1'};
}

std::size_t CheckpointEntry::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw SchemaError("checkpoint has no entry '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    w.raw(kMagic, sizeof kMagic);
    const std::string header = ck.header.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
    w.str(header);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.entries.size()));
    std::uint64_t offset = 0;
    for (const auto& e : ck.entries) {
        if (e.data.size() != e.element_count()) throw SchemaError("checkpoint entry '" + e.name + "' size does not match its shape");
        if (e.name.size() > 0xffff) throw SchemaError("checkpoint entry name too long");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
        w.str(e.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.put<std::uint32_t>(d);
        w.put<std::uint64_t>(offset);
        offset += e.data.size() * sizeof(float);
    }
    for (const auto& e : ck.entries) w.raw(e.data.data(), e.data.size() * sizeof(float));
    return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    char magic[5];
    r.raw(magic, sizeof magic);
    if (!std::equal(magic, magic + 5, kMagic)) throw SchemaError("not an EOCK1 checkpoint");
    Checkpoint ck;
    const auto header_len = r.get<std::uint32_t>();
    try {
        ck.header = nlohmann::ordered_json::parse(r.str(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint header: ") + e.what());
    }
    const auto n = r.get<std::uint32_t>();
    std::vector<std::uint64_t> offsets;
    for (std::uint32_t i = 0; i < n; ++i) {
        CheckpointEntry e;
        e.name = r.str(r.get<std::uint16_t>());
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw SchemaError("checkpoint entry '" + e.name + "' has implausible rank");
        for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint32_t>());
        offsets.push_back(r.get<std::uint64_t>());
        ck.entries.push_back(std::move(e));
    }
    std::uint64_t expected = 0;
    for (std::size_t i = 0; i < ck.entries.size(); ++i) {
        auto& e = ck.entries[i];
        if (offsets[i] != expected) throw SchemaError("checkpoint entry '" + e.name + "' has a non-contiguous offset");
        const std::size_t count = e.element_count();
        if (count * sizeof(float) > r.remaining()) throw SchemaError("checkpoint entry '" + e.name + "' is truncated");
        e.data.resize(count);
        r.raw(e.data.data(), count * sizeof(float));
        expected += count * sizeof(float);
    }
    if (r.remaining() != 0) throw SchemaError("checkpoint has trailing bytes");
    return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace geoproxy
