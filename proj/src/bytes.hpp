#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geoproxy/error.hpp"

namespace geoproxy::detail {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename T>
    void put(T v) { raw(&v, sizeof(T)); }
    void str(std::string_view s) { raw(s.data(), s.size()); }
    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    void raw(void* p, std::size_t n) {
        if (n > in_.size() - pos_) throw SchemaError("truncated container: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    T get() {
        T v{};
        raw(&v, sizeof(T));
        return v;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::size_t remaining() const { return in_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace geoproxy::detail
