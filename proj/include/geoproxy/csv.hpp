#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace geoproxy::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Throws SchemaError when the column is absent.
    std::size_t column(std::string_view name) const;
};

std::vector<std::string> split_line(std::string_view line);
Table parse(std::istream& in);
Table read(const std::filesystem::path& path);

std::string join(const std::vector<std::string>& fields);
void write(const std::filesystem::path& path, const Table& table);

// Shortest round-trip decimal form; from_chars reproduces the exact double.
std::string format_number(double v);
double parse_number(std::string_view s);
// Empty or "NA" cells are absent.
bool is_absent(std::string_view s);

}  // namespace geoproxy::csv
