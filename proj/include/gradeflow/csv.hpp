#pragma once

// Minimal RFC 4180 reading/writing: quoted fields, doubled quotes, CRLF or LF.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gradeflow::csv {

using Row = std::vector<std::string>;

std::vector<Row> parse(std::string_view text);
std::vector<Row> read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string format_row(const Row& row);

}  // namespace gradeflow::csv
