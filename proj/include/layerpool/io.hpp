#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace layerpool {

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_real(double v);
double parse_real(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);

/// Flat `key = value` file. '#' starts a comment; blank lines are ignored.
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::map<std::string, std::string> load_key_values(const std::filesystem::path& path);

}  // namespace layerpool
