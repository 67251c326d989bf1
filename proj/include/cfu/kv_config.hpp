#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cfu {

// `key = value` text files. '#' starts a comment; blank lines are ignored.
// Later duplicates override earlier ones.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

double parse_double(const std::string& key, const std::string& value);
long parse_long(const std::string& key, const std::string& value);
// Comma-separated list of numbers.
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

}  // namespace cfu
