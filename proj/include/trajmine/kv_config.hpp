#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace trajmine {

/// Parsed `key = value` file. Blank lines and `#` comments are ignored, keys
/// may repeat and keep file order.
struct KeyValueFile {
  std::vector<std::pair<std::string, std::string>> entries;

  static KeyValueFile parse(std::string_view text);
  static KeyValueFile load(const std::filesystem::path& path);
};

double parse_double(std::string_view key, std::string_view value);
long long parse_int(std::string_view key, std::string_view value);

}  // namespace trajmine
