#pragma once

// Plain-text `key = value` configuration files. Blank lines and lines whose
// first non-space character is '#' are ignored.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hgvae {

using KeyValues = std::map<std::string, std::string>;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_value_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);

double parse_double(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace hgvae
