#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"

namespace v2v {

/// Ordered "key = value" pairs. Blank lines and lines starting with '#' are
/// skipped; a repeated key keeps its last value.
using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline KeyValues parse_key_values(std::string_view text, const std::string& source = "<config>") {
  KeyValues kv;
  int lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    const auto line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::InvalidConfig, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, source + ":" + std::to_string(lineno) + ": empty key");
    kv[std::string(key)] = std::string(detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_key_values(std::string_view(bytes.data(), bytes.size()), path.string());
}

template <typename T>
T parse_number(std::string_view key, std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw Error(ErrorCode::InvalidConfig, "'" + std::string(key) + "': cannot parse '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error(ErrorCode::InvalidConfig, "'" + std::string(key) + "': expected a boolean, got '" + std::string(s) + "'");
}

}  // namespace v2v
