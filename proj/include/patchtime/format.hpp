#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace patchtime {

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Shortest round-trip text in plain (non-exponent) notation.
inline std::string format_fixed(double v) {
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  return std::string(buf, res.ptr);
}

/// printf-style fixed decimals.
std::string format_decimals(double v, int decimals);

std::optional<double> parse_double(std::string_view text);
std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view line, char sep);

} // namespace patchtime
