#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace sddr {

// Shortest decimal text that parses back to the same double.
inline std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) return std::to_string(value);
  return std::string(buf, end);
}

}  // namespace sddr
