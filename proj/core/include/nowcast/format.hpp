#pragma once

#include <charconv>
#include <string>

namespace nowcast {

// Shortest decimal form that round-trips the exact double, so emitted
// files parse back losslessly.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace nowcast
