#pragma once

#include <charconv>
#include <string>

namespace smk {

/// Shortest text that parses back to the same double, exponent without '+'.
inline std::string shortest(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  std::string s(buf, res.ptr);
  if (auto pos = s.find("e+"); pos != std::string::npos) {
    s.erase(pos + 1, 1);
  }
  return s;
}

}  // namespace smk
