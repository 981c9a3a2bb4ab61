#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include "can/error.hpp"

namespace can::csv {

// Shortest round-trip text for a double; empty for NaN.
inline std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : ""; }

inline std::ofstream open(const std::string& path, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# config_hash=" << config_hash << '\n';
  return out;
}

}  // namespace can::csv
