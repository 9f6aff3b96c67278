#pragma once

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace voltcast {

// JSON has no infinity literal; an unbounded threshold (gate disabled) is
// stored as the string "inf".
inline nlohmann::json json_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double json_to_double(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  return j.get<double>();
}

}  // namespace voltcast
