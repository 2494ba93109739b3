#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace lmn {

// Invalid user-supplied configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A lookup for a key that does not exist (unknown unit/time, missing oracle
// entry, unknown concept set, ...).
class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when training blows up; carries the component that went non-finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

// Shortest representation that round-trips a double through text.
inline std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_g(double v, int significant = 12) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", significant, v);
  return buf;
}

}  // namespace lmn
