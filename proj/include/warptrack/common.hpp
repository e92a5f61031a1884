#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace warptrack {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Shape/usage violations -> invalid_argument; numeric/IO failures -> runtime_error.
[[noreturn]] inline void fail_dim(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw std::runtime_error(msg); }

inline void check_dim(bool ok, const std::string& msg) {
  if (!ok) fail_dim(msg);
}

}  // namespace warptrack
