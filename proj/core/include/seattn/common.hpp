#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace seattn {

using Shape = std::vector<int64_t>;

// Error taxonomy. ShapeError covers dimension mismatches, ConfigError covers
// invalid layer/geometry configuration, ContractError covers violated call
// preconditions, NumericError covers NaN/Inf and related numeric failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

enum class DType : uint8_t { Float32 = 0, Float64 = 1 };

inline const char* dtype_name(DType dt) {
  return dt == DType::Float32 ? "f32" : "f64";
}

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Row-major strides (innermost dimension contiguous).
inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

}  // namespace seattn
