#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace tlab {

// Scalar type for all tensor data. 64-bit is the default; configure with
// -DTLAB_USE_FLOAT32=ON for a faster 32-bit build (gradient checks and the
// acceptance suite assume the 64-bit build).
#ifdef TLAB_USE_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int64_t>;

class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when values blow up (non-finite inputs to guarded ops); training
// loops route it into their abort path instead of crashing.
class NumericError : public Error {
  using Error::Error;
};

template <typename... Args>
[[noreturn]] void fail(fmt::format_string<Args...> f, Args&&... args) {
  throw Error(fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_numeric(fmt::format_string<Args...> f, Args&&... args) {
  throw NumericError(fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void check(bool cond, fmt::format_string<Args...> f, Args&&... args) {
  if (!cond) fail(f, std::forward<Args>(args)...);
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  return fmt::format("[{}]", fmt::join(s, ", "));
}

}  // namespace tlab
