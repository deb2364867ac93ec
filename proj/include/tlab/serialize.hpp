#pragma once

#include <cstdint>
#include <string>

#include "tlab/tensor.hpp"

namespace tlab {

// Flat binary tensor format used for checkpoints and dataset shards:
//   magic "TLAB" | u32 version (1) | u32 dtype (0 = f32, 1 = f64) |
//   u32 rank | rank x u64 extents | raw values
// All integers and values are little-endian.
enum class DType : uint32_t { F32 = 0, F64 = 1 };

constexpr DType native_dtype() {
  return sizeof(real) == 4 ? DType::F32 : DType::F64;
}

void write_tensor(const std::string& path, const Tensor& t,
                  DType dtype = native_dtype());
// Values are converted to the library scalar type on load.
Tensor read_tensor(const std::string& path, bool requires_grad = false);

void write_u32_list(const std::string& path, const std::vector<uint32_t>& v);
std::vector<uint32_t> read_u32_list(const std::string& path);

// FNV-1a over the raw value bytes; used to assert parameters untouched.
uint64_t value_hash(const Tensor& t);

}  // namespace tlab
