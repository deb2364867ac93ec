#include "tlab/serialize.hpp"

#include <cstring>
#include <fstream>

namespace tlab {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(is.good(), "tlab file {}: truncated", path);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  check(is.good(), "tlab file {}: truncated", path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename T>
void put_value(std::ostream& os, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  if constexpr (sizeof(T) == 4) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  } else {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
  }
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  check(os.is_open(), "cannot open {} for writing", path);
  os.write("TLAB", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(dtype));
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
  for (real v : t.value()) {
    if (dtype == DType::F32)
      put_value<float>(os, static_cast<float>(v));
    else
      put_value<double>(os, static_cast<double>(v));
  }
  check(os.good(), "write error on {}", path);
}

Tensor read_tensor(const std::string& path, bool requires_grad) {
  std::ifstream is(path, std::ios::binary);
  check(is.is_open(), "cannot open {}", path);
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "TLAB", 4) == 0,
        "{} is not a TLAB tensor file (bad magic)", path);
  uint32_t version = get_u32(is, path);
  check(version == 1, "{}: unsupported TLAB version {}", path, version);
  uint32_t dtype_tag = get_u32(is, path);
  check(dtype_tag <= 1, "{}: unknown dtype tag {}", path, dtype_tag);
  DType dtype = static_cast<DType>(dtype_tag);
  uint32_t rank = get_u32(is, path);
  check(rank <= 16, "{}: implausible rank {}", path, rank);
  Shape shape(rank);
  int64_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint64_t d = get_u64(is, path);
    check(d > 0 && d < (uint64_t{1} << 48), "{}: bad extent {}", path, d);
    shape[i] = static_cast<int64_t>(d);
    count *= shape[i];
  }
  std::vector<real> data(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    if (dtype == DType::F32) {
      uint32_t bits = get_u32(is, path);
      float f;
      std::memcpy(&f, &bits, 4);
      data[static_cast<size_t>(i)] = static_cast<real>(f);
    } else {
      uint64_t bits = get_u64(is, path);
      double d;
      std::memcpy(&d, &bits, 8);
      data[static_cast<size_t>(i)] = static_cast<real>(d);
    }
  }
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

void write_u32_list(const std::string& path, const std::vector<uint32_t>& v) {
  std::ofstream os(path, std::ios::binary);
  check(os.is_open(), "cannot open {} for writing", path);
  put_u64(os, v.size());
  for (uint32_t x : v) put_u32(os, x);
  check(os.good(), "write error on {}", path);
}

std::vector<uint32_t> read_u32_list(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.is_open(), "cannot open {}", path);
  uint64_t n = get_u64(is, path);
  check(n < (uint64_t{1} << 40), "{}: implausible list length {}", path, n);
  std::vector<uint32_t> v(static_cast<size_t>(n));
  for (auto& x : v) x = get_u32(is, path);
  return v;
}

uint64_t value_hash(const Tensor& t) {
  uint64_t h = 14695981039346656037ULL;
  for (real v : t.value()) {
    unsigned char bytes[sizeof(real)];
    std::memcpy(bytes, &v, sizeof(real));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace tlab
