#include "tlab/image.hpp"

#include <fstream>

namespace tlab {

void write_ppm(const std::string& path, const Tensor& image) {
  check(image.rank() == 3 && image.shape()[0] == 3,
        "write_ppm: image must be [3,H,W], got {}", shape_str(image.shape()));
  int64_t H = image.shape()[1], W = image.shape()[2];
  std::ofstream os(path, std::ios::binary);
  check(os.is_open(), "cannot open {} for writing", path);
  os << "P6\n" << W << " " << H << "\n255\n";
  const auto& v = image.value();
  std::vector<unsigned char> row(static_cast<size_t>(W * 3));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        real p = v[static_cast<size_t>((c * H + y) * W + x)];
        p = p < 0 ? 0 : (p > 1 ? real(1) : p);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(p * 255 + real(0.5));
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  check(os.good(), "write error on {}", path);
}

namespace {
int next_token(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comments per the PPM grammar
  int c = is.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = is.get();
    c = is.get();
  }
  check(c != EOF, "{}: truncated PPM header", path);
  int v = 0;
  while (std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}
}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.is_open(), "cannot open {}", path);
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  check(m0 == 'P' && m1 == '6', "{} is not a binary PPM (P6) file", path);
  int W = next_token(is, path);
  int H = next_token(is, path);
  int maxval = next_token(is, path);
  check(W > 0 && H > 0 && maxval == 255, "{}: unsupported PPM geometry", path);
  std::vector<unsigned char> raw(static_cast<size_t>(W) * H * 3);
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  check(is.gcount() == static_cast<std::streamsize>(raw.size()),
        "{}: truncated pixel data", path);
  std::vector<real> data(raw.size());
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        data[static_cast<size_t>((c * H + y) * W + x)] =
            static_cast<real>(raw[static_cast<size_t>((y * W + x) * 3 + c)]) /
            real(255);
  return Tensor({3, H, W}, std::move(data));
}

}  // namespace tlab
