#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tlab/image.hpp"
#include "tlab/serialize.hpp"

using namespace tlab;

TEST_CASE("tensor files round-trip in both dtypes") {
  Rng rng(1);
  Tensor t = Tensor::randn({2, 3, 4}, rng);
  std::string p64 = "/tmp/tlab_test_t64.tlab";
  std::string p32 = "/tmp/tlab_test_t32.tlab";

  write_tensor(p64, t, DType::F64);
  Tensor back = read_tensor(p64);
  CHECK(back.shape() == t.shape());
  CHECK(back.value() == t.value());

  write_tensor(p32, t, DType::F32);
  Tensor b32 = read_tensor(p32);
  CHECK(b32.shape() == t.shape());
  for (size_t i = 0; i < b32.value().size(); ++i)
    CHECK(b32.value()[i] ==
          doctest::Approx(t.value()[i]).epsilon(1e-6));
  // a second trip through f32 is lossless
  write_tensor(p32, b32, DType::F32);
  CHECK(read_tensor(p32).value() == b32.value());
}

TEST_CASE("tensor reader rejects garbage naming the file") {
  std::string path = "/tmp/tlab_test_bad.tlab";
  std::ofstream(path) << "definitely not a tensor";
  CHECK_THROWS_WITH_AS(read_tensor(path), doctest::Contains("bad magic"),
                       Error);
}

TEST_CASE("u32 lists round-trip") {
  std::vector<uint32_t> v = {0, 7, 42, 4294967295u};
  std::string path = "/tmp/tlab_test_u32.bin";
  write_u32_list(path, v);
  CHECK(read_u32_list(path) == v);
}

TEST_CASE("value hash detects single-element changes") {
  Tensor a({3}, {1, 2, 3});
  Tensor b({3}, {1, 2, 3});
  CHECK(value_hash(a) == value_hash(b));
  b.mutable_value()[2] = 3.0000001;
  CHECK(value_hash(a) != value_hash(b));
}

TEST_CASE("ppm images round-trip through disk") {
  Rng rng(5);
  Tensor img = Tensor::uniform({3, 6, 9}, rng, 0.0, 1.0);
  std::string path = "/tmp/tlab_test_img.ppm";
  write_ppm(path, img);
  Tensor back = read_ppm(path);
  CHECK(back.shape() == img.shape());
  for (size_t i = 0; i < back.value().size(); ++i)
    CHECK(std::abs(back.value()[i] - img.value()[i]) <= 0.5 / 255 + 1e-9);
  // quantized values survive a second trip exactly
  write_ppm(path, back);
  CHECK(read_ppm(path).value() == back.value());
}
