#include "doctest.h"
#include "tlab/gradcheck.hpp"
#include "tlab/vit.hpp"

using namespace tlab;

namespace {
TokenSet random_tokens(int64_t n, int64_t t, int64_t d, uint64_t seed,
                       int64_t rows, int64_t cols) {
  Rng rng(seed);
  TokenSet ts;
  ts.tokens = Tensor::randn({n, t, d}, rng);
  ts.rows = rows;
  ts.cols = cols;
  return ts;
}
}  // namespace

TEST_CASE("vit produces [N, num_classes] logits") {
  VitConfig cfg;
  cfg.depth = 2;
  cfg.heads = 4;
  cfg.embed_dim = 32;
  cfg.num_classes = 7;
  Rng rng(1);
  VitBody vit(cfg, rng);
  Tensor logits = vit.forward(random_tokens(3, 8, 32, 2, 2, 4));
  CHECK(logits.shape() == Shape{3, 7});

  TokenSet bad = random_tokens(1, 8, 16, 3, 2, 4);
  CHECK_THROWS_AS(vit.forward(bad), Error);
}

TEST_CASE("zero-depth body is the head applied to the normed class token") {
  VitConfig cfg;
  cfg.depth = 0;
  cfg.heads = 2;
  cfg.embed_dim = 8;
  cfg.num_classes = 4;
  Rng rng(5);
  VitBody vit(cfg, rng);
  Tensor logits = vit.forward(random_tokens(2, 4, 8, 7, 2, 2));

  // oracle from the body's own parameters: tokens never enter at depth 0
  Tensor cls, ln_g, ln_b, hw, hb;
  for (auto& np : vit.named_params()) {
    if (np.name == "vit.cls") cls = np.tensor;
    if (np.name == "vit.ln_g") ln_g = np.tensor;
    if (np.name == "vit.ln_b") ln_b = np.tensor;
    if (np.name == "vit.head_w") hw = np.tensor;
    if (np.name == "vit.head_b") hb = np.tensor;
  }
  Tensor want = linear(reshape(layer_norm(cls, ln_g, ln_b), {1, 8}), hw, hb);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t k = 0; k < 4; ++k)
      CHECK(logits.value()[static_cast<size_t>(n * 4 + k)] ==
            doctest::Approx(want.value()[static_cast<size_t>(k)])
                .epsilon(1e-12));
}

TEST_CASE("attention weights sum to one per query") {
  Rng rng(11);
  MultiHeadAttention attn = MultiHeadAttention::init(16, 4, rng);
  Rng xr(13);
  Tensor x = Tensor::randn({2, 6, 16}, xr);
  Tensor weights;
  attn.forward(x, &weights);
  REQUIRE(weights.shape() == Shape{2, 4, 6, 6});
  const auto& w = weights.value();
  for (int64_t row = 0; row < 2 * 4 * 6; ++row) {
    real s = 0;
    for (int64_t j = 0; j < 6; ++j) s += w[static_cast<size_t>(row * 6 + j)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("class logits are invariant to patch-token permutation") {
  VitConfig cfg;
  cfg.depth = 3;
  cfg.heads = 4;
  cfg.embed_dim = 32;
  cfg.num_classes = 5;
  Rng rng(17);
  VitBody vit(cfg, rng);

  TokenSet ts = random_tokens(2, 9, 32, 19, 3, 3);
  std::vector<int64_t> perm = {4, 7, 1, 0, 8, 2, 6, 3, 5};
  TokenSet shuffled;
  shuffled.tokens = gather(ts.tokens, 1, perm);
  shuffled.rows = 3;
  shuffled.cols = 3;

  Tensor a = vit.forward(ts);
  Tensor b = vit.forward(shuffled);
  for (size_t i = 0; i < a.value().size(); ++i)
    CHECK(std::abs(a.value()[i] - b.value()[i]) < 1e-5);
}

TEST_CASE("gradient check through a depth-1 body") {
  VitConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.embed_dim = 8;
  cfg.num_classes = 3;
  Rng rng(23);
  VitBody vit(cfg, rng);
  Rng xr(29);
  Tensor x = Tensor::randn({1, 4, 8}, xr, 1.0, true);
  auto err = grad_check(
      [&](const Tensor& t) {
        TokenSet ts{t, 2, 2};
        return sum(square(vit.forward(ts)));
      },
      x);
  REQUIRE(err.has_value());
  CHECK(*err < 1e-3);
}

TEST_CASE("moto placements run inside the body and keep shapes") {
  VitConfig cfg;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.embed_dim = 16;
  cfg.num_classes = 4;
  cfg.moto_placements = {1, 2};
  cfg.moto_entities = 2;
  cfg.moto_d_kq = 8;
  Rng rng(31);
  VitBody vit(cfg, rng);
  Tensor logits = vit.forward(random_tokens(2, 6, 16, 37, 2, 3));
  CHECK(logits.shape() == Shape{2, 4});

  int moto_params = 0;
  for (auto& np : vit.named_params())
    if (np.name.find(".moto.") != std::string::npos) ++moto_params;
  CHECK(moto_params == 2 * 9);  // two placements, nine tensors each

  VitConfig bad = cfg;
  bad.moto_placements = {3};
  Rng r2(41);
  CHECK_THROWS_AS(VitBody(bad, r2), Error);
}

TEST_CASE("stochastic depth keeps expectation and needs an rng") {
  VitConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.embed_dim = 8;
  cfg.num_classes = 3;
  cfg.drop_path_rate = 0.5;
  Rng rng(43);
  VitBody vit(cfg, rng);
  TokenSet ts = random_tokens(4, 4, 8, 47, 2, 2);
  CHECK_THROWS_AS(vit.forward(ts, /*training=*/true, nullptr), Error);
  Rng dr(49);
  Tensor out = vit.forward(ts, true, &dr);
  CHECK(out.shape() == Shape{4, 3});
  // eval path ignores drop entirely
  Tensor e1 = vit.forward(ts);
  Tensor e2 = vit.forward(ts);
  CHECK(e1.value() == e2.value());
}
