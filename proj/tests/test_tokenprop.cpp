#include "doctest.h"
#include "tlab/gradcheck.hpp"
#include "tlab/tokenprop.hpp"
#include "tlab/vit.hpp"

using namespace tlab;

TEST_CASE("decoder emits 3x64x64 at the default table configuration") {
  DecoderConfig cfg;  // base 256, x1, scale 64
  cfg.token_dim = 16;
  Rng rng(1);
  Decoder dec(cfg, rng);
  Rng xr(2);
  TokenSet ts{Tensor::randn({1, 16, 16}, xr), 4, 4};
  Tensor img = dec.forward(ts);
  CHECK(img.shape() == Shape{1, 3, 64, 64});
}

TEST_CASE("a 14x14 grid of 196 tokens resizes onto the 16x16 stem") {
  DecoderConfig cfg;
  cfg.base_channels = 32;  // slim width, same connectivity
  cfg.token_dim = 24;
  Rng rng(3);
  Decoder dec(cfg, rng);
  Rng xr(5);
  TokenSet ts{Tensor::randn({1, 196, 24}, xr), 14, 14};
  CHECK(dec.forward(ts).shape() == Shape{1, 3, 64, 64});

  TokenSet no_grid{Tensor::randn({1, 196, 24}, xr), 0, 0};
  CHECK_THROWS_AS(dec.forward(no_grid), Error);
}

TEST_CASE("zero tokens with zero biases decode to a zero image") {
  DecoderConfig cfg;
  cfg.base_channels = 32;
  cfg.token_dim = 8;
  Rng rng(7);
  Decoder dec(cfg, rng);
  TokenSet ts{Tensor::zeros({1, 16, 8}), 4, 4};
  Tensor img = dec.forward(ts);
  for (real v : img.value()) CHECK(v == 0.0);
}

TEST_CASE("higher output scales append upsample stages") {
  for (int scale : {128, 256}) {
    DecoderConfig cfg;
    cfg.base_channels = 32;
    cfg.token_dim = 8;
    cfg.output_scale = scale;
    Rng rng(11);
    Decoder dec(cfg, rng);
    TokenSet ts{Tensor::zeros({1, 16, 8}), 4, 4};
    CHECK(dec.forward(ts).shape() == Shape{1, 3, scale, scale});
  }
  DecoderConfig bad;
  bad.output_scale = 96;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("doubling the channel multiplier quadruples resblock weights") {
  DecoderConfig c1;
  c1.base_channels = 32;
  c1.token_dim = 8;
  DecoderConfig c2 = c1;
  c2.channel_multiplier = 2;
  Rng r1(13), r2(13);
  Decoder d1(c1, r1), d2(c2, r2);
  CHECK(d2.resblock_weight_count() == 4 * d1.resblock_weight_count());
}

TEST_CASE("rec_loss closed forms and scalar-loop oracle") {
  Rng rng(17);
  Tensor a = Tensor::randn({2, 3, 4, 4}, rng);
  CHECK(rec_loss(a, a, RecLossKind::L2).item() == 0.0);
  CHECK(rec_loss(a, a, RecLossKind::L1).item() == 0.0);

  Tensor b = add_scalar(a, 1.0);
  CHECK(rec_loss(b, a, RecLossKind::L1).item() == doctest::Approx(1.0));
  CHECK(rec_loss(b, a, RecLossKind::L2).item() == doctest::Approx(1.0));

  Tensor c = Tensor::randn({2, 3, 4, 4}, rng);
  double l1 = 0, l2 = 0;
  for (size_t i = 0; i < a.value().size(); ++i) {
    double d = a.value()[i] - c.value()[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  l1 /= static_cast<double>(a.numel());
  l2 /= static_cast<double>(a.numel());
  CHECK(std::abs(rec_loss(a, c, RecLossKind::L1).item() - l1) < 1e-10);
  CHECK(std::abs(rec_loss(a, c, RecLossKind::L2).item() - l2) < 1e-10);

  Tensor wrong = Tensor::zeros({2, 3, 4, 5});
  CHECK_THROWS_AS(rec_loss(a, wrong, RecLossKind::L2), Error);
}

TEST_CASE("tokenprop loss combines task and reconstruction terms") {
  Rng rng(19);
  Tensor logits = Tensor::randn({4, 3}, rng);
  std::vector<int64_t> labels = {0, 2, 1, 0};
  Tensor recon = Tensor::randn({4, 3, 8, 8}, rng);
  Tensor target = Tensor::randn({4, 3, 8, 8}, rng);

  LossWeights w0{0.0, RecLossKind::L2};
  auto at0 = tokenprop_loss(logits, labels, recon, target, w0);
  CHECK(at0.total.item() == at0.task.item());  // exact at lambda = 0

  LossWeights w1{1.0, RecLossKind::L2};
  auto at1 = tokenprop_loss(logits, labels, recon, target, w1);
  CHECK(at1.total.item() ==
        doctest::Approx(at1.task.item() + at1.rec.item()).epsilon(1e-15));

  // d(total)/d(lambda) == rec at fixed parameters
  LossWeights wa{0.25, RecLossKind::L2};
  LossWeights wb{0.75, RecLossKind::L2};
  auto ta = tokenprop_loss(logits, labels, recon, target, wa);
  auto tb = tokenprop_loss(logits, labels, recon, target, wb);
  double slope = (tb.total.item() - ta.total.item()) / 0.5;
  CHECK(slope == doctest::Approx(ta.rec.item()).epsilon(1e-12));

  LossWeights bad{-0.5, RecLossKind::L2};
  CHECK_THROWS_AS(tokenprop_loss(logits, labels, recon, target, bad), Error);
}

TEST_CASE("reconstruction gradient reaches the tokenizer but not the body") {
  TokenizerConfig tcfg;
  tcfg.patch_size = 4;
  tcfg.embed_dim = 16;
  tcfg.image_size = 8;
  tcfg.stem_heads = 2;
  Rng rng(23);
  auto tok = make_tokenizer(tcfg, rng);

  VitConfig vcfg;
  vcfg.depth = 1;
  vcfg.heads = 2;
  vcfg.embed_dim = 16;
  vcfg.num_classes = 3;
  VitBody vit(vcfg, rng);

  DecoderConfig dcfg;
  dcfg.base_channels = 16;
  dcfg.token_dim = 16;
  Rng dr(29);
  Decoder dec(dcfg, dr);

  Rng xr(31);
  Tensor img = Tensor::randn({2, 3, 8, 8}, xr);
  std::vector<int64_t> labels = {0, 1};
  Tensor target = bilinear_resize(img, 64, 64);

  auto tok_params = tok->named_params();
  auto vit_params = vit.named_params();
  auto dec_params = dec.named_params();

  auto grad_norm = [](const std::vector<NamedParam>& ps) {
    double s = 0;
    for (const auto& np : ps)
      if (np.tensor.has_grad())
        for (real g : np.tensor.grad()) s += g * g;
    return s;
  };

  // task term zeroed: only the reconstruction path is live
  {
    TokenSet ts = tok->forward(img);
    Tensor recon = dec.forward(ts);
    Tensor rec = rec_loss(recon, target, RecLossKind::L2);
    rec.backward();
    CHECK(grad_norm(tok_params) > 0);
    CHECK(grad_norm(dec_params) > 0);
    CHECK(grad_norm(vit_params) == 0.0);
  }

  // with lambda > 0 the tokenizer gradient differs from the task-only one
  auto tok_grad = [&](real lambda) {
    for (auto& np : tok_params) np.tensor.zero_grad();
    for (auto& np : vit_params) np.tensor.zero_grad();
    for (auto& np : dec_params) np.tensor.zero_grad();
    TokenSet ts = tok->forward(img);
    Tensor logits = vit.forward(ts);
    Tensor recon = dec.forward(ts);
    auto loss = tokenprop_loss(logits, labels, recon, target,
                               {lambda, RecLossKind::L2});
    loss.total.backward();
    std::vector<real> flat;
    for (const auto& np : tok_params)
      if (np.tensor.has_grad())
        flat.insert(flat.end(), np.tensor.grad().begin(),
                    np.tensor.grad().end());
    return flat;
  };
  auto g0 = tok_grad(0.0);
  auto g1 = tok_grad(0.5);
  REQUIRE(g0.size() == g1.size());
  double diff = 0;
  for (size_t i = 0; i < g0.size(); ++i) diff += std::abs(g0[i] - g1[i]);
  CHECK(diff > 0);
}

TEST_CASE("gradient check through the decoder") {
  DecoderConfig cfg;
  cfg.base_channels = 16;
  cfg.token_dim = 4;
  Rng rng(37);
  Decoder dec(cfg, rng);
  Rng xr(41);
  Tensor tokens = Tensor::randn({1, 4, 4}, xr, 1.0, true);
  auto err = grad_check(
      [&](const Tensor& t) {
        TokenSet ts{t, 2, 2};
        return mean(square(dec.forward(ts)));
      },
      tokens);
  REQUIRE(err.has_value());
  CHECK(*err < 1e-3);
}
