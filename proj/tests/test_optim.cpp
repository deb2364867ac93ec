#include <cmath>

#include "doctest.h"
#include "tlab/ops.hpp"
#include "tlab/optim.hpp"

using namespace tlab;

namespace {
NamedParam make_param(const std::string& name, std::vector<real> v,
                      bool trainable = true) {
  int64_t n = static_cast<int64_t>(v.size());
  return {name, Tensor({n}, std::move(v), trainable)};
}
}  // namespace

TEST_CASE("plain sgd is p <- p - lr*g") {
  OptimConfig cfg;
  cfg.kind = OptimKind::Sgd;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  Optimizer opt(cfg);
  auto p = make_param("w", {1.0, 2.0});
  p.tensor.accumulate_grad({0.5, -1.0});
  opt.step({p});
  CHECK(p.tensor.value()[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  CHECK(p.tensor.value()[1] == doctest::Approx(2.0 + 0.1).epsilon(1e-15));
}

TEST_CASE("sgd weight decay alone scales parameters by 1 - lr*wd") {
  OptimConfig cfg;
  cfg.kind = OptimKind::Sgd;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.5;
  Optimizer opt(cfg);
  auto p = make_param("w", {4.0});
  p.tensor.accumulate_grad({0.0});
  opt.step({p});
  CHECK(p.tensor.value()[0] ==
        doctest::Approx(4.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));
}

TEST_CASE("adamw first step on a unit gradient moves by about lr") {
  OptimConfig cfg;
  cfg.kind = OptimKind::AdamW;
  cfg.lr = 0.01;
  Optimizer opt(cfg);
  auto p = make_param("w", {1.0});
  p.tensor.accumulate_grad({1.0});
  opt.step({p});
  // bias-corrected first step: mhat = 1, vhat = 1 -> update = lr/(1+eps)
  CHECK(std::abs((1.0 - p.tensor.value()[0]) - 0.01) < 1e-8);
}

TEST_CASE("identical inputs give identical trajectories") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto p = make_param("w", {0.3, -0.4, 0.9});
    OptimConfig cfg;
    cfg.kind = OptimKind::AdamW;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.01;
    Optimizer opt(cfg);
    for (int i = 0; i < 25; ++i) {
      Tensor loss = sum(square(p.tensor));
      p.tensor.zero_grad();
      loss.backward();
      opt.step({p});
    }
    return p.tensor.value();
  };
  CHECK(run(1) == run(1));
}

TEST_CASE("frozen parameters stay byte-identical under stepping") {
  auto frozen = make_param("frozen", {1.0, -2.0}, false);
  auto live = make_param("live", {0.5});
  OptimConfig cfg;
  cfg.kind = OptimKind::Sgd;
  cfg.lr = 0.5;
  Optimizer opt(cfg);
  for (int i = 0; i < 4; ++i) {
    Tensor loss = sum(square(live.tensor));
    live.tensor.zero_grad();
    loss.backward();
    opt.step({frozen, live});
  }
  CHECK(frozen.tensor.value() == std::vector<real>{1.0, -2.0});
  CHECK(live.tensor.value()[0] != 0.5);
}

TEST_CASE("non-finite gradients are rejected with the parameter name") {
  auto p = make_param("vit.block0.mlp_w1", {1.0});
  p.tensor.accumulate_grad({std::numeric_limits<real>::quiet_NaN()});
  Optimizer opt(OptimConfig{});
  CHECK_THROWS_WITH_AS(opt.step({p}),
                       doctest::Contains("vit.block0.mlp_w1"), Error);
}

TEST_CASE("global norm clipping rescales the update") {
  OptimConfig cfg;
  cfg.kind = OptimKind::Sgd;
  cfg.lr = 1.0;
  cfg.momentum = 0.0;
  cfg.grad_clip = 1.0;
  Optimizer opt(cfg);
  auto p = make_param("w", {0.0, 0.0});
  p.tensor.accumulate_grad({3.0, 4.0});  // norm 5 -> scaled by 1/5
  opt.step({p});
  CHECK(p.tensor.value()[0] == doctest::Approx(-3.0 / 5).epsilon(1e-12));
  CHECK(p.tensor.value()[1] == doctest::Approx(-4.0 / 5).epsilon(1e-12));
}

TEST_CASE("lr schedule warms up linearly then decays with cosine") {
  CHECK(lr_scale_at(LrSchedule::Cosine, 0, 10, 2) == doctest::Approx(0.5));
  CHECK(lr_scale_at(LrSchedule::Cosine, 1, 10, 2) == doctest::Approx(1.0));
  CHECK(lr_scale_at(LrSchedule::Cosine, 2, 10, 2) == doctest::Approx(1.0));
  CHECK(lr_scale_at(LrSchedule::Cosine, 9, 10, 2) ==
        doctest::Approx(0.5 * (1 + std::cos(3.14159265358979323846 * 7 / 8))));
  CHECK(lr_scale_at(LrSchedule::Constant, 7, 10, 0) == doctest::Approx(1.0));
}

TEST_CASE("optimizer state round-trips through a checkpoint directory") {
  auto p = make_param("w", {1.0, 2.0});
  OptimConfig cfg;
  cfg.kind = OptimKind::AdamW;
  cfg.lr = 0.01;
  Optimizer a(cfg);
  for (int i = 0; i < 3; ++i) {
    Tensor loss = sum(square(p.tensor));
    p.tensor.zero_grad();
    loss.backward();
    a.step({p});
  }
  std::string dir = "/tmp/tlab_test_optim_state";
  a.save_state(dir);

  Optimizer b(cfg);
  b.load_state(dir, {p});
  CHECK(b.step_count() == a.step_count());

  // both continue identically from the restored state
  auto q1 = p.tensor.value();
  Tensor t1({2}, q1, true), t2({2}, q1, true);
  Tensor l1 = sum(square(t1));
  l1.backward();
  a.step({{"w", t1}});
  Tensor l2 = sum(square(t2));
  l2.backward();
  b.step({{"w", t2}});
  CHECK(t1.value() == t2.value());
}
