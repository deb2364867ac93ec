#include "tlab/battery.hpp"

#include "tlab/gradcheck.hpp"
#include "tlab/moto.hpp"
#include "tlab/tokenprop.hpp"
#include "tlab/train.hpp"
#include "tlab/vit.hpp"

namespace tlab {

namespace {

constexpr real kOpTol = 1e-4;
constexpr real kPathTol = 1e-3;

Tensor away_from(Tensor t, real margin) {
  // pushes every value away from 0 so kinked ops see smooth neighborhoods
  for (auto& v : t.mutable_value()) v += v >= 0 ? margin : -margin;
  return t;
}

using Fn = std::function<Tensor(const Tensor&)>;

std::optional<real> check_with(const Fn& f, const Tensor& x) {
  return grad_check(f, x, 1e-5);
}

void add(std::vector<BatteryCase>& out, const std::string& name, real tol,
         std::function<std::optional<real>(uint64_t)> run) {
  out.push_back({name, tol, std::move(run)});
}

}  // namespace

const std::vector<BatteryCase>& gradcheck_battery() {
  static const std::vector<BatteryCase> cases = [] {
    std::vector<BatteryCase> c;

    add(c, "add_broadcast", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({2, 3, 4}, r, 1.0, true);
      Tensor b = Tensor::randn({3, 1}, r);
      return check_with([&](const Tensor& t) { return sum(square(add(t, b))); }, a);
    });
    add(c, "sub_mul", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({3, 4}, r, 1.0, true);
      Tensor b = Tensor::randn({4}, r);
      return check_with(
          [&](const Tensor& t) { return sum(mul(sub(t, b), t)); }, a);
    });
    add(c, "div", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({3, 4}, r, 1.0, true);
      Tensor b = away_from(Tensor::randn({3, 4}, r), 0.5);
      return check_with([&](const Tensor& t) { return sum(div(t, b)); }, a);
    });
    add(c, "sqrt_square_abs", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = away_from(Tensor::randn({3, 4}, r, 1.0, true), 0.3);
      return check_with(
          [&](const Tensor& t) {
            return sum(add(sqrt(square(t)), abs(t)));
          },
          a);
    });
    add(c, "relu_gelu", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = away_from(Tensor::randn({4, 5}, r, 1.0, true), 0.25);
      return check_with(
          [&](const Tensor& t) { return sum(add(relu(t), gelu(t))); }, a);
    });
    add(c, "clamp_min", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = away_from(Tensor::randn({4, 4}, r, 1.0, true), 0.25);
      return check_with(
          [&](const Tensor& t) { return sum(square(clamp_min(t, 0.0))); }, a);
    });
    add(c, "sum_mean_axes", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({2, 3, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(mean(t, {0, 2}, false)));
          },
          a);
    });
    add(c, "variance_axes", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({3, 5}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) { return sum(variance(t, {1}, false, true)); },
          a);
    });
    add(c, "reshape_transpose", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({2, 3, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(transpose(reshape(t, {4, 6}), {1, 0})));
          },
          a);
    });
    add(c, "slice_concat", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({3, 6}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            Tensor left = slice(t, 1, 0, 2);
            Tensor right = slice(t, 1, 3, 3);
            return sum(square(concat({right, left}, 1)));
          },
          a);
    });
    add(c, "gather", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({2, 5, 3}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(gather(t, 1, {4, 0, 4, 2})));
          },
          a);
    });
    add(c, "matmul", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({3, 4}, r, 1.0, true);
      Tensor b = Tensor::randn({4, 2}, r);
      return check_with(
          [&](const Tensor& t) { return sum(square(matmul(t, b))); }, a);
    });
    add(c, "matmul_batched", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor a = Tensor::randn({2, 2, 3, 4}, r, 1.0, true);
      Tensor b = Tensor::randn({1, 2, 4, 3}, r);
      return check_with(
          [&](const Tensor& t) { return sum(square(matmul(t, b))); }, a);
    });
    add(c, "linear_bias", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({3, 4}, r);
      Tensor w = Tensor::randn({4, 5}, r, 1.0, true);
      Tensor b = Tensor::randn({5}, r);
      return check_with(
          [&](const Tensor& t) { return sum(square(linear(x, t, b))); }, w);
    });
    add(c, "conv2d_s1p1", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 5, 5}, r, 1.0, true);
      Tensor w = Tensor::randn({3, 2, 3, 3}, r);
      Tensor b = Tensor::randn({3}, r);
      return check_with(
          [&](const Tensor& t) { return sum(square(conv2d(t, w, b, 1, 1))); },
          x);
    });
    add(c, "conv2d_weight_s2", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({2, 2, 6, 6}, r);
      Tensor w = Tensor::randn({3, 2, 3, 3}, r, 1.0, true);
      Tensor b = Tensor::randn({3}, r);
      return check_with(
          [&](const Tensor& t) { return sum(square(conv2d(x, t, b, 2, 2))); },
          w);
    });
    add(c, "pad2d_zero", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 4, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(pad2d(t, 1, 2, 0, 1, PadMode::Zero)));
          },
          x);
    });
    add(c, "pad2d_replicate", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 4, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(pad2d(t, 2, 1, 1, 2, PadMode::Replicate)));
          },
          x);
    });
    add(c, "bilinear_resize", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 4, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(bilinear_resize(bilinear_resize(t, 7, 7), 3, 3)));
          },
          x);
    });
    add(c, "pixel_shuffle", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({1, 8, 3, 3}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) { return sum(square(pixel_shuffle(t, 2))); },
          x);
    });
    add(c, "layer_norm", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({3, 6}, r, 1.0, true);
      Tensor g = Tensor::randn({6}, r);
      Tensor b = Tensor::randn({6}, r);
      return check_with(
          [&](const Tensor& t) { return sum(square(layer_norm(t, g, b))); },
          x);
    });
    add(c, "softmax_scaled", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({2, 5, 3}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(softmax_over_channel(t, 1, 0.1)));
          },
          x);
    });
    add(c, "cross_entropy", kOpTol, [](uint64_t s) {
      Rng r(s);
      Tensor x = Tensor::randn({4, 5}, r, 1.0, true);
      std::vector<int64_t> labels;
      for (int i = 0; i < 4; ++i) labels.push_back(r.uniform_int(5));
      return check_with(
          [&](const Tensor& t) { return cross_entropy(t, labels); }, x);
    });

    // composed model paths
    add(c, "moto_forward_input", kPathTol, [](uint64_t s) {
      MotoConfig mc;
      mc.entities = 2;
      mc.in_channels = 2;
      mc.d_kq = 4;
      Rng pr(s ^ 0xABCD);
      MotoParams p = MotoParams::init(mc, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 4, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) { return sum(square(moto_forward(t, p))); }, x);
    });
    add(c, "moto_forward_dictionary", kPathTol, [](uint64_t s) {
      MotoConfig mc;
      mc.entities = 3;
      mc.in_channels = 2;
      mc.d_kq = 4;
      Rng pr(s ^ 0xABCE);
      MotoParams p = MotoParams::init(mc, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 4, 4}, r);
      return check_with(
          [&](const Tensor& t) {
            MotoParams q = p;
            q.u = t;
            return sum(square(moto_forward(x, q)));
          },
          p.u);
    });
    add(c, "moto_forward_affine", kPathTol, [](uint64_t s) {
      MotoConfig mc;
      mc.entities = 2;
      mc.in_channels = 2;
      mc.d_kq = 4;
      Rng pr(s ^ 0xABCF);
      MotoParams p = MotoParams::init(mc, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 2, 3, 3}, r);
      return check_with(
          [&](const Tensor& t) {
            MotoParams q = p;
            q.beta = t;
            return sum(square(moto_forward(x, q)));
          },
          p.beta);
    });
    add(c, "moto_forward_semantic_conv", kPathTol, [](uint64_t s) {
      MotoConfig mc;
      mc.entities = 2;
      mc.in_channels = 1;
      mc.d_kq = 2;
      Rng pr(s ^ 0xABD0);
      MotoParams p = MotoParams::init(mc, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 1, 4, 4}, r);
      return check_with(
          [&](const Tensor& t) {
            MotoParams q = p;
            q.f_w = t;
            return sum(square(moto_forward(x, q)));
          },
          p.f_w);
    });

    auto stem_case = [](TokenizerVariant v) {
      return [v](uint64_t s) -> std::optional<real> {
        TokenizerConfig cfg;
        cfg.variant = v;
        cfg.patch_size = 4;
        cfg.embed_dim = 8;
        cfg.image_size = 8;
        cfg.stem_heads = 2;
        Rng pr(s ^ 0x70CE);
        auto tok = make_tokenizer(cfg, pr);
        Rng r(s);
        Tensor x = Tensor::randn({1, 3, 8, 8}, r, 1.0, true);
        return check_with(
            [&](const Tensor& t) {
              return sum(square(tok->forward(t).tokens));
            },
            x);
      };
    };
    add(c, "tokenizer_patchify", kPathTol, stem_case(TokenizerVariant::Patchify));
    add(c, "tokenizer_intra", kPathTol, stem_case(TokenizerVariant::Intra));
    add(c, "tokenizer_intra_local", kPathTol,
        stem_case(TokenizerVariant::IntraLocal));
    add(c, "tokenizer_intra_local_inter", kPathTol,
        stem_case(TokenizerVariant::IntraLocalInter));

    add(c, "vit_depth1", kPathTol, [](uint64_t s) {
      VitConfig cfg;
      cfg.depth = 1;
      cfg.heads = 2;
      cfg.embed_dim = 8;
      cfg.num_classes = 3;
      Rng pr(s ^ 0x717B);
      VitBody vit(cfg, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 4, 8}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return sum(square(vit.forward(TokenSet{t, 2, 2})));
          },
          x);
    });
    add(c, "decoder", kPathTol, [](uint64_t s) {
      DecoderConfig cfg;
      cfg.base_channels = 16;
      cfg.token_dim = 4;
      Rng pr(s ^ 0xDEC0);
      Decoder dec(cfg, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 4, 4}, r, 1.0, true);
      return check_with(
          [&](const Tensor& t) {
            return mean(square(dec.forward(TokenSet{t, 2, 2})));
          },
          x);
    });
    add(c, "tokenprop_total_path", kPathTol, [](uint64_t s) {
      TokenizerConfig tc;
      tc.patch_size = 4;
      tc.embed_dim = 8;
      tc.image_size = 8;
      tc.stem_heads = 2;
      VitConfig vc;
      vc.depth = 1;
      vc.heads = 2;
      vc.embed_dim = 8;
      vc.num_classes = 3;
      DecoderConfig dc;
      dc.base_channels = 16;
      dc.token_dim = 8;
      Rng pr(s ^ 0x70A1);
      auto tok = make_tokenizer(tc, pr);
      VitBody vit(vc, pr);
      Decoder dec(dc, pr);
      Rng r(s);
      Tensor x = Tensor::randn({1, 3, 8, 8}, r, 0.5, true);
      std::vector<int64_t> labels = {1};
      return check_with(
          [&](const Tensor& t) {
            TokenSet tokens = tok->forward(t);
            Tensor logits = vit.forward(tokens);
            Tensor recon = dec.forward(tokens);
            Tensor target = bilinear_resize(t, 64, 64);
            auto l = tokenprop_loss(logits, labels, recon, target,
                                    {0.1, RecLossKind::L2});
            return l.total;
          },
          x);
    });

    return c;
  }();
  return cases;
}

std::vector<BatteryOutcome> run_gradcheck_battery(int seeds) {
  check(seeds >= 1, "battery: need at least one seed");
  std::vector<BatteryOutcome> out;
  for (const auto& bc : gradcheck_battery()) {
    BatteryOutcome o;
    o.name = bc.name;
    o.tolerance = bc.tolerance;
    for (int s = 0; s < seeds; ++s) {
      auto err = bc.run(static_cast<uint64_t>(s) + 1);
      if (err) o.worst = std::max(o.worst, *err);
    }
    o.passed = o.worst < bc.tolerance;
    out.push_back(o);
  }
  return out;
}

}  // namespace tlab
