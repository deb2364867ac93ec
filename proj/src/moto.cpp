#include "tlab/moto.hpp"

#include <cmath>

namespace tlab {

void MotoConfig::validate() const {
  check(entities >= 1, "moto: entity count must be >= 1, got {}", entities);
  check(tau > 0, "moto: tau must be positive, got {}", tau);
  check(eps > 0, "moto: eps must be positive, got {}", eps);
  check(d_kq >= 1 && in_channels >= 1, "moto: channel widths must be >= 1");
}

MotoParams MotoParams::init(const MotoConfig& cfg, Rng& rng) {
  cfg.validate();
  MotoParams p;
  p.cfg = cfg;
  int n = cfg.entities, C = cfg.in_channels, d = cfg.d_kq;
  p.f_w = Tensor::randn({n, C, 3, 3}, rng, 0.02, true);
  p.f_b = Tensor::zeros({n}, true);
  p.k_w = Tensor::randn({d, C, 3, 3}, rng, 0.02, true);
  p.k_b = Tensor::zeros({d}, true);
  p.q_w = Tensor::randn({d, C, 3, 3}, rng, 0.02, true);
  p.q_b = Tensor::zeros({d}, true);
  p.u = Tensor::randn({1, 1, n}, rng, 0.02, true);
  // identity-like start: zero shift, unit scale
  p.alpha = Tensor::zeros({n, C}, true);
  p.beta = Tensor::ones({n, C}, true);
  return p;
}

void MotoParams::collect_params(const std::string& prefix,
                                std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".f_w", f_w});
  out.push_back({prefix + ".f_b", f_b});
  out.push_back({prefix + ".k_w", k_w});
  out.push_back({prefix + ".k_b", k_b});
  out.push_back({prefix + ".q_w", q_w});
  out.push_back({prefix + ".q_b", q_b});
  out.push_back({prefix + ".u", u});
  out.push_back({prefix + ".alpha", alpha});
  out.push_back({prefix + ".beta", beta});
}

std::vector<NamedParam> MotoParams::named_params(
    const std::string& prefix) const {
  std::vector<NamedParam> out;
  collect_params(prefix, out);
  return out;
}

std::vector<int64_t> sample_point_indices(int64_t h, int64_t w, int64_t n) {
  check(n >= 1 && n <= h * w, "sample_points: cannot place {} points on {}x{}",
        n, h, w);
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(n));
  int64_t s = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (s * s == n && s <= h && s <= w) {
    // centers of an s x s grid, row-major
    for (int64_t a = 0; a < s; ++a)
      for (int64_t b = 0; b < s; ++b) {
        int64_t y = (2 * a + 1) * h / (2 * s);
        int64_t x = (2 * b + 1) * w / (2 * s);
        idx.push_back(y * w + x);
      }
  } else {
    for (int64_t j = 0; j < n; ++j)
      idx.push_back((2 * j + 1) * h * w / (2 * n));
  }
  return idx;
}

Tensor sample_points(const Tensor& feat, int n) {
  check(feat.rank() == 4, "sample_points: expected [N,d,H,W], got {}",
        shape_str(feat.shape()));
  int64_t N = feat.shape()[0], d = feat.shape()[1], H = feat.shape()[2],
          W = feat.shape()[3];
  auto idx = sample_point_indices(H, W, n);
  return gather(reshape(feat, {N, d, H * W}), 2, idx);
}

Tensor semantic_activation(const Tensor& x, const MotoParams& p) {
  if (!x.all_finite()) fail_numeric("moto: non-finite input");
  check(x.rank() == 4 && x.shape()[1] == p.cfg.in_channels,
        "moto: input {} does not match configured {} channels",
        shape_str(x.shape()), p.cfg.in_channels);
  int64_t N = x.shape()[0], H = x.shape()[2], W = x.shape()[3];
  int n = p.cfg.entities;

  Tensor f = conv2d(x, p.f_w, p.f_b, 1, 1);   // [N,n,H,W]
  Tensor k = conv2d(x, p.k_w, p.k_b, 1, 1);   // [N,d,H,W]
  Tensor q = conv2d(x, p.q_w, p.q_b, 1, 1);   // [N,d,H,W]
  Tensor kn = sample_points(k, n);            // [N,d,n]
  Tensor corr = matmul(transpose(kn, {0, 2, 1}),
                       reshape(q, {N, p.cfg.d_kq, H * W}));  // [N,n,H*W]
  corr = reshape(corr, {N, n, H, W});
  Tensor u_nchw = reshape(p.u, {1, n, 1, 1});
  return add(mul(u_nchw, corr), f);
}

SemanticLayout soft_semantic_partition(const Tensor& x, const MotoParams& p) {
  Tensor z = semantic_activation(x, p);
  return {softmax_over_channel(z, 1, p.cfg.tau)};
}

SemanticLayout hard_partition(const Tensor& activation, int entities) {
  check(activation.rank() == 4 && activation.shape()[1] == entities,
        "hard_partition: activation {} does not have {} entity channels",
        shape_str(activation.shape()), entities);
  if (!activation.all_finite())
    fail_numeric("hard_partition: non-finite activation");
  int64_t N = activation.shape()[0], n = entities, H = activation.shape()[2],
          W = activation.shape()[3];
  auto best = argmax(activation, 1);  // [N*H*W], lowest index wins ties
  std::vector<real> onehot(static_cast<size_t>(N * n * H * W), 0.0);
  for (int64_t s = 0; s < N; ++s)
    for (int64_t px = 0; px < H * W; ++px) {
      int64_t e = best[static_cast<size_t>(s * H * W + px)];
      onehot[static_cast<size_t>((s * n + e) * H * W + px)] = 1.0;
    }
  return {Tensor({N, n, H, W}, std::move(onehot), false)};
}

Tensor spatial_modulation(const Tensor& x, const SemanticLayout& layout,
                          const MotoParams& p) {
  check(x.rank() == 4, "spatial_modulation: expected [N,C,H,W], got {}",
        shape_str(x.shape()));
  const Tensor& L = layout.probs;
  check(L.rank() == 4 && L.shape()[0] == x.shape()[0] &&
            L.shape()[2] == x.shape()[2] && L.shape()[3] == x.shape()[3],
        "spatial_modulation: layout {} does not match input {}",
        shape_str(L.shape()), shape_str(x.shape()));
  int64_t n = L.shape()[1], C = x.shape()[1];
  check(p.alpha.shape() == Shape{n, C} && p.beta.shape() == Shape{n, C},
        "spatial_modulation: affine {} does not match {} entities x {} channels",
        shape_str(p.alpha.shape()), n, C);

  Tensor out;
  for (int64_t i = 0; i < n; ++i) {
    Tensor li = slice(L, 1, i, 1);  // [N,1,H,W]
    Tensor wsum = clamp_min(sum(li, {2, 3}, true), 1e-8);
    Tensor mu = div(sum(mul(x, li), {2, 3}, true), wsum);  // [N,C,1,1]
    Tensor centered = sub(x, mu);
    Tensor var = div(sum(mul(square(centered), li), {2, 3}, true), wsum);
    // the tiny floor keeps the sqrt differentiable when a region is constant
    Tensor sigma = sqrt(clamp_min(var, 1e-30));
    Tensor normed = div(centered, add_scalar(sigma, p.cfg.eps));
    Tensor beta_i = reshape(slice(p.beta, 0, i, 1), {1, C, 1, 1});
    Tensor alpha_i = reshape(slice(p.alpha, 0, i, 1), {1, C, 1, 1});
    Tensor term = mul(add(mul(normed, beta_i), alpha_i), li);
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

Tensor moto_forward(const Tensor& x, const MotoParams& p) {
  return spatial_modulation(x, soft_semantic_partition(x, p), p);
}

Tensor moto_forward_hard(const Tensor& x, const MotoParams& p) {
  SemanticLayout hard = hard_partition(semantic_activation(x, p), p.cfg.entities);
  return spatial_modulation(x, hard, p);
}

TokenSet moto_block_insert(const TokenSet& ts, const MotoParams& p) {
  check(ts.rows > 0 && ts.cols > 0, "moto_block_insert: token grid unknown");
  Tensor fm = tokens_to_grid(ts);
  Tensor modulated = moto_forward(fm, p);
  TokenSet out = grid_to_tokens(modulated);
  return out;
}

Palette default_palette(int n) {
  check(n >= 1, "palette: need at least one color");
  Palette pal;
  pal.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    // evenly spaced hues at full saturation
    real h = static_cast<real>(i) * 6 / static_cast<real>(n);
    int sector = static_cast<int>(h) % 6;
    real f = h - std::floor(h);
    real v = 1.0, q = 1 - f, t = f;
    switch (sector) {
      case 0: pal.push_back({v, t, 0}); break;
      case 1: pal.push_back({q, v, 0}); break;
      case 2: pal.push_back({0, v, t}); break;
      case 3: pal.push_back({0, q, v}); break;
      case 4: pal.push_back({t, 0, v}); break;
      default: pal.push_back({v, 0, q}); break;
    }
  }
  return pal;
}

Tensor layout_colorize(const SemanticLayout& layout, const Palette& palette,
                       int64_t sample) {
  const Tensor& L = layout.probs;
  int64_t N = L.shape()[0], n = L.shape()[1], H = L.shape()[2], W = L.shape()[3];
  check(static_cast<int64_t>(palette.size()) == n,
        "layout_colorize: palette has {} colors for {} entities",
        palette.size(), n);
  check(sample >= 0 && sample < N, "layout_colorize: sample {} out of range",
        sample);
  auto best = argmax(L, 1);  // [N*H*W]
  std::vector<real> img(static_cast<size_t>(3 * H * W));
  for (int64_t px = 0; px < H * W; ++px) {
    int64_t e = best[static_cast<size_t>(sample * H * W + px)];
    for (int64_t c = 0; c < 3; ++c)
      img[static_cast<size_t>(c * H * W + px)] =
          palette[static_cast<size_t>(e)][static_cast<size_t>(c)];
  }
  return Tensor({3, H, W}, std::move(img));
}

}  // namespace tlab
