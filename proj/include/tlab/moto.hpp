#pragma once

#include <array>
#include <string>
#include <vector>

#include "tlab/ops.hpp"
#include "tlab/tokenizer.hpp"

namespace tlab {

struct MotoConfig {
  int entities = 8;    // n semantic entities
  real tau = 0.1;      // softmax scale applied inside the exponent
  real eps = 1e-5;     // added to the standard deviation, not the variance
  int d_kq = 64;       // channel width of the k/q extractors
  int in_channels = 3;

  void validate() const;
};

// Learnable state of one MoTo stage: 3x3 stride-1 extractors f (n channels),
// k and q (d_kq channels), the correlation dictionary u, and a per-entity
// per-channel affine (alpha shift, beta scale).
struct MotoParams {
  MotoConfig cfg;
  Tensor f_w, f_b;
  Tensor k_w, k_b;
  Tensor q_w, q_b;
  Tensor u;            // [1, 1, n]
  Tensor alpha, beta;  // [n, C]

  static MotoParams init(const MotoConfig& cfg, Rng& rng);
  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) const;
  std::vector<NamedParam> named_params(const std::string& prefix) const;
};

// Per-pixel probability over the n semantic entities; sums to 1 over the
// entity axis at every pixel.
struct SemanticLayout {
  Tensor probs;  // [N, n, H, W]
  int64_t entities() const { return probs.shape()[1]; }
};

// Flat row-major indices of n uniform sample points on an HxW grid: centers
// of an sxs subgrid when n = s^2, otherwise n evenly spaced flat positions.
// The same (H, W, n) always yields the same indices.
std::vector<int64_t> sample_point_indices(int64_t h, int64_t w, int64_t n);

// Picks the n uniform feature points from [N,d,H,W] -> [N,d,n].
Tensor sample_points(const Tensor& feat, int n);

// Z = u * k_n(X)^T q(X) + f(X), the pre-softmax semantic activation.
Tensor semantic_activation(const Tensor& x, const MotoParams& p);

// softmax over entities with scale tau applied to Z.
SemanticLayout soft_semantic_partition(const Tensor& x, const MotoParams& p);

// One-hot layout at the per-pixel argmax entity (ties break toward the
// lowest index). The result carries no gradient: the argmax path is
// stop-gradient, while the X path through the modulation still flows.
SemanticLayout hard_partition(const Tensor& activation, int entities);

// Per-entity layout-weighted normalization, summed under the layout:
//   mu_i    = sum_hw(X * L_i) / sum_hw(L_i)        (per sample, per channel)
//   sigma_i = sqrt(sum_hw(L_i * (X - mu_i)^2) / sum_hw(L_i))
//   out     = sum_i ((X - mu_i) / (sigma_i + eps) * beta_i + alpha_i) * L_i
// Denominators are clamped at 1e-8 so an empty entity (possible only with a
// hard layout) contributes exactly zero instead of dividing by zero.
Tensor spatial_modulation(const Tensor& x, const SemanticLayout& layout,
                          const MotoParams& p);

// Full MoTo stage: soft partition followed by spatial-aware modulation.
// With n = 1 this reduces to channelwise instance normalization with affine.
Tensor moto_forward(const Tensor& x, const MotoParams& p);

// Ablation path: modulation under the one-hot argmax layout.
Tensor moto_forward_hard(const Tensor& x, const MotoParams& p);

// Tokens -> grid -> MoTo -> tokens. The caller is responsible for keeping
// any class token out of the TokenSet (it bypasses the modulation).
TokenSet moto_block_insert(const TokenSet& ts, const MotoParams& p);

// Per-pixel palette color of the argmax entity, as a [3,H,W] image of the
// given batch sample.
using Palette = std::vector<std::array<real, 3>>;
Palette default_palette(int n);
Tensor layout_colorize(const SemanticLayout& layout, const Palette& palette,
                       int64_t sample = 0);

}  // namespace tlab
