#include "tlab/vit.hpp"

#include <algorithm>

namespace tlab {

void VitConfig::validate() const {
  check(depth >= 0, "vit: depth must be >= 0, got {}", depth);
  check(heads >= 1 && embed_dim % heads == 0,
        "vit: embed_dim {} must be divisible by heads {}", embed_dim, heads);
  check(mlp_ratio >= 1 && num_classes >= 2, "vit: bad mlp_ratio/num_classes");
  check(drop_path_rate >= 0 && drop_path_rate < 1, "vit: bad drop_path_rate");
  for (int pl : moto_placements)
    check(pl >= 1 && pl <= depth,
          "vit: moto placement {} outside blocks 1..{}", pl, depth);
}

VitBody::VitBody(const VitConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  int D = cfg_.embed_dim;
  class_token_ = Tensor::randn({1, 1, D}, rng, 0.02, true);
  for (int i = 0; i < cfg_.depth; ++i) {
    Block b;
    b.ln1_g = Tensor::ones({D}, true);
    b.ln1_b = Tensor::zeros({D}, true);
    b.attn = MultiHeadAttention::init(D, cfg_.heads, rng);
    b.ln2_g = Tensor::ones({D}, true);
    b.ln2_b = Tensor::zeros({D}, true);
    int hidden = D * cfg_.mlp_ratio;
    b.mlp_w1 = Tensor::randn({D, hidden}, rng, 0.02, true);
    b.mlp_b1 = Tensor::zeros({hidden}, true);
    b.mlp_w2 = Tensor::randn({hidden, D}, rng, 0.02, true);
    b.mlp_b2 = Tensor::zeros({D}, true);
    if (std::find(cfg_.moto_placements.begin(), cfg_.moto_placements.end(),
                  i + 1) != cfg_.moto_placements.end()) {
      MotoConfig mc;
      mc.entities = cfg_.moto_entities;
      mc.tau = cfg_.moto_tau;
      mc.d_kq = cfg_.moto_d_kq;
      mc.in_channels = D;
      b.moto_after = MotoParams::init(mc, rng);
    }
    blocks_.push_back(std::move(b));
  }
  final_ln_g_ = Tensor::ones({D}, true);
  final_ln_b_ = Tensor::zeros({D}, true);
  head_w_ = Tensor::randn({D, cfg_.num_classes}, rng, 0.02, true);
  head_b_ = Tensor::zeros({cfg_.num_classes}, true);
}

Tensor VitBody::forward(const TokenSet& tokens, bool training, Rng* rng) const {
  check(tokens.token_dim() == cfg_.embed_dim,
        "vit: token dim {} does not match embed_dim {}", tokens.token_dim(),
        cfg_.embed_dim);
  int64_t N = tokens.tokens.shape()[0];
  int64_t T = tokens.n_token();
  int64_t D = cfg_.embed_dim;

  Tensor cls = add(Tensor::zeros({N, 1, D}), class_token_);
  Tensor x = concat({cls, tokens.tokens}, 1);

  bool drop = training && cfg_.drop_path_rate > 0;
  check(!drop || rng != nullptr, "vit: stochastic depth needs an rng");
  auto residual = [&](const Tensor& base, const Tensor& branch) {
    if (!drop) return add(base, branch);
    // per-sample stochastic depth, scaled to keep the expectation
    std::vector<real> mask(static_cast<size_t>(N));
    real keep = 1 - cfg_.drop_path_rate;
    for (auto& m : mask) m = rng->uniform01() < keep ? real(1) / keep : real(0);
    Tensor m({N, 1, 1}, std::move(mask));
    return add(base, mul(branch, m));
  };

  for (const auto& b : blocks_) {
    x = residual(x, b.attn.forward(layer_norm(x, b.ln1_g, b.ln1_b)));
    Tensor h = linear(layer_norm(x, b.ln2_g, b.ln2_b), b.mlp_w1, b.mlp_b1);
    x = residual(x, linear(gelu(h), b.mlp_w2, b.mlp_b2));
    if (b.moto_after) {
      Tensor cls_tok = slice(x, 1, 0, 1);
      TokenSet grid{slice(x, 1, 1, T), tokens.rows, tokens.cols};
      TokenSet modded = moto_block_insert(grid, *b.moto_after);
      x = concat({cls_tok, modded.tokens}, 1);
    }
  }
  Tensor cls_out = slice(layer_norm(x, final_ln_g_, final_ln_b_), 1, 0, 1);
  return linear(reshape(cls_out, {N, D}), head_w_, head_b_);
}

std::vector<NamedParam> VitBody::named_params() {
  std::vector<NamedParam> out;
  out.push_back({"vit.cls", class_token_});
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    std::string p = fmt::format("vit.block{}", i);
    out.push_back({p + ".ln1_g", b.ln1_g});
    out.push_back({p + ".ln1_b", b.ln1_b});
    b.attn.collect_params(p + ".attn", out);
    out.push_back({p + ".ln2_g", b.ln2_g});
    out.push_back({p + ".ln2_b", b.ln2_b});
    out.push_back({p + ".mlp_w1", b.mlp_w1});
    out.push_back({p + ".mlp_b1", b.mlp_b1});
    out.push_back({p + ".mlp_w2", b.mlp_w2});
    out.push_back({p + ".mlp_b2", b.mlp_b2});
    if (b.moto_after) b.moto_after->collect_params(p + ".moto", out);
  }
  out.push_back({"vit.ln_g", final_ln_g_});
  out.push_back({"vit.ln_b", final_ln_b_});
  out.push_back({"vit.head_w", head_w_});
  out.push_back({"vit.head_b", head_b_});
  return out;
}

}  // namespace tlab
