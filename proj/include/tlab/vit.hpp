#pragma once

#include <optional>
#include <vector>

#include "tlab/attention.hpp"
#include "tlab/moto.hpp"
#include "tlab/tokenizer.hpp"

namespace tlab {

struct VitConfig {
  int depth = 4;
  int heads = 4;
  int embed_dim = 64;
  int mlp_ratio = 4;
  int num_classes = 10;
  real drop_path_rate = 0.0;
  // 1-based indices of blocks followed by an inserted MoTo stage over the
  // patch-token grid (the class token bypasses it).
  std::vector<int> moto_placements;
  int moto_entities = 8;
  real moto_tau = 0.1;
  int moto_d_kq = 64;

  void validate() const;
};

// Minimal DeiT-style pre-norm transformer: class token, depth blocks of
// (LN -> MHSA -> residual, LN -> MLP -> residual), final LN, linear head on
// the class token. A zero-depth body classifies the class token straight
// through the final norm and head.
class VitBody {
 public:
  VitBody(const VitConfig& cfg, Rng& rng);

  // training=true enables stochastic depth when drop_path_rate > 0 (rng is
  // then required).
  Tensor forward(const TokenSet& tokens, bool training = false,
                 Rng* rng = nullptr) const;

  std::vector<NamedParam> named_params();
  const VitConfig& config() const { return cfg_; }

 private:
  struct Block {
    Tensor ln1_g, ln1_b;
    MultiHeadAttention attn;
    Tensor ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    std::optional<MotoParams> moto_after;
  };

  VitConfig cfg_;
  Tensor class_token_;  // [1, 1, D]
  std::vector<Block> blocks_;
  Tensor final_ln_g_, final_ln_b_;
  Tensor head_w_, head_b_;
};

}  // namespace tlab
