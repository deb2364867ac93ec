#pragma once

#include <string>
#include <vector>

#include "tlab/ops.hpp"

namespace tlab {

// Standard multi-head self-attention over a [N, T, D] sequence.
// Scores are scaled by 1/sqrt(head_dim) before the row softmax.
struct MultiHeadAttention {
  int heads = 1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static MultiHeadAttention init(int dim, int heads, Rng& rng);

  // attn_weights, when non-null, receives the [N, heads, T, T] row-softmax.
  Tensor forward(const Tensor& x, Tensor* attn_weights = nullptr) const;

  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) const;
};

}  // namespace tlab
