#include "tlab/attention.hpp"

#include <cmath>

namespace tlab {

MultiHeadAttention MultiHeadAttention::init(int dim, int heads, Rng& rng) {
  check(heads >= 1 && dim % heads == 0,
        "attention: dim {} must be divisible by heads {}", dim, heads);
  MultiHeadAttention a;
  a.heads = heads;
  Shape w{dim, dim};
  a.wq = Tensor::randn(w, rng, 0.02, true);
  a.bq = Tensor::zeros({dim}, true);
  a.wk = Tensor::randn(w, rng, 0.02, true);
  a.bk = Tensor::zeros({dim}, true);
  a.wv = Tensor::randn(w, rng, 0.02, true);
  a.bv = Tensor::zeros({dim}, true);
  a.wo = Tensor::randn(w, rng, 0.02, true);
  a.bo = Tensor::zeros({dim}, true);
  return a;
}

Tensor MultiHeadAttention::forward(const Tensor& x, Tensor* attn_weights) const {
  check(x.rank() == 3, "attention: input must be [N,T,D], got {}",
        shape_str(x.shape()));
  int64_t N = x.shape()[0], T = x.shape()[1], D = x.shape()[2];
  int64_t hd = D / heads;

  auto split = [&](const Tensor& t) {
    return transpose(reshape(t, {N, T, heads, hd}), {0, 2, 1, 3});
  };
  Tensor q = split(linear(x, wq, bq));
  Tensor k = split(linear(x, wk, bk));
  Tensor v = split(linear(x, wv, bv));

  Tensor scores = mul_scalar(matmul(q, transpose(k, {0, 1, 3, 2})),
                             real(1) / std::sqrt(static_cast<real>(hd)));
  Tensor attn = softmax_over_channel(scores, 3, 1.0);
  if (attn_weights) *attn_weights = attn;
  Tensor ctx = transpose(matmul(attn, v), {0, 2, 1, 3});
  return linear(reshape(ctx, {N, T, D}), wo, bo);
}

void MultiHeadAttention::collect_params(const std::string& prefix,
                                        std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".bq", bq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".bk", bk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".bv", bv});
  out.push_back({prefix + ".wo", wo});
  out.push_back({prefix + ".bo", bo});
}

}  // namespace tlab
