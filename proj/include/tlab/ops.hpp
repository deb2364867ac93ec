#pragma once

#include <vector>

#include "tlab/tensor.hpp"

namespace tlab {

// All ops are pure: inputs are never mutated, results are fresh tensors.
// Binary elementwise ops broadcast by trailing-axis alignment where only
// size-1 extents stretch; a shape mismatch raises an error naming both
// shapes.

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, real s);
Tensor mul_scalar(const Tensor& a, real s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, real s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, real s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, real s) { return mul_scalar(a, s); }
inline Tensor operator*(real s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp_min(const Tensor& a, real lo);

// Reductions. Empty `axes` reduces over everything to a rank-0 scalar.
Tensor sum(const Tensor& a, std::vector<int> axes = {}, bool keepdim = false);
Tensor mean(const Tensor& a, std::vector<int> axes = {}, bool keepdim = false);
// Population variance by default (unbiased selects the n-1 denominator).
Tensor variance(const Tensor& a, std::vector<int> axes = {},
                bool keepdim = false, bool unbiased = false);

// Shape manipulation. reshape accepts a single -1 extent to be inferred.
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor transpose(const Tensor& a, std::vector<int> perm);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor gather(const Tensor& a, int axis, const std::vector<int64_t>& indices);

// Stops gradient flow: value copy with no recorded parents.
Tensor detach(const Tensor& a);

// Matrix product on the trailing two axes; leading (batch) axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..., in] * w[in, out] + b[out]. Pass an undefined bias to skip it.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation (no kernel flip) with zero padding:
// input [N,C,H,W], weight [F,C,KH,KW], optional bias [F].
// Output spatial size is floor((H + 2*pad - K)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);

enum class PadMode { Zero, Replicate };
Tensor pad2d(const Tensor& input, int top, int bottom, int left, int right,
             PadMode mode);

// align_corners=false convention: src = (dst + 0.5) * in/out - 0.5, clamped.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

// [N, C*r^2, H, W] -> [N, C, H*r, W*r];
// out[n, c, h*r+dy, w*r+dx] = in[n, c*r^2 + dy*r + dx, h, w].
Tensor pixel_shuffle(const Tensor& input, int upscale);

// Normalizes over the last axis; gamma/beta broadcast over leading axes.
// eps is added to the variance inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  real eps = 1e-5);

// y_k = exp(scale*x_k) / sum_i exp(scale*x_i) along `axis`, max-stabilized.
// Errors on non-finite input.
Tensor softmax_over_channel(const Tensor& x, int axis, real scale);

// Mean negative log-likelihood of integer labels under logits [N, K].
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

// Non-differentiable helpers.
std::vector<int64_t> argmax(const Tensor& x, int axis);
double accuracy(const Tensor& logits, const std::vector<int64_t>& labels);

}  // namespace tlab
