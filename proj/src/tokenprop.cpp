#include "tlab/tokenprop.hpp"

#include <cmath>

namespace tlab {

RecLossKind parse_rec_loss(const std::string& name) {
  if (name == "l1" || name == "L1") return RecLossKind::L1;
  if (name == "l2" || name == "L2") return RecLossKind::L2;
  fail("unknown reconstruction loss '{}'", name);
}

std::string rec_loss_name(RecLossKind k) {
  return k == RecLossKind::L1 ? "l1" : "l2";
}

void DecoderConfig::validate() const {
  check(channel_multiplier >= 1, "decoder: channel multiplier must be >= 1");
  check(base_channels >= 16 && base_channels % 16 == 0,
        "decoder: base channels {} must be a positive multiple of 16",
        base_channels);
  check(token_dim >= 1, "decoder: bad token dim");
  int s = output_scale;
  check(s >= 64, "decoder: output scale {} below 64", s);
  while (s > 64) {
    check(s % 2 == 0, "decoder: output scale {} is not 64*2^k", output_scale);
    s /= 2;
  }
  check(s == 64, "decoder: output scale {} is not 64*2^k", output_scale);
}

namespace {
Tensor he_conv(int out_c, int in_c, int k, Rng& rng) {
  real stddev = std::sqrt(real(2) / static_cast<real>(in_c * k * k));
  return Tensor::randn({out_c, in_c, k, k}, rng, stddev, true);
}
}  // namespace

Decoder::Decoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  int c0 = cfg_.stem_channels();
  proj_w_ = he_conv(c0, cfg_.token_dim, 1, rng);
  proj_b_ = Tensor::zeros({c0}, true);

  auto push_res = [&](int ch, int shuffle) {
    stages_.push_back({he_conv(ch, ch, 3, rng), Tensor::zeros({ch}, true),
                       true, shuffle});
  };
  push_res(c0, 1);        // 256m @ 16
  push_res(c0, 2);        // -> 64m @ 32
  push_res(c0 / 4, 2);    // -> 16m @ 64
  int ch = c0 / 16;
  for (int s = 64; s < cfg_.output_scale; s *= 2) {
    // channel-preserving upsample: conv c -> 4c, pixel shuffle 2
    stages_.push_back({he_conv(4 * ch, ch, 3, rng),
                       Tensor::zeros({4 * ch}, true), false, 2});
  }
  out_w_ = he_conv(3, ch, 3, rng);
  out_b_ = Tensor::zeros({3}, true);
}

Tensor Decoder::forward(const TokenSet& tokens) const {
  check(tokens.rows > 0 && tokens.cols > 0, "decoder: token grid unknown");
  check(tokens.token_dim() == cfg_.token_dim,
        "decoder: token dim {} does not match configured {}",
        tokens.token_dim(), cfg_.token_dim);
  Tensor x = tokens_to_grid(tokens);            // [N, D, r, c]
  x = conv2d(x, proj_w_, proj_b_, 1, 0);        // [N, c0, r, c]
  if (tokens.rows != 16 || tokens.cols != 16) x = bilinear_resize(x, 16, 16);
  for (const auto& st : stages_) {
    if (st.residual)
      x = add(x, conv2d(relu(x), st.w, st.b, 1, 1));
    else
      x = conv2d(relu(x), st.w, st.b, 1, 1);
    if (st.shuffle > 1) x = pixel_shuffle(x, st.shuffle);
  }
  return conv2d(relu(x), out_w_, out_b_, 1, 1);
}

std::vector<NamedParam> Decoder::named_params(const std::string& prefix) {
  std::vector<NamedParam> out;
  out.push_back({prefix + ".proj_w", proj_w_});
  out.push_back({prefix + ".proj_b", proj_b_});
  for (size_t i = 0; i < stages_.size(); ++i) {
    out.push_back({fmt::format("{}.stage{}_w", prefix, i), stages_[i].w});
    out.push_back({fmt::format("{}.stage{}_b", prefix, i), stages_[i].b});
  }
  out.push_back({prefix + ".out_w", out_w_});
  out.push_back({prefix + ".out_b", out_b_});
  return out;
}

int64_t Decoder::resblock_weight_count() const {
  int64_t n = 0;
  for (const auto& st : stages_)
    if (st.residual) n += st.w.numel();
  return n;
}

Tensor rec_loss(const Tensor& pred, const Tensor& target, RecLossKind kind) {
  check(pred.shape() == target.shape(),
        "rec_loss: prediction {} and target {} differ",
        shape_str(pred.shape()), shape_str(target.shape()));
  Tensor d = sub(pred, target);
  return kind == RecLossKind::L1 ? mean(abs(d)) : mean(square(d));
}

TokenPropLoss tokenprop_loss(const Tensor& logits,
                             const std::vector<int64_t>& labels,
                             const Tensor& recon, const Tensor& target,
                             const LossWeights& weights) {
  weights.validate();
  TokenPropLoss out;
  out.task = cross_entropy(logits, labels);
  out.rec = rec_loss(recon, target, weights.rec_loss_kind);
  out.total = add(out.task, mul_scalar(out.rec, weights.lambda));
  return out;
}

}  // namespace tlab
