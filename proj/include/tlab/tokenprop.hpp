#pragma once

#include <string>
#include <vector>

#include "tlab/ops.hpp"
#include "tlab/tokenizer.hpp"

namespace tlab {

enum class RecLossKind { L1, L2 };
RecLossKind parse_rec_loss(const std::string& name);
std::string rec_loss_name(RecLossKind k);

struct LossWeights {
  real lambda = 0.001;
  RecLossKind rec_loss_kind = RecLossKind::L2;

  void validate() const { check(lambda >= 0, "loss: lambda must be >= 0"); }
};

struct DecoderConfig {
  int channel_multiplier = 1;  // x1 / x2 / x4
  int output_scale = 64;       // 64 * 2^k
  int base_channels = 256;     // conv width at multiplier x1
  int token_dim = 64;

  void validate() const;
  int stem_channels() const { return base_channels * channel_multiplier; }
};

// Lightweight reconstruction decoder: tokens are reshaped to their grid,
// projected 1x1 to the stem width, resized to 16x16, then run through
// residual conv blocks with pixel-shuffle upsampling out to output_scale:
//   res(c0)@16 -> res(c0)+PS2 -> c0/4@32 -> res(c0/4)+PS2 -> c0/16@64
// Scales above 64 append channel-preserving upsample stages
// (conv c->4c + PS2), and a final 3x3 conv maps to 3 channels.
class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, Rng& rng);

  Tensor forward(const TokenSet& tokens) const;  // [N, 3, S, S]
  std::vector<NamedParam> named_params(const std::string& prefix = "dec");
  const DecoderConfig& config() const { return cfg_; }

  // total elements of the square residual-stage conv weights; grows
  // quadratically in the channel multiplier
  int64_t resblock_weight_count() const;

 private:
  struct Stage {
    Tensor w, b;
    bool residual;
    int shuffle;  // pixel-shuffle factor after the conv (1 = none)
  };
  DecoderConfig cfg_;
  Tensor proj_w_, proj_b_;
  std::vector<Stage> stages_;
  Tensor out_w_, out_b_;
};

// Mean absolute or mean squared error over all elements; shapes must match.
Tensor rec_loss(const Tensor& pred, const Tensor& target, RecLossKind kind);

struct TokenPropLoss {
  Tensor total;
  Tensor task;
  Tensor rec;
};

// total = cross_entropy(logits, labels) + lambda * rec_loss(recon, target).
// recon must be decoded from the tokenizer output, so the reconstruction
// term reaches tokenizer and decoder parameters but not the transformer
// body.
TokenPropLoss tokenprop_loss(const Tensor& logits,
                             const std::vector<int64_t>& labels,
                             const Tensor& recon, const Tensor& target,
                             const LossWeights& weights);

}  // namespace tlab
