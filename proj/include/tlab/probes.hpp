#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tlab/tokenizer.hpp"
#include "tlab/tokenprop.hpp"

namespace tlab {

struct ProbeReport {
  std::string tokenizer_id;
  double recon_error = 0;       // mean held-out L2
  double token_similarity = 0;  // mean pairwise cosine
  int epochs_trained = 0;
  uint64_t seed = 0;

  std::string csv_row() const;
  static std::string csv_header();
};

// Mean cosine similarity over all unordered token pairs of each sample,
// averaged over the batch. Zero-norm tokens contribute cosine 0. Needs at
// least two tokens; any class token must already be excluded.
double token_similarity(const TokenSet& tokens);

// Whether a sample index lands in the fixed 10% held-out split (stable hash
// of the index, independent of seeds).
bool is_held_out(int64_t sample_index);

struct AccessibilityResult {
  double held_out_l2 = 0;
  std::vector<double> train_curve;  // per-epoch mean train L2
};

// Reconstruction-error estimate of the information left accessible in the
// tokens: trains a fresh decoder on the frozen tokenizer's outputs with L2
// loss (Adam, lr 1e-3, betas 0.5/0.999) and reports mean L2 on the held-out
// split. The tokenizer runs without grad recording and is never mutated.
// `images` are the already-normalized inputs [N,3,H,W]; targets are the same
// images resized to the decoder output scale.
AccessibilityResult estimate_accessibility(
    const std::function<TokenSet(const Tensor&)>& tokenizer,
    const Tensor& images, const DecoderConfig& decoder_cfg, int epochs,
    int batch_size, uint64_t seed);

}  // namespace tlab
