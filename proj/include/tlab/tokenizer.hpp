#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tlab/attention.hpp"
#include "tlab/ops.hpp"

namespace tlab {

// A batch of patch tokens plus the spatial grid they came from. The class
// token, when a model uses one, lives in the transformer body, not here.
struct TokenSet {
  Tensor tokens;  // [N, n_token, l_token]
  int64_t rows = 0;
  int64_t cols = 0;

  int64_t n_token() const { return tokens.shape()[1]; }
  int64_t token_dim() const { return tokens.shape()[2]; }
};

// [N, T, D] <-> [N, D, rows, cols]; both directions preserve values exactly.
Tensor tokens_to_grid(const TokenSet& ts);
TokenSet grid_to_tokens(const Tensor& feature_map);

enum class TokenizerVariant {
  Patchify,
  Intra,
  IntraLocal,
  IntraLocalInter,
  Frozen,
};

TokenizerVariant parse_tokenizer_variant(const std::string& name);
std::string tokenizer_variant_name(TokenizerVariant v);

struct TokenizerConfig {
  TokenizerVariant variant = TokenizerVariant::Patchify;
  int patch_size = 8;
  int embed_dim = 64;   // l_token
  int image_size = 32;
  int in_channels = 3;
  int stem_heads = 4;   // heads of the inter-token refinement layer
  bool use_pos_embed = true;
  bool moto_enabled = false;  // informational; the harness wires MoTo in front

  void validate() const;
};

// Common stem interface: image [N,C,H,W] in, TokenSet out. All variants emit
// identical token shapes for a shared config, so they are interchangeable in
// front of the transformer body.
class Tokenizer {
 public:
  explicit Tokenizer(TokenizerConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Tokenizer() = default;

  virtual TokenSet forward(const Tensor& image) const = 0;
  virtual std::vector<NamedParam> named_params() = 0;
  virtual std::string id() const = 0;

  const TokenizerConfig& config() const { return cfg_; }
  int64_t grid_side() const { return cfg_.image_size / cfg_.patch_size; }
  int64_t trainable_param_count();

 protected:
  TokenizerConfig cfg_;
};

std::unique_ptr<Tokenizer> make_tokenizer(const TokenizerConfig& cfg, Rng& rng);

// Naive patchify: stride-p pxp convolution plus a learned position embedding.
class PatchifyTokenizer : public Tokenizer {
 public:
  PatchifyTokenizer(TokenizerConfig cfg, Rng& rng, bool frozen_projection);
  TokenSet forward(const Tensor& image) const override;
  std::vector<NamedParam> named_params() override;
  std::string id() const override;

  const Tensor& projection_weight() const { return w_; }

 private:
  bool frozen_;
  Tensor w_, b_;  // [D, C, p, p], [D]
  Tensor pos_;    // [1, T, D]
};

// Multi-scale stem: parallel convolutions with kernels p/4, p/2 and p (all
// stride p, center-aligned), concatenated and projected back to embed_dim.
// With locality enabled a fourth branch sees 2p-wide overlapping windows
// (stride p, replicate padding p/2), and with inter-token refinement a
// residual self-attention layer runs over the tokens before the position
// embedding is added.
class RefinedTokenizer : public Tokenizer {
 public:
  RefinedTokenizer(TokenizerConfig cfg, Rng& rng, bool locality,
                   bool inter_token);
  TokenSet forward(const Tensor& image) const override;
  std::vector<NamedParam> named_params() override;
  std::string id() const override;

 private:
  struct Branch {
    int kernel;
    int offset;   // top-left crop for center alignment (non-overlapping)
    bool overlap; // replicate-padded 2p window branch
    Tensor w, b;
  };
  bool locality_, inter_token_;
  std::vector<Branch> branches_;
  Tensor proj_w_, proj_b_;  // 1x1 conv over concatenated branch channels
  MultiHeadAttention refine_;
  Tensor pos_;
};

// Standalone overlapping-window embedding: one conv with window 2p, stride p
// and replicate padding p/2, so the token grid matches patchify while every
// token sees its patch enlarged by half a patch on each side (window =
// 2 * step). Requires an even patch size.
class LocalityTokenizer : public Tokenizer {
 public:
  LocalityTokenizer(TokenizerConfig cfg, Rng& rng);
  TokenSet forward(const Tensor& image) const override;
  std::vector<NamedParam> named_params() override;
  std::string id() const override;

 private:
  Tensor w_, b_;
  Tensor pos_;
};

// Residual single-layer self-attention over a token sequence; shape
// preserving, no position embedding of its own.
struct InterTokenRefine {
  MultiHeadAttention attn;

  static InterTokenRefine init(int dim, int heads, Rng& rng);
  TokenSet forward(const TokenSet& ts) const;
};

// Lossless pixel regrouping used by the probes as the identity reference:
// tokens are the raw p*p*C patch pixels, no learned parameters.
class IdentityTokenizer : public Tokenizer {
 public:
  explicit IdentityTokenizer(TokenizerConfig cfg);
  TokenSet forward(const Tensor& image) const override;
  std::vector<NamedParam> named_params() override;
  std::string id() const override;
};

}  // namespace tlab
