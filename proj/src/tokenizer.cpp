#include "tlab/tokenizer.hpp"

namespace tlab {

Tensor tokens_to_grid(const TokenSet& ts) {
  check(ts.rows > 0 && ts.cols > 0 && ts.rows * ts.cols == ts.n_token(),
        "tokens_to_grid: grid {}x{} does not cover {} tokens", ts.rows,
        ts.cols, ts.n_token());
  int64_t N = ts.tokens.shape()[0], D = ts.token_dim();
  return transpose(reshape(ts.tokens, {N, ts.rows, ts.cols, D}), {0, 3, 1, 2});
}

TokenSet grid_to_tokens(const Tensor& fm) {
  check(fm.rank() == 4, "grid_to_tokens: expected [N,D,rows,cols], got {}",
        shape_str(fm.shape()));
  int64_t N = fm.shape()[0], D = fm.shape()[1], r = fm.shape()[2],
          c = fm.shape()[3];
  TokenSet ts;
  ts.tokens = reshape(transpose(fm, {0, 2, 3, 1}), {N, r * c, D});
  ts.rows = r;
  ts.cols = c;
  return ts;
}

TokenizerVariant parse_tokenizer_variant(const std::string& name) {
  if (name == "patchify") return TokenizerVariant::Patchify;
  if (name == "intra") return TokenizerVariant::Intra;
  if (name == "intra+local") return TokenizerVariant::IntraLocal;
  if (name == "intra+local+inter") return TokenizerVariant::IntraLocalInter;
  if (name == "frozen") return TokenizerVariant::Frozen;
  fail("unknown tokenizer variant '{}'", name);
}

std::string tokenizer_variant_name(TokenizerVariant v) {
  switch (v) {
    case TokenizerVariant::Patchify: return "patchify";
    case TokenizerVariant::Intra: return "intra";
    case TokenizerVariant::IntraLocal: return "intra+local";
    case TokenizerVariant::IntraLocalInter: return "intra+local+inter";
    case TokenizerVariant::Frozen: return "frozen";
  }
  fail("bad tokenizer variant");
}

void TokenizerConfig::validate() const {
  check(patch_size > 0 && embed_dim > 0 && image_size > 0 && in_channels > 0,
        "tokenizer config: sizes must be positive");
  check(image_size % patch_size == 0,
        "tokenizer config: image size {} not divisible by patch size {}",
        image_size, patch_size);
  check(stem_heads >= 1 && embed_dim % stem_heads == 0,
        "tokenizer config: embed_dim {} not divisible by stem_heads {}",
        embed_dim, stem_heads);
}

int64_t Tokenizer::trainable_param_count() {
  int64_t n = 0;
  for (const auto& p : named_params())
    if (p.tensor.requires_grad()) n += p.tensor.numel();
  return n;
}

namespace {

void check_image(const TokenizerConfig& cfg, const Tensor& image) {
  check(image.rank() == 4, "tokenizer: image must be [N,C,H,W], got {}",
        shape_str(image.shape()));
  check(image.shape()[1] == cfg.in_channels &&
            image.shape()[2] == cfg.image_size &&
            image.shape()[3] == cfg.image_size,
        "tokenizer: image {} does not match configured {}x{}x{}",
        shape_str(image.shape()), cfg.in_channels, cfg.image_size,
        cfg.image_size);
}

Tensor make_pos_embed(const TokenizerConfig& cfg, Rng& rng) {
  int64_t side = cfg.image_size / cfg.patch_size;
  return Tensor::randn({1, side * side, cfg.embed_dim}, rng, 0.02, true);
}

TokenSet add_pos(const TokenizerConfig& cfg, TokenSet ts, const Tensor& pos) {
  if (cfg.use_pos_embed) ts.tokens = add(ts.tokens, pos);
  return ts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Patchify (also the frozen variant)

PatchifyTokenizer::PatchifyTokenizer(TokenizerConfig cfg, Rng& rng,
                                     bool frozen_projection)
    : Tokenizer(std::move(cfg)), frozen_(frozen_projection) {
  cfg_.validate();
  int p = cfg_.patch_size;
  w_ = Tensor::randn({cfg_.embed_dim, cfg_.in_channels, p, p}, rng, 0.02,
                     !frozen_);
  b_ = Tensor::zeros({cfg_.embed_dim}, !frozen_);
  pos_ = make_pos_embed(cfg_, rng);
}

TokenSet PatchifyTokenizer::forward(const Tensor& image) const {
  check_image(cfg_, image);
  Tensor fm = conv2d(image, w_, b_, cfg_.patch_size, 0);
  return add_pos(cfg_, grid_to_tokens(fm), pos_);
}

std::vector<NamedParam> PatchifyTokenizer::named_params() {
  return {{"tok.proj.w", w_}, {"tok.proj.b", b_}, {"tok.pos", pos_}};
}

std::string PatchifyTokenizer::id() const {
  return frozen_ ? "frozen" : "patchify";
}

// ---------------------------------------------------------------------------
// Multi-scale / locality / inter-token refinements

RefinedTokenizer::RefinedTokenizer(TokenizerConfig cfg, Rng& rng, bool locality,
                                   bool inter_token)
    : Tokenizer(std::move(cfg)), locality_(locality), inter_token_(inter_token) {
  cfg_.validate();
  int p = cfg_.patch_size;
  std::vector<int> kernels = {std::max(p / 4, 1), std::max(p / 2, 1), p};
  for (int k : kernels) {
    Branch br;
    br.kernel = k;
    br.offset = (p - k) / 2;
    br.overlap = false;
    br.w = Tensor::randn({cfg_.embed_dim, cfg_.in_channels, k, k}, rng, 0.02,
                         true);
    br.b = Tensor::zeros({cfg_.embed_dim}, true);
    branches_.push_back(br);
  }
  if (locality_) {
    check(p % 2 == 0, "locality branch needs an even patch size, got {}", p);
    Branch br;
    br.kernel = 2 * p;
    br.offset = 0;
    br.overlap = true;
    br.w = Tensor::randn({cfg_.embed_dim, cfg_.in_channels, 2 * p, 2 * p}, rng,
                         0.02, true);
    br.b = Tensor::zeros({cfg_.embed_dim}, true);
    branches_.push_back(br);
  }
  int64_t cat_ch = static_cast<int64_t>(branches_.size()) * cfg_.embed_dim;
  proj_w_ = Tensor::randn({cfg_.embed_dim, cat_ch, 1, 1}, rng, 0.02, true);
  proj_b_ = Tensor::zeros({cfg_.embed_dim}, true);
  if (inter_token_)
    refine_ = MultiHeadAttention::init(cfg_.embed_dim, cfg_.stem_heads, rng);
  pos_ = make_pos_embed(cfg_, rng);
}

TokenSet RefinedTokenizer::forward(const Tensor& image) const {
  check_image(cfg_, image);
  int p = cfg_.patch_size;
  int64_t H = cfg_.image_size;
  std::vector<Tensor> maps;
  for (const auto& br : branches_) {
    Tensor x = image;
    if (br.overlap) {
      // 2p window centered on each patch: replicate pad by p/2, stride p
      x = pad2d(x, p / 2, p / 2, p / 2, p / 2, PadMode::Replicate);
      maps.push_back(conv2d(x, br.w, br.b, p, 0));
    } else {
      if (br.offset > 0) {
        x = slice(x, 2, br.offset, H - br.offset);
        x = slice(x, 3, br.offset, H - br.offset);
      }
      maps.push_back(conv2d(x, br.w, br.b, p, 0));
    }
  }
  Tensor cat = concat(maps, 1);
  Tensor fm = conv2d(cat, proj_w_, proj_b_, 1, 0);
  TokenSet ts = grid_to_tokens(fm);
  if (inter_token_) {
    Tensor refined = add(ts.tokens, refine_.forward(ts.tokens));
    ts.tokens = refined;
  }
  return add_pos(cfg_, ts, pos_);
}

std::vector<NamedParam> RefinedTokenizer::named_params() {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < branches_.size(); ++i) {
    out.push_back({fmt::format("tok.branch{}.w", i), branches_[i].w});
    out.push_back({fmt::format("tok.branch{}.b", i), branches_[i].b});
  }
  out.push_back({"tok.proj.w", proj_w_});
  out.push_back({"tok.proj.b", proj_b_});
  if (inter_token_) refine_.collect_params("tok.refine", out);
  out.push_back({"tok.pos", pos_});
  return out;
}

std::string RefinedTokenizer::id() const {
  if (inter_token_) return "intra+local+inter";
  return locality_ ? "intra+local" : "intra";
}

// ---------------------------------------------------------------------------
// Standalone locality embedding

LocalityTokenizer::LocalityTokenizer(TokenizerConfig cfg, Rng& rng)
    : Tokenizer(std::move(cfg)) {
  cfg_.validate();
  int p = cfg_.patch_size;
  check(p % 2 == 0, "locality tokenizer needs an even patch size, got {}", p);
  w_ = Tensor::randn({cfg_.embed_dim, cfg_.in_channels, 2 * p, 2 * p}, rng,
                     0.02, true);
  b_ = Tensor::zeros({cfg_.embed_dim}, true);
  pos_ = make_pos_embed(cfg_, rng);
}

TokenSet LocalityTokenizer::forward(const Tensor& image) const {
  check_image(cfg_, image);
  int p = cfg_.patch_size;
  Tensor x = pad2d(image, p / 2, p / 2, p / 2, p / 2, PadMode::Replicate);
  Tensor fm = conv2d(x, w_, b_, p, 0);
  return add_pos(cfg_, grid_to_tokens(fm), pos_);
}

std::vector<NamedParam> LocalityTokenizer::named_params() {
  return {{"tok.local.w", w_}, {"tok.local.b", b_}, {"tok.pos", pos_}};
}

std::string LocalityTokenizer::id() const { return "locality"; }

// ---------------------------------------------------------------------------

InterTokenRefine InterTokenRefine::init(int dim, int heads, Rng& rng) {
  InterTokenRefine r;
  r.attn = MultiHeadAttention::init(dim, heads, rng);
  return r;
}

TokenSet InterTokenRefine::forward(const TokenSet& ts) const {
  if (!ts.tokens.all_finite())
    fail_numeric("inter_token_refine: non-finite tokens");
  TokenSet out = ts;
  out.tokens = add(ts.tokens, attn.forward(ts.tokens));
  return out;
}

// ---------------------------------------------------------------------------

IdentityTokenizer::IdentityTokenizer(TokenizerConfig cfg)
    : Tokenizer(std::move(cfg)) {
  cfg_.validate();
}

TokenSet IdentityTokenizer::forward(const Tensor& image) const {
  check_image(cfg_, image);
  int64_t p = cfg_.patch_size;
  int64_t N = image.shape()[0], C = image.shape()[1];
  int64_t side = cfg_.image_size / p;
  // [N,C,r,p,c,p] -> [N,r,c,C,p,p] -> [N, r*c, C*p*p]
  Tensor x = reshape(image, {N, C, side, p, side, p});
  x = transpose(x, {0, 2, 4, 1, 3, 5});
  TokenSet ts;
  ts.tokens = reshape(x, {N, side * side, C * p * p});
  ts.rows = side;
  ts.cols = side;
  return ts;
}

std::vector<NamedParam> IdentityTokenizer::named_params() { return {}; }

std::string IdentityTokenizer::id() const { return "identity"; }

// ---------------------------------------------------------------------------

std::unique_ptr<Tokenizer> make_tokenizer(const TokenizerConfig& cfg, Rng& rng) {
  switch (cfg.variant) {
    case TokenizerVariant::Patchify:
      return std::make_unique<PatchifyTokenizer>(cfg, rng, false);
    case TokenizerVariant::Frozen:
      return std::make_unique<PatchifyTokenizer>(cfg, rng, true);
    case TokenizerVariant::Intra:
      return std::make_unique<RefinedTokenizer>(cfg, rng, false, false);
    case TokenizerVariant::IntraLocal:
      return std::make_unique<RefinedTokenizer>(cfg, rng, true, false);
    case TokenizerVariant::IntraLocalInter:
      return std::make_unique<RefinedTokenizer>(cfg, rng, true, true);
  }
  fail("bad tokenizer variant");
}

}  // namespace tlab
