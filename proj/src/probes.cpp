#include "tlab/probes.hpp"

#include <cmath>

#include "tlab/optim.hpp"

namespace tlab {

std::string ProbeReport::csv_header() {
  return "tokenizer_id,recon_error,token_similarity,epochs,seed";
}

std::string ProbeReport::csv_row() const {
  return fmt::format("{},{:.17g},{:.17g},{},{}", tokenizer_id, recon_error,
                     token_similarity, epochs_trained, seed);
}

double token_similarity(const TokenSet& ts) {
  int64_t N = ts.tokens.shape()[0], T = ts.n_token(), D = ts.token_dim();
  check(T >= 2, "token_similarity: need at least 2 tokens, got {}", T);
  const auto& v = ts.tokens.value();
  double batch_sum = 0;
  for (int64_t s = 0; s < N; ++s) {
    const real* base = v.data() + s * T * D;
    std::vector<double> norms(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) {
      double sq = 0;
      for (int64_t d = 0; d < D; ++d) {
        double x = base[i * D + d];
        sq += x * x;
      }
      norms[static_cast<size_t>(i)] = std::sqrt(sq);
    }
    double acc = 0;
    int64_t pairs = 0;
    for (int64_t i = 0; i < T; ++i)
      for (int64_t j = i + 1; j < T; ++j) {
        double ni = norms[static_cast<size_t>(i)];
        double nj = norms[static_cast<size_t>(j)];
        double cosine = 0;
        if (ni > 0 && nj > 0) {
          double dot = 0;
          for (int64_t d = 0; d < D; ++d)
            dot += static_cast<double>(base[i * D + d]) * base[j * D + d];
          cosine = dot / (ni * nj);
        }
        acc += cosine;
        ++pairs;
      }
    batch_sum += acc / static_cast<double>(pairs);
  }
  return batch_sum / static_cast<double>(N);
}

bool is_held_out(int64_t sample_index) {
  return splitmix64(static_cast<uint64_t>(sample_index) ^
                    0x5eedc0ffee5eedULL) % 10 == 0;
}

AccessibilityResult estimate_accessibility(
    const std::function<TokenSet(const Tensor&)>& tokenizer,
    const Tensor& images, const DecoderConfig& decoder_cfg, int epochs,
    int batch_size, uint64_t seed) {
  check(images.rank() == 4, "probe: images must be [N,3,H,W], got {}",
        shape_str(images.shape()));
  int64_t N = images.shape()[0];
  check(N >= 2, "probe: need at least 2 images");

  std::vector<int64_t> train_idx, held_idx;
  for (int64_t i = 0; i < N; ++i)
    (is_held_out(i) ? held_idx : train_idx).push_back(i);
  check(!train_idx.empty() && !held_idx.empty(),
        "probe: split produced an empty side ({} train, {} held-out)",
        train_idx.size(), held_idx.size());

  Rng init_rng(seed);
  Decoder decoder(decoder_cfg, init_rng);
  auto params = decoder.named_params("probe_dec");
  OptimConfig oc;
  oc.kind = OptimKind::AdamW;
  oc.lr = 1e-3;
  oc.beta1 = 0.5;
  oc.beta2 = 0.999;
  oc.weight_decay = 0.0;
  Optimizer optim(oc);

  auto gather_batch = [&](const std::vector<int64_t>& pool, size_t from,
                          size_t count) {
    std::vector<int64_t> ids(pool.begin() + static_cast<int64_t>(from),
                             pool.begin() + static_cast<int64_t>(from + count));
    return gather(images, 0, ids);
  };

  int scale = decoder_cfg.output_scale;
  auto batch_loss = [&](const Tensor& xb) {
    TokenSet tokens;
    {
      NoGradGuard ng;  // tokenizer stays frozen and out of the graph
      tokens = tokenizer(xb);
    }
    Tensor recon = decoder.forward(tokens);
    Tensor target = bilinear_resize(xb, scale, scale);
    return rec_loss(recon, target, RecLossKind::L2);
  };

  AccessibilityResult result;
  std::vector<int64_t> order = train_idx;
  for (int e = 0; e < epochs; ++e) {
    Rng shuffle_rng(splitmix64(seed ^ splitmix64(static_cast<uint64_t>(e))));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    int64_t seen = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
      size_t count = std::min(static_cast<size_t>(batch_size),
                              order.size() - at);
      Tensor xb = gather_batch(order, at, count);
      Tensor loss = batch_loss(xb);
      if (!loss.all_finite())
        fail_numeric("probe: non-finite reconstruction loss");
      Optimizer::zero_grad(params);
      loss.backward();
      optim.step(params);
      epoch_loss += loss.item() * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
    }
    result.train_curve.push_back(epoch_loss / static_cast<double>(seen));
  }

  // held-out evaluation
  NoGradGuard ng;
  double total = 0;
  int64_t seen = 0;
  for (size_t at = 0; at < held_idx.size(); at += static_cast<size_t>(batch_size)) {
    size_t count = std::min(static_cast<size_t>(batch_size),
                            held_idx.size() - at);
    Tensor xb = gather_batch(held_idx, at, count);
    Tensor loss = batch_loss(xb);
    total += loss.item() * static_cast<double>(count);
    seen += static_cast<int64_t>(count);
  }
  result.held_out_l2 = total / static_cast<double>(seen);
  return result;
}

}  // namespace tlab
