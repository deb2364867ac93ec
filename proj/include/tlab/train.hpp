#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "tlab/config.hpp"
#include "tlab/dataset.hpp"
#include "tlab/moto.hpp"
#include "tlab/optim.hpp"
#include "tlab/probes.hpp"
#include "tlab/tokenizer.hpp"
#include "tlab/tokenprop.hpp"
#include "tlab/vit.hpp"

namespace tlab {

// Standard normalizations wrapped around the stem input for the tokenizer
// normalization comparison. Definitions on [N,C,H,W]:
//   layer:    per-sample statistics over (C,H,W)
//   instance: per-sample per-channel statistics over (H,W)
//   batch:    per-channel statistics over (N,H,W) while training, running
//             averages (momentum 0.9) at evaluation
// All use eps = 1e-5 inside the square root and a per-channel affine.
struct InputNorm {
  std::string kind;  // layer|batch|instance
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // batch norm buffers (frozen tensors)

  static InputNorm init(const std::string& kind, int channels);
  Tensor forward(const Tensor& x, bool training);
  void collect_params(std::vector<NamedParam>& out) const;
};

// A full experiment model: optional MoTo or input normalization in front of
// the tokenizer stem, the transformer body, and the optional reconstruction
// decoder.
struct Model {
  ExperimentConfig cfg;
  std::optional<MotoParams> input_moto;
  std::unique_ptr<InputNorm> input_norm;
  std::unique_ptr<Tokenizer> tokenizer;
  std::unique_ptr<VitBody> vit;
  std::unique_ptr<Decoder> decoder;

  // normalized image -> tokens, including the MoTo or norm wrapper; this is
  // the F_phi pipeline the probes measure
  TokenSet stem_forward(const Tensor& x, bool training);
  std::vector<NamedParam> named_params();
};

Model build_model(const ExperimentConfig& cfg, int num_classes, Rng& rng);

void save_checkpoint(const std::string& dir, Model& model,
                     const Optimizer& optim, int epochs_done);
// returns the number of completed epochs recorded in the checkpoint
int load_checkpoint(const std::string& dir, Model& model, Optimizer* optim);

// Builds the dataset named by the config (synthetic sets derive their seed
// from the run seed).
DatasetShard load_dataset(const ExperimentConfig& cfg);

// Fixed split: held-out indices by stable hash, training indices optionally
// subsampled to cfg.fraction in a deterministic hash order.
void split_dataset(const DatasetShard& shard, double fraction,
                   std::vector<int64_t>& train_idx,
                   std::vector<int64_t>& val_idx);

struct RunResult {
  bool completed = false;
  int nan_epoch = -1;  // 1-based epoch of the NaN abort, -1 if none
  double final_train_acc = 0;
  double final_val_acc = 0;
  double recon_error = std::numeric_limits<double>::quiet_NaN();
  double token_similarity = std::numeric_limits<double>::quiet_NaN();
  std::string run_dir;
};

// Runs the full loop and writes config.txt, metrics.csv (deterministic
// columns), timing.csv (wall clock, kept separate so metrics stay
// byte-reproducible), checkpoints, optional reconstruction dumps and the
// final probe.csv into cfg.out_dir. A non-finite loss aborts the run and
// records the epoch and lambda in abort.txt.
RunResult train(const ExperimentConfig& cfg);

// Continues a run from its latest checkpoint; the completed trajectory is
// bit-identical to an uninterrupted one.
RunResult resume(const std::string& run_dir);

}  // namespace tlab
