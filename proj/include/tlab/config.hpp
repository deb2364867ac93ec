#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tlab/common.hpp"

namespace tlab {

// Declarative description of one run. Parses from plain-text key=value with
// '#' comments; every field has a default and unknown keys are rejected.
struct ExperimentConfig {
  // data
  std::string dataset = "synth";  // "synth" or a shard directory
  int synth_classes = 10;
  int synth_per_class = 500;
  int image_size = 32;
  double fraction = 1.0;  // portion of the training split actually used

  // tokenizer
  std::string tokenizer = "patchify";
  int patch_size = 8;
  int embed_dim = 64;
  std::string input_norm = "none";  // none|layer|batch|instance

  // moto
  bool moto = false;
  int moto_entities = 8;
  double moto_tau = 0.1;
  int moto_dkq = 64;
  std::string moto_partition = "soft";  // soft|hard
  std::vector<int> moto_placements;     // transformer blocks, 1-based

  // transformer body
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  double drop_path = 0.0;

  // tokenprop
  bool tokenprop = false;
  double lambda = 0.001;
  std::string rec_loss = "l2";  // l1|l2
  int decoder_multiplier = 1;
  int decoder_scale = 64;
  int decoder_base = 32;  // desk-size stem width; the table width is 256

  // optimizer
  std::string optimizer = "adamw";
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double grad_clip = 0.0;
  std::string lr_schedule = "cosine";
  int warmup_epochs = 1;

  // run
  int epochs = 30;
  int batch_size = 64;
  uint64_t seed = 1;
  std::string out_dir = "runs/run";
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  int log_recon_every = 0;   // PPM dump interval in epochs; 0 = off
  bool run_probe = true;     // emit the final probe report
  int probe_epochs = 10;

  void validate() const;

  static ExperimentConfig from_string(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  // canonical serialization; from_string(to_string()) is lossless
  std::string to_string() const;

  // applies a single "key=value" assignment
  void set(const std::string& key, const std::string& value);

  bool operator==(const ExperimentConfig& other) const {
    return to_string() == other.to_string();
  }
};

// One schema entry per config key, shared by the parser, the serializer and
// the CLI flag registration.
struct ConfigKey {
  std::string name;
  std::string describe;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};
const std::vector<ConfigKey>& config_schema();

}  // namespace tlab
