// Command-line front end: dataset synthesis, training runs, probes,
// experiment suites, layout visualization, timing ladders and the gradient
// battery. Every ExperimentConfig key is exposed as a --key flag on the
// relevant subcommands; a config file provides the base values and flags
// override it.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "tlab/battery.hpp"
#include "tlab/image.hpp"
#include "tlab/suite.hpp"
#include "tlab/train.hpp"

using namespace tlab;
namespace fs = std::filesystem;

namespace {

// registers every config key as a string option; applied in schema order
void add_config_flags(CLI::App* cmd,
                      std::map<std::string, std::string>& overrides) {
  for (const auto& key : config_schema()) {
    cmd->add_option_function<std::string>(
        "--" + key.name,
        [&overrides, name = key.name](const std::string& v) {
          overrides[name] = v;
        },
        key.describe);
  }
}

ExperimentConfig resolve_config(
    const std::string& config_path,
    const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = ExperimentConfig::from_file(config_path);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

DatasetShard dataset_for(const ExperimentConfig& cfg) { return load_dataset(cfg); }

int cmd_synth(const std::string& out, int classes, int per_class, int size,
              uint64_t seed) {
  Rng rng(seed);
  DatasetShard shard = synth_dataset(classes, per_class, size, rng);
  save_shard(out, shard);
  fmt::print("wrote {} images ({} classes, {}px) to {}\n", shard.size(),
             classes, size, out);
  return 0;
}

int cmd_train(const std::string& config_path,
              const std::map<std::string, std::string>& overrides,
              const std::string& resume_dir) {
  RunResult r;
  if (!resume_dir.empty()) {
    r = resume(resume_dir);
  } else {
    r = train(resolve_config(config_path, overrides));
  }
  if (!r.completed) {
    fmt::print(stderr, "run aborted: non-finite loss at epoch {} (see {})\n",
               r.nan_epoch, r.run_dir + "/abort.txt");
    return 2;
  }
  fmt::print("run complete: {}\n", r.run_dir);
  fmt::print("  train_acc={:.4f} val_acc={:.4f}\n", r.final_train_acc,
             r.final_val_acc);
  if (std::isfinite(r.recon_error))
    fmt::print("  probe: recon_error={:.6f} token_similarity={:.4f}\n",
               r.recon_error, r.token_similarity);
  return 0;
}

int cmd_probe(const std::string& run_dir, const std::string& config_path,
              const std::map<std::string, std::string>& overrides,
              const std::string& out_csv) {
  ExperimentConfig cfg;
  if (!run_dir.empty()) {
    cfg = ExperimentConfig::from_file(run_dir + "/config.txt");
    for (const auto& [k, v] : overrides) cfg.set(k, v);
  } else {
    cfg = resolve_config(config_path, overrides);
  }
  DatasetShard shard = dataset_for(cfg);
  Rng rng(cfg.seed);
  Model model = build_model(cfg, static_cast<int>(shard.num_classes()), rng);
  if (!run_dir.empty())
    load_checkpoint(run_dir + "/ckpt_final", model, nullptr);

  std::vector<int64_t> all(static_cast<size_t>(shard.size()));
  for (int64_t i = 0; i < shard.size(); ++i) all[static_cast<size_t>(i)] = i;
  Tensor normalized = normalized_batch(shard, all);

  std::vector<int64_t> train_idx, val_idx;
  split_dataset(shard, 1.0, train_idx, val_idx);
  double sim = 0;
  int64_t seen = 0;
  {
    NoGradGuard ng;
    for (size_t at = 0; at < val_idx.size();
         at += static_cast<size_t>(cfg.batch_size)) {
      size_t count =
          std::min(static_cast<size_t>(cfg.batch_size), val_idx.size() - at);
      std::vector<int64_t> ids(val_idx.begin() + static_cast<int64_t>(at),
                               val_idx.begin() + static_cast<int64_t>(at + count));
      TokenSet tokens = model.stem_forward(normalized_batch(shard, ids), false);
      sim += token_similarity(tokens) * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
    }
  }
  sim /= static_cast<double>(seen);

  DecoderConfig pc;
  pc.channel_multiplier = cfg.decoder_multiplier;
  pc.output_scale = cfg.decoder_scale;
  pc.base_channels = cfg.decoder_base;
  pc.token_dim = cfg.embed_dim;
  auto res = estimate_accessibility(
      [&](const Tensor& x) { return model.stem_forward(x, false); },
      normalized, pc, cfg.probe_epochs, cfg.batch_size,
      splitmix64(cfg.seed ^ 0x9806EULL));

  ProbeReport report{run_dir.empty() ? model.tokenizer->id()
                                     : model.tokenizer->id() + "@" + run_dir,
                     res.held_out_l2, sim, cfg.probe_epochs, cfg.seed};
  fmt::print("{}\n{}\n", ProbeReport::csv_header(), report.csv_row());
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    os << ProbeReport::csv_header() << "\n" << report.csv_row() << "\n";
  }
  return 0;
}

int cmd_suite(const std::string& name, const std::string& out_dir, int seeds,
              const std::string& config_path,
              const std::map<std::string, std::string>& overrides) {
  ExperimentConfig base = resolve_config(config_path, overrides);
  auto rows = run_suite(name, base, seeds, out_dir);
  fmt::print("suite {} finished; comparison at {}/suite_{}.csv\n", name,
             out_dir, name);
  for (const auto& r : rows)
    fmt::print("  {:<24} status={} acc={:.4f}±{:.4f}\n", r.row, r.status,
               r.acc_mean, r.acc_std);
  return 0;
}

int cmd_speed(const std::string& out_csv, const std::string& sizes_arg,
              int trials) {
  std::vector<int> sizes;
  std::istringstream is(sizes_arg);
  std::string tok;
  while (std::getline(is, tok, ',')) sizes.push_back(std::stoi(tok));
  auto pts = run_speed_ladder(sizes, trials, out_csv);
  fmt::print("size,moto_ms,attn_ms\n");
  for (const auto& p : pts)
    fmt::print("{},{:.4f},{:.4f}\n", p.size, p.moto_ms, p.attn_ms);
  return 0;
}

int cmd_colorize(const std::string& run_dir, const std::string& config_path,
                 const std::map<std::string, std::string>& overrides,
                 int64_t index, const std::string& out) {
  ExperimentConfig cfg;
  if (!run_dir.empty()) {
    cfg = ExperimentConfig::from_file(run_dir + "/config.txt");
    for (const auto& [k, v] : overrides) cfg.set(k, v);
  } else {
    cfg = resolve_config(config_path, overrides);
    cfg.moto = true;
  }
  check(cfg.moto, "colorize: the run has no MoTo stage");
  DatasetShard shard = dataset_for(cfg);
  check(index >= 0 && index < shard.size(),
        "colorize: index {} outside dataset of {}", index, shard.size());
  Rng rng(cfg.seed);
  Model model = build_model(cfg, static_cast<int>(shard.num_classes()), rng);
  if (!run_dir.empty())
    load_checkpoint(run_dir + "/ckpt_final", model, nullptr);

  NoGradGuard ng;
  Tensor x = normalized_batch(shard, {index});
  SemanticLayout layout = soft_semantic_partition(x, *model.input_moto);
  Palette palette = default_palette(cfg.moto_entities);
  write_ppm(out, layout_colorize(layout, palette));
  std::string input_path = out + ".input.ppm";
  write_ppm(input_path, slice(reshape(gather(shard.images, 0, {index}),
                                      {3, shard.image_size(), shard.image_size()}),
                              0, 0, 3));
  fmt::print("wrote layout to {} (input copy at {})\n", out, input_path);
  return 0;
}

int cmd_gradcheck(int seeds) {
  auto results = run_gradcheck_battery(seeds);
  int failed = 0;
  for (const auto& r : results) {
    fmt::print("{} {:<32} worst {:.3e}  tol {:.0e}\n",
               r.passed ? "[PASS]" : "[FAIL]", r.name, r.worst, r.tolerance);
    if (!r.passed) ++failed;
  }
  fmt::print("{} of {} checks passed ({} seeds each)\n",
             results.size() - failed, results.size(), seeds);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vision tokenizer laboratory"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset shard");
  std::string synth_out = "data/synth";
  int synth_classes = 10, synth_per_class = 500, synth_size = 32;
  uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--classes", synth_classes, "class count");
  synth->add_option("--per-class", synth_per_class, "images per class");
  synth->add_option("--size", synth_size, "image size in pixels");
  synth->add_option("--seed", synth_seed, "generator seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "run one training experiment");
  std::string train_config, train_resume;
  std::map<std::string, std::string> train_over;
  train_cmd->add_option("--config", train_config, "key=value config file");
  train_cmd->add_option("--resume", train_resume,
                        "existing run directory to continue");
  add_config_flags(train_cmd, train_over);

  // probe
  auto* probe_cmd =
      app.add_subcommand("probe", "reconstruction/similarity probe of a stem");
  std::string probe_run, probe_config, probe_out;
  std::map<std::string, std::string> probe_over;
  probe_cmd->add_option("--run", probe_run,
                        "trained run directory (omit to probe a fresh stem)");
  probe_cmd->add_option("--config", probe_config, "config file for fresh stems");
  probe_cmd->add_option("--out", probe_out, "CSV output path");
  add_config_flags(probe_cmd, probe_over);

  // suite
  auto* suite_cmd = app.add_subcommand("suite", "run a named experiment suite");
  std::string suite_name, suite_out = "runs/suites", suite_config;
  int suite_seeds = 3;
  std::map<std::string, std::string> suite_over;
  suite_cmd->add_option("--name", suite_name,
                        "structure|norm|entities|placement|loss|lambda|"
                        "decoder|optim|data")
      ->required();
  suite_cmd->add_option("--out", suite_out, "suite output directory");
  suite_cmd->add_option("--seeds", suite_seeds, "seeds per row");
  suite_cmd->add_option("--config", suite_config, "base config file");
  add_config_flags(suite_cmd, suite_over);

  // speed
  auto* speed_cmd =
      app.add_subcommand("speed", "MoTo vs pixel-attention wall-time ladder");
  std::string speed_out = "runs/speed.csv", speed_sizes = "16,32,64,128";
  int speed_trials = 5;
  speed_cmd->add_option("--out", speed_out, "CSV output path");
  speed_cmd->add_option("--sizes", speed_sizes, "comma list of feature sizes");
  speed_cmd->add_option("--trials", speed_trials, "timing trials per size");

  // colorize
  auto* color_cmd =
      app.add_subcommand("colorize", "emit the semantic layout of one image");
  std::string color_run, color_config, color_out = "layout.ppm";
  int64_t color_index = 0;
  std::map<std::string, std::string> color_over;
  color_cmd->add_option("--run", color_run, "trained run directory");
  color_cmd->add_option("--config", color_config, "config for a fresh stem");
  color_cmd->add_option("--index", color_index, "dataset sample index");
  color_cmd->add_option("--out", color_out, "output PPM path");
  add_config_flags(color_cmd, color_over);

  // gradcheck
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference battery over all ops");
  int grad_seeds = 20;
  grad_cmd->add_option("--seeds", grad_seeds, "random seeds per check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_classes, synth_per_class, synth_size,
                       synth_seed);
    if (train_cmd->parsed()) return cmd_train(train_config, train_over, train_resume);
    if (probe_cmd->parsed())
      return cmd_probe(probe_run, probe_config, probe_over, probe_out);
    if (suite_cmd->parsed())
      return cmd_suite(suite_name, suite_out, suite_seeds, suite_config,
                       suite_over);
    if (speed_cmd->parsed()) return cmd_speed(speed_out, speed_sizes, speed_trials);
    if (color_cmd->parsed())
      return cmd_colorize(color_run, color_config, color_over, color_index,
                          color_out);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_seeds);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
