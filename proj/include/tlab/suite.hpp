#pragma once

#include <string>
#include <vector>

#include "tlab/train.hpp"

namespace tlab {

// One suite row aggregated over seeds. Partial failures are recorded in
// `status` ("ok" or "nan@<epoch>" per seed) and never stop the suite.
struct SuiteRowResult {
  std::string row;
  int seeds = 0;
  std::string status;
  double acc_mean = 0;
  double acc_std = 0;
  double recon_mean = 0;
  double sim_mean = 0;
  std::vector<RunResult> runs;
};

// Returns the row labels and configs of a named suite, derived from `base`.
// Suites: structure, norm, entities, placement, loss, lambda, decoder,
// optim, data.
std::vector<std::pair<std::string, ExperimentConfig>> suite_rows(
    const std::string& name, const ExperimentConfig& base);

// Runs every row with `kseeds` consecutive seeds, writes
// <out_dir>/suite_<name>.csv and per-run directories underneath out_dir.
std::vector<SuiteRowResult> run_suite(const std::string& name,
                                      const ExperimentConfig& base, int kseeds,
                                      const std::string& out_dir);

// Wall-time ladder for the complexity comparison: MoTo versus pixel-wise
// self-attention on the same feature sizes (batch 1, 16 channels), median
// of `trials` timed repetitions each.
struct SpeedPoint {
  int size = 0;
  double moto_ms = 0;
  double attn_ms = 0;
};
std::vector<SpeedPoint> run_speed_ladder(const std::vector<int>& sizes,
                                         int trials,
                                         const std::string& out_csv);

}  // namespace tlab
