#pragma once

#include <map>
#include <string>
#include <vector>

#include "tlab/tensor.hpp"

namespace tlab {

enum class OptimKind { Sgd, AdamW };
OptimKind parse_optim_kind(const std::string& name);
std::string optim_kind_name(OptimKind k);

struct OptimConfig {
  OptimKind kind = OptimKind::AdamW;
  real lr = 1e-3;
  real momentum = 0.9;           // sgd
  real beta1 = 0.9;              // adamw
  real beta2 = 0.999;
  real eps = 1e-8;
  real weight_decay = 0.0;       // sgd couples it into the gradient;
                                 // adamw applies it decoupled
  real grad_clip = 0.0;          // max global grad norm, 0 disables

  void validate() const;
};

enum class LrSchedule { Constant, Cosine };
LrSchedule parse_lr_schedule(const std::string& name);
std::string lr_schedule_name(LrSchedule s);

// Per-epoch learning-rate factor: linear warmup, then flat or cosine decay.
real lr_scale_at(LrSchedule s, int epoch, int total_epochs, int warmup_epochs);

// Stateful parameter updater. Parameters with requires_grad == false are
// never touched; a missing grad counts as zero. Updates are a pure function
// of (params, grads, state), so identical sequences give identical
// trajectories. State is keyed by parameter name for checkpointing.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg);

  void step(const std::vector<NamedParam>& params, real lr_scale = 1.0);
  static void zero_grad(const std::vector<NamedParam>& params);

  int64_t step_count() const { return t_; }
  const OptimConfig& config() const { return cfg_; }

  void save_state(const std::string& dir) const;
  void load_state(const std::string& dir,
                  const std::vector<NamedParam>& params);

 private:
  OptimConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<real>> m_;  // momentum / first moment
  std::map<std::string, std::vector<real>> v_;  // second moment (adamw)
};

}  // namespace tlab
