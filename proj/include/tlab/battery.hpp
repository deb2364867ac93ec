#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tlab/common.hpp"

namespace tlab {

// One finite-difference check: builds fresh random inputs from the seed and
// returns the max relative error of the analytic gradient (nullopt when the
// probed tensor is frozen). Elementary ops carry a 1e-4 tolerance, composed
// model paths 1e-3.
struct BatteryCase {
  std::string name;
  real tolerance;
  std::function<std::optional<real>(uint64_t seed)> run;
};

const std::vector<BatteryCase>& gradcheck_battery();

struct BatteryOutcome {
  std::string name;
  real tolerance = 0;
  real worst = 0;  // max over seeds
  bool passed = false;
};

// Runs every case over `seeds` consecutive seeds (central differences,
// step 1e-5, 64-bit).
std::vector<BatteryOutcome> run_gradcheck_battery(int seeds);

}  // namespace tlab
