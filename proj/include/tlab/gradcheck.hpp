#pragma once

#include <functional>
#include <optional>

#include "tlab/tensor.hpp"

namespace tlab {

// Compares the analytic gradient of a scalar-valued function against central
// finite differences with step eps. Returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|), or nullopt when x is
// frozen (requires_grad == false), in which case there is nothing to check.
// f must be a deterministic pure function of its argument; any leaf
// parameters it captures will receive gradient accumulations, which the
// caller may want to zero afterwards. Errors on non-finite values.
std::optional<real> grad_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, real eps = 1e-5);

}  // namespace tlab
