#include "tlab/gradcheck.hpp"

#include <cmath>

namespace tlab {

std::optional<real> grad_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, real eps) {
  check(x.all_finite(), "grad_check: input is not finite");
  if (!x.requires_grad()) return std::nullopt;

  Tensor probe(x.shape(), x.value(), /*requires_grad=*/true);
  Tensor y = f(probe);
  check(y.numel() == 1, "grad_check: f must be scalar-valued, got shape {}",
        shape_str(y.shape()));
  check(y.all_finite(), "grad_check: non-finite forward value");
  y.backward();
  std::vector<real> analytic = probe.has_grad()
                                   ? probe.grad()
                                   : std::vector<real>(x.value().size(), 0.0);

  std::vector<real> base = x.value();
  real worst = 0;
  NoGradGuard ng;
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<real> vp = base, vm = base;
    vp[i] += eps;
    vm[i] -= eps;
    real fp = f(Tensor(x.shape(), std::move(vp))).item();
    real fm = f(Tensor(x.shape(), std::move(vm))).item();
    check(std::isfinite(fp) && std::isfinite(fm),
          "grad_check: non-finite intermediate at coordinate {}", i);
    real numeric = (fp - fm) / (2 * eps);
    real denom = std::max(real(1), std::max(std::abs(analytic[i]),
                                            std::abs(numeric)));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace tlab
