#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "deepist/common.hpp"
#include "deepist/tensor.hpp"

namespace deepist {

/// Central finite differences against an analytic gradient. `objective`
/// re-evaluates the scalar under the current contents of `x`; `analytic`
/// holds dObjective/dx. Probes `n_probes` coordinates (all of them when the
/// tensor is smaller) and returns the largest relative error, defined as
/// |a - n| / max(1e-6, |a|, |n|).
inline double grad_check(const std::function<double()>& objective, Tensor& x,
                         const Tensor& analytic, std::size_t n_probes,
                         std::uint64_t seed, double h = 1e-5) {
  if (!x.same_shape(analytic))
    throw ValidationError("grad_check: gradient shape mismatch");
  Rng rng(seed);
  double worst = 0.0;
  const std::size_t total = x.size();
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    const std::size_t i = total <= n_probes
                              ? probe % total
                              : static_cast<std::size_t>(rng.next_below(total));
    const double saved = x.data[i];
    x.data[i] = saved + h;
    const double fp = objective();
    x.data[i] = saved - h;
    const double fm = objective();
    x.data[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.data[i];
    const double rel = std::abs(a - numeric) /
                       std::max({1e-6, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace deepist
