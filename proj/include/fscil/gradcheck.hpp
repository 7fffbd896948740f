#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/params.hpp"
#include "fscil/rng.hpp"

namespace fscil {

// lossfn(store, with_grads): returns the scalar loss; when with_grads is
// true it must also populate store's gradients (after zero_grads, which the
// harness performs). The function must be deterministic in the parameters.
using LossFn = std::function<double(ParamStore&, bool)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

// Central-difference check of analytic gradients on a seeded coordinate
// sample. Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult gradcheck(const LossFn& lossfn, ParamStore& store, double eps,
                                 double sample_fraction, std::uint64_t seed = 0x5eedULL) {
  if (!(eps > 0.0)) throw ConfigError("gradcheck: eps must be positive");
  if (!(sample_fraction > 0.0)) throw ConfigError("gradcheck: sample fraction must be positive");

  store.zero_grads();
  double base = lossfn(store, true);
  if (!std::isfinite(base)) throw NumericError("gradcheck: loss is not finite");

  GradCheckResult result;
  Rng rng(combine_seed(seed, 0x67726164ULL));
  for (const auto& name : store.names()) {
    Tensor& p = store.param(name);
    const Tensor& analytic = store.grad(name);
    std::size_t n = p.numel();
    std::size_t want = sample_fraction >= 1.0
                           ? n
                           : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(sample_fraction * static_cast<double>(n))));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (want < n) {
      rng.shuffle(idx);
      idx.resize(want);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      double saved = p[i];
      p[i] = saved + eps;
      double up = lossfn(store, false);
      p[i] = saved - eps;
      double down = lossfn(store, false);
      p[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("gradcheck: perturbed loss is not finite at " + name);
      }
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double rel = std::fabs(a - numeric) / denom;
      ++result.coordinates_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace fscil
