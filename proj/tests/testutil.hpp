#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "coda/nn/params.hpp"
#include "coda/rng.hpp"

namespace testutil {

// Central finite differences on randomly chosen coordinates of `store`
// against an analytic gradient. Returns the worst relative error over the
// sampled coordinates (coordinates where both sides vanish are skipped).
inline double fd_worst_rel_error(coda::nn::ParamStore& store, const double* analytic,
                                 const std::function<double()>& loss, int n_coords, coda::Rng& rng,
                                 double h = 1e-5) {
  double worst = 0.0;
  auto& flat = store.flat();
  // coordinates whose gradient sits far below the dominant scale are
  // beneath central-difference resolution and are skipped
  double gscale = 0.0;
  for (size_t i = 0; i < flat.size(); ++i) gscale = std::max(gscale, std::abs(analytic[i]));
  const double silent = 1e-5 * (gscale + 1e-12);
  int checked = 0;
  int attempts = 0;
  while (checked < n_coords && attempts < n_coords * 50) {
    ++attempts;
    const size_t i = size_t(rng.uniform_int(0, int64_t(flat.size())));
    const double keep = flat[i];
    const double step = h * std::max(1.0, std::abs(keep));
    flat[i] = keep + step;
    const double lp = loss();
    flat[i] = keep - step;
    const double lm = loss();
    flat[i] = keep;
    const double fd = (lp - lm) / (2.0 * step);
    const double an = analytic[i];
    if (std::max(std::abs(fd), std::abs(an)) < silent) continue;
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, rel);
    ++checked;
  }
  return worst;
}

}  // namespace testutil
