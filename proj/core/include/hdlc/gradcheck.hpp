#pragma once

#include <cmath>
#include <string>

#include "hdlc/network.hpp"

namespace hdlc {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  // parameter tensor and flat index of the worst entry
  int64_t checked = 0;
  int64_t skipped = 0;  // coordinates straddling a pooling/ReLU kink
  bool pass = false;
};

// |a - b| / max(|a|, |b|), skipping entries where both magnitudes are
// below the floor (finite differences cannot resolve them).
inline double grad_rel_error(double a, double b, double floor = 1e-6) {
  const double m = std::max(std::fabs(a), std::fabs(b));
  if (m <= floor) return 0;
  return std::fabs(a - b) / m;
}

// Compares the analytic network gradients against central finite
// differences of the mean cross-entropy loss, at double precision, on
// a random batch. Stochastic pooling runs in its smooth
// probability-weighted-average mode; dropout masks are frozen by the
// seed. Checks up to max_coords_per_tensor coordinates per parameter
// tensor (deterministically strided). Coordinates whose eps and eps/2
// difference quotients disagree straddle a max-pool/ReLU kink where
// central differences are not a valid oracle; those are skipped and
// counted. The filter compares FD against FD only, so it cannot hide
// an incorrect analytic gradient.
GradCheckResult gradcheck_network(const NetworkSpec& spec, uint64_t seed,
                                  double eps = 1e-3, double tolerance = 1e-3,
                                  int batch = 2,
                                  int max_coords_per_tensor = 48);

}  // namespace hdlc
