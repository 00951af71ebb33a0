#pragma once

#include "fetrack/gradcheck.hpp"

namespace fetrack {

/// Finite-difference checks for every autodiff primitive, region pooling with
/// box-coordinate gradients, the IoU predictor, and the full
/// CDFI+heads+loss composite at toy scale. `seeds` random configurations per
/// entry.
GradCheckReport run_standard_gradchecks(double h = 1e-6, double tolerance = 1e-4, int seeds = 20);

}  // namespace fetrack
