#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fetrack/tensor.hpp"

namespace fetrack {

struct GradCheckEntry {
  std::string name;
  double max_error = 0.0;  // max over elements of |analytic - numeric| / max(1, |a|, |n|)
  std::int64_t checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;

  bool pass() const {
    for (const auto& e : entries) {
      if (!e.pass) return false;
    }
    return true;
  }
  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_error);
    return m;
  }
};

/// Compare analytic gradients of a scalar-valued function against central
/// finite differences for each tensor in `parameters`. The function must be
/// deterministic and is re-evaluated under NoGrad for the perturbed values.
/// `max_probes` < numel samples a deterministic subset of coordinates.
GradCheckReport grad_check(const std::function<Tensor()>& function,
                           const std::vector<std::pair<std::string, Tensor>>& parameters,
                           double h = 1e-6, double tolerance = 1e-4,
                           std::int64_t max_probes = 64);

}  // namespace fetrack
