#pragma once

#include "fetrack/tensor.hpp"

namespace fetrack {

struct LossReport {
  double total = 0.0;
  double cls = 0.0;
  double bbox = 0.0;
  double beta = 1.0;
};

/// Scalar hinge residual: s - z where z > 0.05, max(0, s) otherwise.
double hinge_residual_value(double score, double target);

/// Mean squared hinge residual over all cells.
Tensor classification_loss(const Tensor& score_map, const Tensor& label);

/// Mean squared error between predicted and target IoUs.
Tensor bbox_loss(const Tensor& predicted, const Tensor& target);

/// beta * L_cls + L_b.
Tensor total_loss(const Tensor& cls, const Tensor& bbox, double beta);

}  // namespace fetrack
