#include "fetrack/loss.hpp"

#include <algorithm>

namespace fetrack {

double hinge_residual_value(double score, double target) {
  return target > 0.05 ? score - target : std::max(0.0, score);
}

Tensor classification_loss(const Tensor& score_map, const Tensor& label) {
  if (score_map.shape() != label.shape()) {
    throw ShapeError("classification_loss: shape mismatch " + shape_str(score_map.shape()) +
                     " vs " + shape_str(label.shape()));
  }
  return mean(square(hinge_residual(score_map, label)));
}

Tensor bbox_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.numel() != target.numel()) {
    throw ShapeError("bbox_loss: length mismatch " + shape_str(predicted.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  Tensor t = target.shape() == predicted.shape() ? target : reshape(target, predicted.shape());
  return mean(square(sub(predicted, t)));
}

Tensor total_loss(const Tensor& cls, const Tensor& bbox, double beta) {
  return add(scale(cls, beta), bbox);
}

}  // namespace fetrack
