#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fetrack/errors.hpp"
#include "fetrack/geometry.hpp"

namespace fetrack {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense f64 tensor handle. Ops on tensors with requires_grad record a
/// reverse-mode graph (define-by-run); backward() on a scalar accumulates
/// gradients into every reachable leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from a scalar output. A recorded graph may be consumed once;
  /// re-running forward produces a fresh graph.
  void backward() const;

  /// Deep copy of values; the copy is a detached leaf.
  Tensor clone_detached(bool requires_grad = false) const;

  std::shared_ptr<detail::TensorNode> node_;

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
};

/// While alive, ops do not record backward graphs (forward values only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Re-enables recording inside a NoGradGuard scope (used by internal
/// optimizers that need their own small graphs).
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- Operator set ---------------------------------------------------------
// Broadcasting is deliberately narrow: identical shapes, a 1-element scalar,
// per-channel (N-or-1, C, 1, 1) over space, or a single-channel spatial map
// (N, 1, H, W) over channels.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);

/// Cross-correlation with zero padding. x: (N,Ci,H,W), w: (Co,Ci,kh,kw),
/// bias: (Co) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

/// x: (N,Fi), w: (Fo,Fi), bias: (Fo) or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor reshape(const Tensor& a, Shape shape);
Tensor flatten2(const Tensor& a);  // (N, rest)

/// Concatenate along axis 1 (channels/features); ranks 2 or 4.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Concatenate along axis 0.
Tensor concat_batch(const std::vector<Tensor>& parts);
/// Single-sample view copy (N,...) -> (1,...).
Tensor slice_batch(const Tensor& a, std::int64_t index);
/// Spatial crop [y0,y1) x [x0,x1) of an (N,C,H,W) tensor.
Tensor crop_spatial(const Tensor& a, std::int64_t y0, std::int64_t y1, std::int64_t x0,
                    std::int64_t x1);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over the channel axis of (N,C,H,W) -> (N,1,H,W).
Tensor sum_channels(const Tensor& a);

/// Per-channel spatial mean -> (N,C,1,1).
Tensor adaptive_avg_pool(const Tensor& a);
Tensor avg_pool(const Tensor& a, int kernel, int stride);
Tensor max_pool(const Tensor& a, int kernel, int stride);

/// Batch normalization over (N,H,W) per channel. Training mode uses biased
/// batch statistics and updates running stats in place (momentum 0.1);
/// eval mode reads the running stats.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                 Tensor running_var, bool training, double momentum = 0.1, double eps = 1e-5);

/// Box-differentiable average pooling: each output cell averages a fixed
/// samples x samples grid of bilinear taps inside its sub-box. `boxes` is
/// (R,4) rows of (x,y,w,h) in image coordinates; features (N,C,H,W) with
/// N == 1 (shared) or N == R. Feature position = image position *
/// spatial_scale + coord_offset (the offset aligns pooling with the
/// receptive-field centers of strided feature maps).
Tensor region_pool(const Tensor& features, const Tensor& boxes, int out_h, int out_w,
                   double spatial_scale, int samples = 2, double coord_offset = 0.0);

/// Hinged residual per element: s - z where z > 0.05, max(0, s)
/// otherwise. `labels` is treated as a constant.
Tensor hinge_residual(const Tensor& scores, const Tensor& labels);

Tensor box_to_tensor(const BBox& b, bool requires_grad = false);
BBox tensor_to_box(const Tensor& t, std::int64_t row = 0);

}  // namespace fetrack
