#pragma once

#include "fetrack/nn.hpp"

namespace fetrack {

struct HeadsConfig {
  int filter_size = 3;       // classifier filter k x k (odd sizes align cleanly)
  int pool_low = 5;          // IoU-head pooling, stride-8 level
  int pool_high = 3;         // IoU-head pooling, stride-16 level
  int q_dim = 0;             // modulation bottleneck; 0 -> 2 * channels_high
  int feat_dim = 0;          // IoU feature width; 0 -> 2 * channels_high
  int filter_opt_steps = 5;  // steepest-descent iterations
  double filter_reg = 0.05;  // ridge weight on the filter during optimization
  int stride_low = 8;
  int stride_high = 16;

  /// An even filter correlates with a +half-cell bias; labels and the
  /// argmax-to-center mapping both shift by this to stay aligned.
  double response_offset_px() const {
    return filter_size % 2 == 0 ? 0.5 * stride_low : 0.0;
  }
};

struct ModulationVectors {
  Tensor low;   // (R, channels_low)
  Tensor high;  // (R, channels_high)
};

/// IoU modulation + IoU predictor. Pooled reference features condition two
/// per-channel vectors; pooled test features are gated by them and mapped to
/// a scalar IoU estimate that is differentiable in the candidate box.
class BboxRegressor : public Module {
 public:
  BboxRegressor(int channels_low, int channels_high, const HeadsConfig& cfg, Rng& rng);

  ModulationVectors compute_modulation(const Tensor& k_low_ref, const Tensor& k_high_ref,
                                       const Tensor& boxes_ref) const;

  /// Box-independent part of the test branch; compute once per frame.
  struct TestFeatures {
    Tensor low;
    Tensor high;
  };
  TestFeatures prepare_test(const Tensor& k_low_test, const Tensor& k_high_test) const;

  /// (R,1) predicted IoU for R candidate boxes. `boxes` may carry gradients.
  Tensor predict_iou(const TestFeatures& feats, const ModulationVectors& v,
                     const Tensor& boxes) const;

  const HeadsConfig& config() const { return cfg_; }

 private:
  HeadsConfig cfg_;
  Conv2d* conv_ref_low_;
  Conv2d* conv_ref_high_;
  Conv2d* conv_test_low1_;
  Conv2d* conv_test_low2_;
  Conv2d* conv_test_high1_;
  Conv2d* conv_test_high2_;
  Linear* fc_q_;
  Linear* fc_v_low_;
  Linear* fc_v_high_;
  Linear* fc_test_low_;   // bias-free: zero modulation annihilates the input
  Linear* fc_test_high_;  // bias-free
  Linear* fc_iou_;
};

/// Gaussian target scores on the classifier grid, peak 1 at the snapped
/// center cell.
struct GaussianLabel {
  Tensor map;  // (1,1,H',W')
  int center_row = 0;
  int center_col = 0;
  double sigma = 1.0;  // cells
};

GaussianLabel make_label(double center_x_px, double center_y_px, double target_w, double target_h,
                         int map_h, int map_w, int stride);

/// Target classifier: feature conv, filter init by region pooling, steepest
/// descent refinement on the hinged MSE, and dense score prediction.
class Classifier : public Module {
 public:
  Classifier(int channels_low, const HeadsConfig& cfg, Rng& rng);

  /// Classifier feature space; applied to fused low-level features.
  Tensor features(const Tensor& k_low) const;

  /// (R, C, k, k) initial filters pooled from per-sample reference boxes.
  Tensor init_filter(const Tensor& feat_ref, const Tensor& boxes_ref) const;

  /// Dense response of per-sample filters; geometry matches the feature map.
  Tensor classify(const Tensor& feat, const Tensor& filter) const;

  /// Steepest-descent refinement of the hinged MSE on the reference sample,
  /// with the hinge mask frozen per step and an exact line search on the
  /// frozen quadratic. Runs detached from any surrounding graph. Optionally
  /// records the frozen-model loss before/after each step.
  Tensor optimize_filter(const Tensor& filter, const Tensor& feat_ref, const Tensor& label,
                         int steps, std::vector<double>* loss_trace = nullptr) const;

  const HeadsConfig& config() const { return cfg_; }

 private:
  HeadsConfig cfg_;
  Conv2d* feat_;
};

}  // namespace fetrack
