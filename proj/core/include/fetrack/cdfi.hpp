#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fetrack/aggregation.hpp"
#include "fetrack/nn.hpp"

namespace fetrack {

enum class InputMode { Fused, FrameOnly, EventOnly, ConcatToFrame, ConcatToEvent };

InputMode input_mode_from_string(const std::string& name);
std::string to_string(InputMode mode);

/// Architecture switches. The ablation flags correspond to dropping EAB, the
/// whole cross-domain fusion block, its self/cross attention gates, the
/// adaptive weighting, or the learned per-bin weights.
struct CdfiConfig {
  int n_bins = 3;
  int channels_low = 64;
  int channels_high = 128;
  InputMode input_mode = InputMode::Fused;
  bool use_eab = true;
  bool use_cdms = true;
  bool use_self_attention = true;
  bool use_cross_attention = true;
  bool use_adaptive_weighting = true;
  bool fixed_branch_weights = false;
  AggregationMethod aggregation = AggregationMethod::LatestPolarity;
  double time_surface_tau = 0.0;

  void check() const;
  int event_channels_per_bin() const { return channels_per_bin(aggregation); }
};

struct FeatureLevels {
  Tensor low;   // stride 8, channels_low
  Tensor high;  // stride 16, channels_high
};

struct FusedFeatures {
  Tensor low;
  Tensor high;
  double weight_frame = 1.0;  // mean adaptive gate over both levels
  double weight_event = 1.0;
};

/// Edge Attention Block: a channel gate from global pooling followed by a
/// spatial gate from the channel-summed map; the input is rescaled, never
/// amplified.
class Eab : public Module {
 public:
  Eab(int channels, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv2d* gate_;
};

/// Cross-Attention Block: output = x + sigmoid(self)(x) * x + sigmoid(cross)(other) * x.
class Cab : public Module {
 public:
  Cab(int channels, bool use_self, bool use_cross, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& other) const;

 private:
  bool use_self_;
  bool use_cross_;
  Conv2d* self_gate_ = nullptr;
  Conv2d* cross_a_ = nullptr;
  BatchNorm2d* cross_a_bn_ = nullptr;
  Conv2d* cross_b_ = nullptr;
  BatchNorm2d* cross_b_bn_ = nullptr;
  Conv2d* cross_c_ = nullptr;
  BatchNorm2d* cross_c_bn_ = nullptr;
  Conv2d* cross_fuse_ = nullptr;
};

/// Squeeze-style per-channel weights in (0,1).
class AdaptiveWeightNet : public Module {
 public:
  AdaptiveWeightNet(int channels, Rng& rng);
  Tensor forward(const Tensor& x) const;  // (N,C,1,1)

 private:
  Conv2d* reduce_;
  BatchNorm2d* bn_;
  Conv2d* expand_;
};

/// Cross-Domain Modulation and Selection for one feature level.
class Cdms : public Module {
 public:
  Cdms(int channels, bool use_self, bool use_cross, bool use_aw, Rng& rng);

  struct Output {
    Tensor fused;
    double mean_weight_frame = 1.0;
    double mean_weight_event = 1.0;
  };
  Output forward(const Tensor& frame_feat, const Tensor& event_feat) const;

 private:
  bool use_aw_;
  Cab* cab_frame_;
  Cab* cab_event_;
  AdaptiveWeightNet* aw_frame_ = nullptr;
  AdaptiveWeightNet* aw_event_ = nullptr;
};

/// Frame feature extractor: five conv stages (strides 1,2,2,2,2), features
/// tapped at cumulative strides 8 and 16.
class Ffe : public Module {
 public:
  Ffe(int in_channels, int channels_low, int channels_high, Rng& rng);
  FeatureLevels forward(const Tensor& image) const;

 private:
  std::vector<ConvBnRelu*> stages_;
};

/// Event feature extractor: one four-conv sub-branch per bin with EABs after
/// conv3 and conv4, fused by learned per-bin weights.
class Efe : public Module {
 public:
  Efe(int branches, int in_channels_per_branch, int channels_low, int channels_high, bool use_eab,
      bool fixed_branch_weights, Rng& rng);
  FeatureLevels forward(const std::vector<Tensor>& bins) const;

  struct BranchOut {
    Tensor low;
    Tensor high;
  };
  BranchOut branch_forward(int branch, const Tensor& x) const;
  int branches() const { return static_cast<int>(branches_.size()); }

 private:
  struct Branch {
    ConvBnRelu* conv1;
    ConvBnRelu* conv2;
    ConvBnRelu* conv3;
    ConvBnRelu* conv4;
    Eab* eab_low = nullptr;
    Eab* eab_high = nullptr;
  };
  std::vector<Branch> branches_;
  bool fixed_weights_;
  std::vector<Tensor> w_low_;
  std::vector<Tensor> w_high_;
};

/// The full Cross-Domain Feature Integrator.
class Cdfi : public Module {
 public:
  explicit Cdfi(const CdfiConfig& config, Rng& rng);

  /// frame: (N,1,H,W) in [0,1] (undefined for event_only); bins: n_bins
  /// tensors of (N,channels_per_bin,H,W) in [0,1] (empty for frame_only).
  FusedFeatures forward(const Tensor& frame, const std::vector<Tensor>& bins) const;

  const CdfiConfig& config() const { return config_; }
  const Ffe* ffe() const { return ffe_; }
  const Efe* efe() const { return efe_; }
  const Cdms* cdms_low() const { return cdms_low_; }
  const Cdms* cdms_high() const { return cdms_high_; }

 private:
  CdfiConfig config_;
  Ffe* ffe_ = nullptr;
  Efe* efe_ = nullptr;
  Cdms* cdms_low_ = nullptr;
  Cdms* cdms_high_ = nullptr;
};

/// (1,1,H,W) tensor from a grayscale image, scaled to [0,1].
Tensor image_to_tensor(const Image8& image);

/// n_bins tensors of (1,channels,H,W) from aggregated frames, scaled to [0,1].
std::vector<Tensor> aggregated_to_tensors(const AggregatedFrames& agg);

}  // namespace fetrack
