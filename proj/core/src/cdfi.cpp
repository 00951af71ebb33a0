#include "fetrack/cdfi.hpp"

#include <cmath>

namespace fetrack {

InputMode input_mode_from_string(const std::string& name) {
  if (name == "fused") return InputMode::Fused;
  if (name == "frame_only") return InputMode::FrameOnly;
  if (name == "event_only") return InputMode::EventOnly;
  if (name == "concat_to_frame") return InputMode::ConcatToFrame;
  if (name == "concat_to_event") return InputMode::ConcatToEvent;
  throw ConfigError("unknown input_mode: " + name);
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::Fused: return "fused";
    case InputMode::FrameOnly: return "frame_only";
    case InputMode::EventOnly: return "event_only";
    case InputMode::ConcatToFrame: return "concat_to_frame";
    case InputMode::ConcatToEvent: return "concat_to_event";
  }
  throw ConfigError("unknown input_mode");
}

void CdfiConfig::check() const {
  if (n_bins < 1) throw ConfigError("n_bins must be >= 1");
  if (channels_low < 2 || channels_high < 2) {
    throw ConfigError("channel widths must be >= 2");
  }
}

// ---- EAB --------------------------------------------------------------------

Eab::Eab(int channels, Rng& rng) {
  (void)channels;
  gate_ = &add_module("gate", std::make_unique<Conv2d>(1, 1, 1, 1, 0, /*bias=*/true, rng));
}

Tensor Eab::forward(const Tensor& x) const {
  // Channel attention from global pooling, then a spatial gate from the
  // channel-wise sum of the modulated map.
  Tensor channel_gate = sigmoid(adaptive_avg_pool(x));
  Tensor modulated = mul(x, channel_gate);
  Tensor summed = sum_channels(modulated);
  Tensor spatial_gate = sigmoid(gate_->forward(summed));
  return mul(x, spatial_gate);
}

// ---- CAB --------------------------------------------------------------------

Cab::Cab(int channels, bool use_self, bool use_cross, Rng& rng)
    : use_self_(use_self), use_cross_(use_cross) {
  if (use_self_) {
    self_gate_ = &add_module(
        "self_gate", std::make_unique<Conv2d>(channels, channels, 3, 1, 1, /*bias=*/true, rng));
  }
  if (use_cross_) {
    cross_a_ = &add_module("cross_a",
                           std::make_unique<Conv2d>(channels, channels, 1, 1, 0, false, rng));
    cross_a_bn_ = &add_module("cross_a_bn", std::make_unique<BatchNorm2d>(channels));
    cross_b_ = &add_module("cross_b",
                           std::make_unique<Conv2d>(channels, channels, 3, 1, 1, false, rng));
    cross_b_bn_ = &add_module("cross_b_bn", std::make_unique<BatchNorm2d>(channels));
    cross_c_ = &add_module("cross_c",
                           std::make_unique<Conv2d>(channels, channels, 5, 1, 2, false, rng));
    cross_c_bn_ = &add_module("cross_c_bn", std::make_unique<BatchNorm2d>(channels));
    cross_fuse_ = &add_module(
        "cross_fuse", std::make_unique<Conv2d>(3 * channels, channels, 1, 1, 0, true, rng));
  }
}

Tensor Cab::forward(const Tensor& x, const Tensor& other) const {
  if (x.shape() != other.shape()) {
    throw ShapeError("Cab: operands differ " + shape_str(x.shape()) + " vs " +
                     shape_str(other.shape()));
  }
  Tensor out = x;
  if (use_self_) {
    out = add(out, mul(sigmoid(self_gate_->forward(x)), x));
  }
  if (use_cross_) {
    Tensor a = relu(cross_a_bn_->forward(cross_a_->forward(other)));
    Tensor b = relu(cross_b_bn_->forward(cross_b_->forward(other)));
    Tensor c = relu(cross_c_bn_->forward(cross_c_->forward(other)));
    Tensor gate = sigmoid(cross_fuse_->forward(concat_channels({a, b, c})));
    out = add(out, mul(gate, x));
  }
  return out;
}

// ---- adaptive weighting ------------------------------------------------------

AdaptiveWeightNet::AdaptiveWeightNet(int channels, Rng& rng) {
  reduce_ = &add_module("reduce", std::make_unique<Conv2d>(channels, channels, 1, 1, 0, true, rng));
  bn_ = &add_module("bn", std::make_unique<BatchNorm2d>(channels));
  expand_ = &add_module("expand", std::make_unique<Conv2d>(channels, channels, 1, 1, 0, true, rng));
}

Tensor AdaptiveWeightNet::forward(const Tensor& x) const {
  Tensor pooled = adaptive_avg_pool(x);
  Tensor hidden = relu(bn_->forward(reduce_->forward(pooled)));
  return sigmoid(expand_->forward(hidden));
}

// ---- CDMS --------------------------------------------------------------------

Cdms::Cdms(int channels, bool use_self, bool use_cross, bool use_aw, Rng& rng) : use_aw_(use_aw) {
  cab_frame_ = &add_module("cab_frame", std::make_unique<Cab>(channels, use_self, use_cross, rng));
  cab_event_ = &add_module("cab_event", std::make_unique<Cab>(channels, use_self, use_cross, rng));
  if (use_aw_) {
    aw_frame_ = &add_module("aw_frame", std::make_unique<AdaptiveWeightNet>(channels, rng));
    aw_event_ = &add_module("aw_event", std::make_unique<AdaptiveWeightNet>(channels, rng));
  }
}

Cdms::Output Cdms::forward(const Tensor& frame_feat, const Tensor& event_feat) const {
  Tensor t_frame = cab_frame_->forward(frame_feat, event_feat);
  Tensor t_event = cab_event_->forward(event_feat, frame_feat);
  Output out;
  if (use_aw_) {
    Tensor w_frame = aw_frame_->forward(t_frame);
    Tensor w_event = aw_event_->forward(t_event);
    out.fused = add(mul(t_frame, w_frame), mul(t_event, w_event));
    double mf = 0.0, me = 0.0;
    for (double v : w_frame.data()) mf += v;
    for (double v : w_event.data()) me += v;
    out.mean_weight_frame = mf / static_cast<double>(w_frame.numel());
    out.mean_weight_event = me / static_cast<double>(w_event.numel());
  } else {
    out.fused = add(t_frame, t_event);
  }
  return out;
}

// ---- FFE ---------------------------------------------------------------------

Ffe::Ffe(int in_channels, int channels_low, int channels_high, Rng& rng) {
  const int mid = std::max(2, channels_low / 2);
  const int widths[5] = {mid, mid, channels_low, channels_low, channels_high};
  const int strides[5] = {1, 2, 2, 2, 2};
  int in = in_channels;
  for (int i = 0; i < 5; ++i) {
    stages_.push_back(&add_module(
        "stage" + std::to_string(i + 1),
        std::make_unique<ConvBnRelu>(in, widths[i], 3, strides[i], 1, rng)));
    in = widths[i];
  }
}

FeatureLevels Ffe::forward(const Tensor& image) const {
  if (image.rank() != 4) throw ShapeError("Ffe: input must be (N,C,H,W)");
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ShapeError("Ffe: spatial extent " + shape_str(image.shape()) +
                     " is not divisible by 16");
  }
  Tensor x = image;
  FeatureLevels out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = stages_[i]->forward(x);
    if (i == 3) out.low = x;
  }
  out.high = x;
  return out;
}

// ---- EFE ---------------------------------------------------------------------

Efe::Efe(int branches, int in_channels_per_branch, int channels_low, int channels_high,
         bool use_eab, bool fixed_branch_weights, Rng& rng)
    : fixed_weights_(fixed_branch_weights) {
  const int mid = std::max(2, channels_low / 2);
  for (int b = 0; b < branches; ++b) {
    const std::string prefix = "branch" + std::to_string(b);
    Branch branch;
    branch.conv1 = &add_module(prefix + ".conv1", std::make_unique<ConvBnRelu>(
                                                      in_channels_per_branch, mid, 3, 2, 1, rng));
    branch.conv2 =
        &add_module(prefix + ".conv2", std::make_unique<ConvBnRelu>(mid, mid, 3, 2, 1, rng));
    branch.conv3 = &add_module(prefix + ".conv3",
                               std::make_unique<ConvBnRelu>(mid, channels_low, 3, 2, 1, rng));
    branch.conv4 = &add_module(
        prefix + ".conv4", std::make_unique<ConvBnRelu>(channels_low, channels_high, 3, 2, 1, rng));
    if (use_eab) {
      branch.eab_low = &add_module(prefix + ".eab1", std::make_unique<Eab>(channels_low, rng));
      branch.eab_high = &add_module(prefix + ".eab2", std::make_unique<Eab>(channels_high, rng));
    }
    branches_.push_back(branch);
  }
  if (!fixed_weights_) {
    const double init = 1.0 / branches;
    for (int b = 0; b < branches; ++b) {
      w_low_.push_back(add_parameter("w_low." + std::to_string(b),
                                     Tensor::full({1}, init, /*requires_grad=*/true)));
      w_high_.push_back(add_parameter("w_high." + std::to_string(b),
                                      Tensor::full({1}, init, /*requires_grad=*/true)));
    }
  }
}

Efe::BranchOut Efe::branch_forward(int branch, const Tensor& x) const {
  if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0) {
    throw ShapeError("Efe: spatial extent " + shape_str(x.shape()) + " is not divisible by 16");
  }
  const Branch& b = branches_[static_cast<std::size_t>(branch)];
  Tensor h = b.conv1->forward(x);
  h = b.conv2->forward(h);
  Tensor low = b.conv3->forward(h);
  if (b.eab_low) low = b.eab_low->forward(low);
  Tensor high = b.conv4->forward(low);
  if (b.eab_high) high = b.eab_high->forward(high);
  return {low, high};
}

FeatureLevels Efe::forward(const std::vector<Tensor>& bins) const {
  if (static_cast<int>(bins.size()) != branches()) {
    throw ConfigError("Efe: got " + std::to_string(bins.size()) + " bins, expected " +
                      std::to_string(branches()));
  }
  Tensor acc_low, acc_high;
  for (int i = 0; i < branches(); ++i) {
    BranchOut out = branch_forward(i, bins[static_cast<std::size_t>(i)]);
    Tensor low = fixed_weights_ ? out.low : mul(out.low, w_low_[static_cast<std::size_t>(i)]);
    Tensor high = fixed_weights_ ? out.high : mul(out.high, w_high_[static_cast<std::size_t>(i)]);
    acc_low = i == 0 ? low : add(acc_low, low);
    acc_high = i == 0 ? high : add(acc_high, high);
  }
  return {acc_low, acc_high};
}

// ---- CDFI --------------------------------------------------------------------

Cdfi::Cdfi(const CdfiConfig& config, Rng& rng) : config_(config) {
  config_.check();
  const int cpb = config_.event_channels_per_bin();
  const int concat_channels_count = 1 + config_.n_bins * cpb;

  switch (config_.input_mode) {
    case InputMode::Fused:
      ffe_ = &add_module("ffe", std::make_unique<Ffe>(1, config_.channels_low,
                                                      config_.channels_high, rng));
      efe_ = &add_module("efe", std::make_unique<Efe>(config_.n_bins, cpb, config_.channels_low,
                                                      config_.channels_high, config_.use_eab,
                                                      config_.fixed_branch_weights, rng));
      if (config_.use_cdms) {
        cdms_low_ = &add_module(
            "cdms_low", std::make_unique<Cdms>(config_.channels_low, config_.use_self_attention,
                                               config_.use_cross_attention,
                                               config_.use_adaptive_weighting, rng));
        cdms_high_ = &add_module(
            "cdms_high", std::make_unique<Cdms>(config_.channels_high, config_.use_self_attention,
                                                config_.use_cross_attention,
                                                config_.use_adaptive_weighting, rng));
      }
      break;
    case InputMode::FrameOnly:
      ffe_ = &add_module("ffe", std::make_unique<Ffe>(1, config_.channels_low,
                                                      config_.channels_high, rng));
      break;
    case InputMode::EventOnly:
      efe_ = &add_module("efe", std::make_unique<Efe>(config_.n_bins, cpb, config_.channels_low,
                                                      config_.channels_high, config_.use_eab,
                                                      config_.fixed_branch_weights, rng));
      break;
    case InputMode::ConcatToFrame:
      ffe_ = &add_module("ffe", std::make_unique<Ffe>(concat_channels_count, config_.channels_low,
                                                      config_.channels_high, rng));
      break;
    case InputMode::ConcatToEvent:
      efe_ = &add_module("efe", std::make_unique<Efe>(1, concat_channels_count,
                                                      config_.channels_low, config_.channels_high,
                                                      config_.use_eab,
                                                      config_.fixed_branch_weights, rng));
      break;
  }
}

FusedFeatures Cdfi::forward(const Tensor& frame, const std::vector<Tensor>& bins) const {
  auto check_bins = [&](std::size_t expected) {
    if (bins.size() != expected) {
      throw ConfigError("Cdfi: got " + std::to_string(bins.size()) + " bins, expected " +
                        std::to_string(expected));
    }
  };

  switch (config_.input_mode) {
    case InputMode::FrameOnly: {
      const FeatureLevels f = ffe_->forward(frame);
      return {f.low, f.high, 1.0, 0.0};
    }
    case InputMode::EventOnly: {
      check_bins(static_cast<std::size_t>(config_.n_bins));
      const FeatureLevels e = efe_->forward(bins);
      return {e.low, e.high, 0.0, 1.0};
    }
    case InputMode::ConcatToFrame: {
      check_bins(static_cast<std::size_t>(config_.n_bins));
      std::vector<Tensor> parts = {frame};
      parts.insert(parts.end(), bins.begin(), bins.end());
      const FeatureLevels f = ffe_->forward(concat_channels(parts));
      return {f.low, f.high, 1.0, 1.0};
    }
    case InputMode::ConcatToEvent: {
      check_bins(static_cast<std::size_t>(config_.n_bins));
      std::vector<Tensor> parts = {frame};
      parts.insert(parts.end(), bins.begin(), bins.end());
      const FeatureLevels e = efe_->forward({concat_channels(parts)});
      return {e.low, e.high, 1.0, 1.0};
    }
    case InputMode::Fused:
      break;
  }

  check_bins(static_cast<std::size_t>(config_.n_bins));
  const FeatureLevels f = ffe_->forward(frame);
  const FeatureLevels e = efe_->forward(bins);
  if (!config_.use_cdms) {
    return {add(f.low, e.low), add(f.high, e.high), 1.0, 1.0};
  }
  const Cdms::Output low = cdms_low_->forward(f.low, e.low);
  const Cdms::Output high = cdms_high_->forward(f.high, e.high);
  FusedFeatures out;
  out.low = low.fused;
  out.high = high.fused;
  out.weight_frame = 0.5 * (low.mean_weight_frame + high.mean_weight_frame);
  out.weight_event = 0.5 * (low.mean_weight_event + high.mean_weight_event);
  return out;
}

Tensor image_to_tensor(const Image8& image) {
  std::vector<double> data(image.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = image.pixels[i] / 255.0;
  return Tensor::from_data({1, 1, image.height, image.width}, std::move(data));
}

std::vector<Tensor> aggregated_to_tensors(const AggregatedFrames& agg) {
  std::vector<Tensor> out;
  for (int bin = 0; bin < agg.bins; ++bin) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(agg.channels) * agg.width * agg.height);
    for (int c = 0; c < agg.channels; ++c) {
      const Image8& f = agg.frame(bin, c);
      for (std::uint8_t v : f.pixels) data.push_back(v / 255.0);
    }
    out.push_back(
        Tensor::from_data({1, agg.channels, agg.height, agg.width}, std::move(data)));
  }
  return out;
}

}  // namespace fetrack
