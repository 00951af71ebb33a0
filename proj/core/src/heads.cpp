#include "fetrack/heads.hpp"

#include <cmath>

namespace fetrack {

BboxRegressor::BboxRegressor(int channels_low, int channels_high, const HeadsConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg_.q_dim <= 0) cfg_.q_dim = 2 * channels_high;
  if (cfg_.feat_dim <= 0) cfg_.feat_dim = 2 * channels_high;

  conv_ref_low_ = &add_module(
      "conv_ref_low", std::make_unique<Conv2d>(channels_low, channels_low, 3, 1, 1, true, rng));
  conv_ref_high_ = &add_module(
      "conv_ref_high", std::make_unique<Conv2d>(channels_high, channels_high, 3, 1, 1, true, rng));
  conv_test_low1_ = &add_module(
      "conv_test_low1", std::make_unique<Conv2d>(channels_low, channels_low, 3, 1, 1, true, rng));
  conv_test_low2_ = &add_module(
      "conv_test_low2", std::make_unique<Conv2d>(channels_low, channels_low, 3, 1, 1, true, rng));
  conv_test_high1_ = &add_module(
      "conv_test_high1",
      std::make_unique<Conv2d>(channels_high, channels_high, 3, 1, 1, true, rng));
  conv_test_high2_ = &add_module(
      "conv_test_high2",
      std::make_unique<Conv2d>(channels_high, channels_high, 3, 1, 1, true, rng));

  const int pooled_low = channels_low * cfg_.pool_low * cfg_.pool_low;
  const int pooled_high = channels_high * cfg_.pool_high * cfg_.pool_high;
  fc_q_ = &add_module("fc_q", std::make_unique<Linear>(pooled_low, cfg_.q_dim, true, rng));
  const int q_full = cfg_.q_dim + pooled_high;
  fc_v_low_ = &add_module("fc_v_low", std::make_unique<Linear>(q_full, channels_low, true, rng));
  fc_v_high_ =
      &add_module("fc_v_high", std::make_unique<Linear>(q_full, channels_high, true, rng));
  fc_test_low_ =
      &add_module("fc_test_low", std::make_unique<Linear>(pooled_low, cfg_.feat_dim, false, rng));
  fc_test_high_ = &add_module("fc_test_high",
                              std::make_unique<Linear>(pooled_high, cfg_.feat_dim, false, rng));
  fc_iou_ = &add_module("fc_iou", std::make_unique<Linear>(2 * cfg_.feat_dim, 1, true, rng));

  // Damp the output layer so initial IoU predictions start near zero; the
  // regression loss then begins on the same scale as its [0,1] targets.
  for (auto& nt : named_parameters()) {
    if (nt.name == "fc_iou.weight") {
      for (double& v : nt.tensor.data()) v *= 0.05;
    }
  }
}

namespace {

// Feature cell c of a stride-s map has its receptive field centered at image
// position s*c + 0.5; pooling maps image coords accordingly.
double rf_offset(double scale) { return 0.5 - 0.5 * scale; }

}  // namespace

ModulationVectors BboxRegressor::compute_modulation(const Tensor& k_low_ref,
                                                    const Tensor& k_high_ref,
                                                    const Tensor& boxes_ref) const {
  const double scale_low = 1.0 / cfg_.stride_low;
  const double scale_high = 1.0 / cfg_.stride_high;
  Tensor pooled_low = region_pool(conv_ref_low_->forward(k_low_ref), boxes_ref, cfg_.pool_low,
                                  cfg_.pool_low, scale_low, 2, rf_offset(scale_low));
  Tensor pooled_high = region_pool(conv_ref_high_->forward(k_high_ref), boxes_ref, cfg_.pool_high,
                                   cfg_.pool_high, scale_high, 2, rf_offset(scale_high));
  Tensor q = concat_channels({fc_q_->forward(flatten2(pooled_low)), flatten2(pooled_high)});
  return {fc_v_low_->forward(q), fc_v_high_->forward(q)};
}

BboxRegressor::TestFeatures BboxRegressor::prepare_test(const Tensor& k_low_test,
                                                        const Tensor& k_high_test) const {
  return {conv_test_low2_->forward(conv_test_low1_->forward(k_low_test)),
          conv_test_high2_->forward(conv_test_high1_->forward(k_high_test))};
}

Tensor BboxRegressor::predict_iou(const TestFeatures& feats, const ModulationVectors& v,
                                  const Tensor& boxes) const {
  const double scale_low = 1.0 / cfg_.stride_low;
  const double scale_high = 1.0 / cfg_.stride_high;
  const std::int64_t r = boxes.dim(0);

  Tensor pooled_low = region_pool(feats.low, boxes, cfg_.pool_low, cfg_.pool_low, scale_low, 2,
                                  rf_offset(scale_low));
  Tensor pooled_high = region_pool(feats.high, boxes, cfg_.pool_high, cfg_.pool_high, scale_high,
                                   2, rf_offset(scale_high));

  // Per-channel modulation, broadcast over the pooled grid. The modulation
  // batch is 1 (one reference) or R (one per candidate).
  Tensor v_low = reshape(v.low, {v.low.dim(0), v.low.dim(1), 1, 1});
  Tensor v_high = reshape(v.high, {v.high.dim(0), v.high.dim(1), 1, 1});
  if (v_low.dim(0) != 1 && v_low.dim(0) != r) {
    throw ShapeError("predict_iou: modulation batch mismatch");
  }
  Tensor gated_low = flatten2(mul(pooled_low, v_low));
  Tensor gated_high = flatten2(mul(pooled_high, v_high));
  Tensor joint = concat_channels(
      {fc_test_low_->forward(gated_low), fc_test_high_->forward(gated_high)});
  return fc_iou_->forward(joint);
}

GaussianLabel make_label(double center_x_px, double center_y_px, double target_w, double target_h,
                         int map_h, int map_w, int stride) {
  GaussianLabel label;
  // Cell (r, c) has its receptive field centered at image position
  // (stride * c + 0.5, stride * r + 0.5).
  const double col = (center_x_px - 0.5) / stride;
  const double row = (center_y_px - 0.5) / stride;
  label.center_col = static_cast<int>(std::clamp<long>(std::lround(col), 0, map_w - 1));
  label.center_row = static_cast<int>(std::clamp<long>(std::lround(row), 0, map_h - 1));
  label.sigma = std::max(1.0, 0.25 * std::sqrt(target_w * target_h) / stride);

  std::vector<double> data(static_cast<std::size_t>(map_h) * map_w);
  const double inv = 1.0 / (2.0 * label.sigma * label.sigma);
  for (int r = 0; r < map_h; ++r) {
    for (int c = 0; c < map_w; ++c) {
      const double dr = r - label.center_row;
      const double dc = c - label.center_col;
      data[static_cast<std::size_t>(r) * map_w + c] = std::exp(-(dr * dr + dc * dc) * inv);
    }
  }
  label.map = Tensor::from_data({1, 1, map_h, map_w}, std::move(data));
  return label;
}

Classifier::Classifier(int channels_low, const HeadsConfig& cfg, Rng& rng) : cfg_(cfg) {
  feat_ = &add_module("feat",
                      std::make_unique<Conv2d>(channels_low, channels_low, 3, 1, 1, true, rng));
}

Tensor Classifier::features(const Tensor& k_low) const { return feat_->forward(k_low); }

Tensor Classifier::init_filter(const Tensor& feat_ref, const Tensor& boxes_ref) const {
  const double scale = 1.0 / cfg_.stride_low;
  return region_pool(feat_ref, boxes_ref, cfg_.filter_size, cfg_.filter_size, scale, 2,
                     rf_offset(scale));
}

Tensor Classifier::classify(const Tensor& feat, const Tensor& filter) const {
  if (filter.rank() != 4) throw ShapeError("classify: filter must be (R,C,k,k)");
  const std::int64_t r = filter.dim(0);
  if (feat.dim(0) != 1 && feat.dim(0) != r) {
    throw ShapeError("classify: feature batch must be 1 or match filter count");
  }
  const int k = static_cast<int>(filter.dim(2));
  const int pad = k / 2;
  const std::int64_t h = feat.dim(2), w = feat.dim(3);

  std::vector<Tensor> maps;
  for (std::int64_t i = 0; i < r; ++i) {
    Tensor f = feat.dim(0) == 1 ? feat : slice_batch(feat, i);
    Tensor kernel = filter.dim(0) == 1 && r == 1 ? filter : slice_batch(filter, i);
    Tensor scores = conv2d(f, kernel, Tensor(), 1, pad);
    // Even filters produce one extra row/column under symmetric padding.
    if (scores.dim(2) != h || scores.dim(3) != w) {
      scores = crop_spatial(scores, 0, h, 0, w);
    }
    maps.push_back(scores);
  }
  return maps.size() == 1 ? maps[0] : concat_batch(maps);
}

Tensor Classifier::optimize_filter(const Tensor& filter, const Tensor& feat_ref,
                                   const Tensor& label, int steps,
                                   std::vector<double>* loss_trace) const {
  if (steps < 0) throw ConfigError("optimize_filter: steps must be >= 0");
  const std::int64_t r = filter.dim(0);
  constexpr double kEps = 1e-8;

  std::vector<Tensor> refined;
  for (std::int64_t s = 0; s < r; ++s) {
    Tensor feat_s = feat_ref.dim(0) == 1 ? feat_ref.clone_detached()
                                         : [&] {
                                             NoGradGuard ng;
                                             return slice_batch(feat_ref, s).clone_detached();
                                           }();
    Tensor label_s = label.dim(0) == 1 ? label.clone_detached()
                                       : [&] {
                                           NoGradGuard ng;
                                           return slice_batch(label, s).clone_detached();
                                         }();
    Tensor f = [&] {
      NoGradGuard ng;
      return (r == 1 ? filter : slice_batch(filter, s)).clone_detached(true);
    }();
    const double n_cells = static_cast<double>(label_s.numel());

    const double lambda = cfg_.filter_reg;
    for (int step = 0; step < steps; ++step) {
      // The optimizer builds its own small graphs even when the caller runs
      // under NoGrad (tracking init).
      EnableGradGuard enable_grad;
      f.zero_grad();
      Tensor scores = classify(feat_s, f);
      Tensor resid = hinge_residual(scores, label_s);
      // L_opt = 1/(2N) sum r^2 + lambda/2 ||f||^2; its gradient under the
      // frozen hinge mask is the Gauss-Newton steepest-descent direction.
      Tensor loss = scale(sum(square(resid)), 1.0 / (2.0 * n_cells));
      double f_norm2 = 0.0;
      for (double v : f.data()) f_norm2 += v * v;
      if (loss_trace) loss_trace->push_back(loss.item() + 0.5 * lambda * f_norm2);
      loss.backward();

      std::vector<double> g(f.grad().begin(), f.grad().end());
      {
        auto fv = f.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda * fv[i];
      }
      double g_norm2 = 0.0;
      for (double v : g) g_norm2 += v * v;

      std::vector<bool> active(static_cast<std::size_t>(scores.numel()));
      for (std::int64_t i = 0; i < scores.numel(); ++i) {
        active[static_cast<std::size_t>(i)] =
            label_s.data()[static_cast<std::size_t>(i)] > 0.05 ||
            scores.data()[static_cast<std::size_t>(i)] > 0.0;
      }

      // Curvature along g: ||J g||^2 + lambda ||g||^2, mask frozen.
      double jg_norm2 = 0.0;
      {
        NoGradGuard ng;
        Tensor g_tensor = Tensor::from_data(f.shape(), g);
        Tensor jg = classify(feat_s, g_tensor);
        for (std::int64_t i = 0; i < jg.numel(); ++i) {
          if (active[static_cast<std::size_t>(i)]) {
            const double v = jg.data()[static_cast<std::size_t>(i)];
            jg_norm2 += v * v;
          }
        }
        jg_norm2 = jg_norm2 / n_cells + lambda * g_norm2;
      }

      const double alpha = jg_norm2 < kEps ? 0.1 : g_norm2 / (jg_norm2 + kEps);
      auto fv = f.data();
      for (std::size_t i = 0; i < fv.size(); ++i) fv[i] -= alpha * g[i];

      if (loss_trace) {
        // Frozen-model loss at the new filter: same mask, same targets.
        NoGradGuard ng;
        Tensor new_scores = classify(feat_s, f);
        double acc = 0.0;
        for (std::int64_t i = 0; i < new_scores.numel(); ++i) {
          if (!active[static_cast<std::size_t>(i)]) continue;
          const double z = label_s.data()[static_cast<std::size_t>(i)];
          const double rv = z > 0.05 ? new_scores.data()[static_cast<std::size_t>(i)] - z
                                     : new_scores.data()[static_cast<std::size_t>(i)];
          acc += rv * rv;
        }
        double f_new_norm2 = 0.0;
        for (double v : fv) f_new_norm2 += v * v;
        loss_trace->push_back(acc / (2.0 * n_cells) + 0.5 * lambda * f_new_norm2);
      }
    }
    refined.push_back(f.clone_detached());
  }
  NoGradGuard ng;
  return refined.size() == 1 ? refined[0] : concat_batch(refined);
}

}  // namespace fetrack
