#include "fetrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fetrack/heads.hpp"

namespace fetrack {

namespace {

double neutral_fill(AggregationMethod method) {
  switch (method) {
    case AggregationMethod::LatestPolarity:
    case AggregationMethod::EventFrame:
    case AggregationMethod::ZhuVoxel:
      return 127.0 / 255.0;
    default:
      return 0.0;
  }
}

}  // namespace

RefineResult refine_box(const BboxRegressor& regressor,
                        const BboxRegressor::TestFeatures& feats, const ModulationVectors& v,
                        const BBox& start, int image_w, int image_h,
                        const TrackerConfig& config) {
  auto predict = [&](const BBox& b) {
    NoGradGuard ng;
    return regressor.predict_iou(feats, v, box_to_tensor(b)).item();
  };
  RefineResult result;
  result.box = start;
  result.predicted_iou = predict(start);
  result.trace.push_back(result.predicted_iou);

  for (int it = 0; it < config.refine_steps; ++it) {
    Tensor box_t = box_to_tensor(result.box, /*requires_grad=*/true);
    Tensor iou_pred = regressor.predict_iou(feats, v, box_t);
    iou_pred.backward();
    const auto g = box_t.grad();
    // Steepest direction in box-relative coordinates.
    double rel[4] = {g[0] * result.box.w, g[1] * result.box.h, g[2] * result.box.w,
                     g[3] * result.box.h};
    const double norm =
        std::sqrt(rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2] + rel[3] * rel[3]);
    if (norm < 1e-12) break;
    for (double& x : rel) x /= norm;

    double alpha = config.refine_step_frac;
    bool moved = false;
    for (int halving = 0; halving <= config.max_halvings; ++halving) {
      const BBox& b = result.box;
      BBox trial{b.x + alpha * b.w * rel[0], b.y + alpha * b.h * rel[1],
                 std::max(2.0, b.w + alpha * b.w * rel[2]),
                 std::max(2.0, b.h + alpha * b.h * rel[3])};
      trial = trial.clamped(image_w, image_h, 2.0);
      const double trial_value = predict(trial);
      if (trial_value >= result.predicted_iou) {
        result.box = trial;
        result.predicted_iou = trial_value;
        result.trace.push_back(trial_value);
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
  }
  return result;
}

Tracker::Tracker(TrackerModel& model, const TrackerConfig& config)
    : model_(model), config_(config), rng_(config.seed ^ 0x747261636bULL) {
  model_.set_training(false);
}

FusedFeatures Tracker::forward_inputs(const Image8& frame, const EventStream& stream,
                                      std::uint64_t t_start, std::uint64_t t_end) const {
  if (t_end <= t_start) t_end = t_start + 1;  // frame 0 has no preceding window
  const CdfiConfig& cfg = model_.config().cdfi;
  Tensor frame_t = TrackerModel::pad_to_16(image_to_tensor(frame), 0.0);
  AggregationParams params;
  params.tau = cfg.time_surface_tau;
  const AggregatedFrames agg =
      aggregate_interframe(stream, t_start, t_end, cfg.n_bins, cfg.aggregation, params);
  std::vector<Tensor> bins;
  const double fill = neutral_fill(cfg.aggregation);
  for (Tensor& bin : aggregated_to_tensors(agg)) {
    bins.push_back(TrackerModel::pad_to_16(bin, fill));
  }
  return model_.cdfi().forward(frame_t, bins);
}

void Tracker::init(const Image8& frame, const EventStream& stream, std::uint64_t t_start,
                   std::uint64_t t_end, const BBox& box) {
  require_valid(box, "Tracker::init");
  NoGradGuard no_grad;
  image_w_ = frame.width;
  image_h_ = frame.height;

  const FusedFeatures k = forward_inputs(frame, stream, t_start, t_end);
  const Classifier& cls = model_.classifier();
  const HeadsConfig& hcfg = model_.config().heads;

  ref_feat_ = cls.features(k.low);
  const double off = hcfg.response_offset_px();
  const GaussianLabel label =
      make_label(box.cx() + off, box.cy() + off, box.w, box.h,
                 static_cast<int>(ref_feat_.dim(2)), static_cast<int>(ref_feat_.dim(3)),
                 hcfg.stride_low);
  ref_label_ = label.map;

  Tensor boxes = box_to_tensor(box);
  Tensor filter0 = cls.init_filter(ref_feat_, boxes);
  filter_ = cls.optimize_filter(filter0, ref_feat_, ref_label_, hcfg.filter_opt_steps);
  modulation_ = model_.regressor().compute_modulation(k.low, k.high, boxes);

  previous_box_ = box;
  frame_count_ = 0;
  initialized_ = true;
}

Tracker::StepOutput Tracker::step(const Image8& frame, const EventStream& stream,
                                  std::uint64_t t_start, std::uint64_t t_end) {
  if (!initialized_) throw StateError("Tracker::step before init");
  const HeadsConfig& hcfg = model_.config().heads;
  const Classifier& cls = model_.classifier();
  const BboxRegressor& reg = model_.regressor();

  StepOutput out;
  BboxRegressor::TestFeatures feats;
  double best_score = 0.0;
  double cx = previous_box_.cx();
  double cy = previous_box_.cy();
  {
    NoGradGuard no_grad;
    const FusedFeatures k = forward_inputs(frame, stream, t_start, t_end);
    out.weight_frame = k.weight_frame;
    out.weight_event = k.weight_event;

    const Tensor scores = cls.classify(cls.features(k.low), filter_);
    const auto sv = scores.data();
    double max_v = sv[0], min_v = sv[0];
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < sv.size(); ++i) {
      if (sv[i] > max_v) {
        max_v = sv[i];
        argmax = i;
      }
      min_v = std::min(min_v, sv[i]);
    }
    best_score = max_v;
    if (max_v - min_v > 1e-12) {
      // Flat maps keep the previous center (deterministic tie-break).
      const auto w_cells = static_cast<std::int64_t>(scores.dim(3));
      const auto h_cells = static_cast<std::int64_t>(scores.dim(2));
      const auto row = static_cast<std::int64_t>(argmax) / w_cells;
      const auto col = static_cast<std::int64_t>(argmax) % w_cells;

      // Sub-cell peak: scale-invariant centroid of the 3x3 window around the
      // argmax (weights are scores above the window minimum).
      double window_min = max_v;
      for (std::int64_t r = std::max<std::int64_t>(0, row - 1);
           r <= std::min(h_cells - 1, row + 1); ++r) {
        for (std::int64_t c = std::max<std::int64_t>(0, col - 1);
             c <= std::min(w_cells - 1, col + 1); ++c) {
          window_min = std::min(window_min, sv[static_cast<std::size_t>(r * w_cells + c)]);
        }
      }
      double weight_sum = 0.0, row_acc = 0.0, col_acc = 0.0;
      for (std::int64_t r = std::max<std::int64_t>(0, row - 1);
           r <= std::min(h_cells - 1, row + 1); ++r) {
        for (std::int64_t c = std::max<std::int64_t>(0, col - 1);
             c <= std::min(w_cells - 1, col + 1); ++c) {
          const double wv = sv[static_cast<std::size_t>(r * w_cells + c)] - window_min;
          weight_sum += wv;
          row_acc += wv * static_cast<double>(r);
          col_acc += wv * static_cast<double>(c);
        }
      }
      const double peak_row = weight_sum > 0.0 ? row_acc / weight_sum : static_cast<double>(row);
      const double peak_col = weight_sum > 0.0 ? col_acc / weight_sum : static_cast<double>(col);
      // Cell c's receptive field centers at stride*c + 0.5; even filters add
      // a half-cell correlation bias on top.
      const double off = hcfg.response_offset_px();
      cx = peak_col * hcfg.stride_low + 0.5 - off;
      cy = peak_row * hcfg.stride_low + 0.5 - off;
    }
    feats = reg.prepare_test(k.low, k.high);
  }

  const double w = previous_box_.w;
  const double h = previous_box_.h;
  BBox base = BBox{cx - 0.5 * w, cy - 0.5 * h, w, h}.clamped(image_w_, image_h_, 2.0);

  std::vector<std::pair<double, BBox>> refined;
  for (int c = 0; c < config_.candidates; ++c) {
    BBox cand = base;
    if (c > 0) {
      cand.x += rng_.normal(0.0, config_.candidate_jitter * w);
      cand.y += rng_.normal(0.0, config_.candidate_jitter * h);
      cand.w = std::max(2.0, w + rng_.normal(0.0, config_.candidate_jitter * w));
      cand.h = std::max(2.0, h + rng_.normal(0.0, config_.candidate_jitter * h));
      cand = cand.clamped(image_w_, image_h_, 2.0);
    }
    const RefineResult result =
        refine_box(reg, feats, modulation_, cand, image_w_, image_h_, config_);
    refined.emplace_back(result.predicted_iou, result.box);
  }

  std::stable_sort(refined.begin(), refined.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const int m = std::min<int>(config_.top_m, static_cast<int>(refined.size()));
  BBox avg{0, 0, 0, 0};
  double avg_cx = 0.0, avg_cy = 0.0;
  for (int i = 0; i < m; ++i) {
    avg_cx += refined[static_cast<std::size_t>(i)].second.cx();
    avg_cy += refined[static_cast<std::size_t>(i)].second.cy();
    avg.w += refined[static_cast<std::size_t>(i)].second.w;
    avg.h += refined[static_cast<std::size_t>(i)].second.h;
  }
  avg_cx /= m;
  avg_cy /= m;
  avg.w /= m;
  avg.h /= m;

  // Damp extent updates and clamp the per-frame scale change; a weakly
  // trained IoU head must not be able to inflate the box run away.
  const double d = std::clamp(config_.size_damping, 0.0, 1.0);
  double new_w = (1.0 - d) * previous_box_.w + d * avg.w;
  double new_h = (1.0 - d) * previous_box_.h + d * avg.h;
  const double s = std::max(1.0, config_.max_scale_change);
  new_w = std::clamp(new_w, previous_box_.w / s, previous_box_.w * s);
  new_h = std::clamp(new_h, previous_box_.h / s, previous_box_.h * s);
  avg = BBox{avg_cx - 0.5 * new_w, avg_cy - 0.5 * new_h, new_w, new_h};
  out.box = avg.clamped(image_w_, image_h_, 2.0);
  out.confidence = best_score;
  previous_box_ = out.box;

  ++frame_count_;
  if (config_.reoptimize_period > 0 && frame_count_ % config_.reoptimize_period == 0) {
    NoGradGuard ng;
    filter_ = model_.classifier().optimize_filter(
        filter_, ref_feat_, ref_label_, model_.config().heads.filter_opt_steps);
  }
  return out;
}

std::vector<TrackedFrame> track_sequence(TrackerModel& model, const Sequence& seq,
                                         const TrackerConfig& config) {
  if (seq.frames.empty()) throw DataError("track_sequence: empty sequence");
  if (!seq.gt.has(0)) throw DataError("track_sequence: no ground truth for frame 0");

  const std::uint64_t period = frame_period_us(seq.meta.fps);
  Tracker tracker(model, config);

  std::vector<TrackedFrame> out;
  const std::uint64_t t0 = seq.frames[0].t;
  std::uint64_t init_start = t0 >= period ? t0 - period : 0;
  std::uint64_t init_end = t0;
  // Sequences often carry no events before the first frame; fall back to the
  // first inter-frame window so the reference sees event statistics
  // comparable to the tracked frames.
  if (slice(seq.stream, init_start, init_end, true).empty() && seq.frames.size() > 1) {
    init_start = seq.frames[0].t;
    init_end = seq.frames[1].t;
  }
  tracker.init(seq.frames[0].image, seq.stream, init_start, init_end, seq.gt.at(0));
  out.push_back({0, seq.gt.at(0), 1.0, 1.0, 1.0});

  for (std::size_t j = 1; j < seq.frames.size(); ++j) {
    const auto result = tracker.step(seq.frames[j].image, seq.stream, seq.frames[j - 1].t,
                                     seq.frames[j].t);
    out.push_back({static_cast<int>(j), result.box, result.confidence, result.weight_frame,
                   result.weight_event});
  }
  return out;
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<TrackedFrame>& frames) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write predictions " + path.string());
  char buf[256];
  for (const TrackedFrame& f : frames) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.4f,%.4f\n", f.frame_index,
                  f.box.x, f.box.y, f.box.w, f.box.h, f.confidence, f.weight_frame,
                  f.weight_event);
    out << buf;
  }
}

std::map<int, BBox> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open predictions " + path.string());
  std::map<int, BBox> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int idx = 0;
    double x, y, w, h;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &idx, &x, &y, &w, &h) != 5) {
      throw ParseError("malformed prediction in " + path.string(), line_no);
    }
    out[idx] = BBox{x, y, w, h};
  }
  return out;
}

}  // namespace fetrack
