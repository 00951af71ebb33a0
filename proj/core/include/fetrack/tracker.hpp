#pragma once

#include <vector>

#include "fetrack/event_stream.hpp"
#include "fetrack/model.hpp"

namespace fetrack {

struct TrackerConfig {
  int candidates = 10;            // jittered boxes per frame
  int refine_steps = 5;           // IoU gradient-ascent steps per candidate
  double refine_step_frac = 0.01; // step size as a fraction of box dims
  int max_halvings = 4;           // backtracking retries per step
  int top_m = 3;                  // refined boxes averaged into the output
  double candidate_jitter = 0.05; // jitter sigma as a fraction of box dims
  double size_damping = 0.25;     // blend of refined vs previous box extents
  double max_scale_change = 1.05; // per-frame extent clamp, both directions
  int reoptimize_period = 0;      // re-run the filter optimizer every U frames; 0 = never
  std::uint64_t seed = 0;
};

/// Gradient ascent on the predicted IoU with backtracking (halve the step on
/// a decrease, give up after max_halvings). The recorded trace of predictions
/// is non-decreasing.
struct RefineResult {
  BBox box;
  double predicted_iou = 0.0;
  std::vector<double> trace;
};
RefineResult refine_box(const BboxRegressor& regressor,
                        const BboxRegressor::TestFeatures& feats, const ModulationVectors& v,
                        const BBox& start, int image_w, int image_h,
                        const TrackerConfig& config);

/// Online tracking state: modulation vectors and an optimized target filter
/// from the reference frame, plus the previous box.
class Tracker {
 public:
  Tracker(TrackerModel& model, const TrackerConfig& config);

  void init(const Image8& frame, const EventStream& stream, std::uint64_t t_start,
            std::uint64_t t_end, const BBox& box);

  /// Test hook: force a degenerate state (e.g. an all-zero filter).
  void override_filter(const Tensor& filter) { filter_ = filter; }
  const Tensor& filter() const { return filter_; }
  const ModulationVectors& modulation() const { return modulation_; }

  struct StepOutput {
    BBox box;
    double confidence = 0.0;
    double weight_frame = 1.0;
    double weight_event = 1.0;
  };
  StepOutput step(const Image8& frame, const EventStream& stream, std::uint64_t t_start,
                  std::uint64_t t_end);

  const BBox& current_box() const { return previous_box_; }

 private:
  FusedFeatures forward_inputs(const Image8& frame, const EventStream& stream,
                               std::uint64_t t_start, std::uint64_t t_end) const;

  TrackerModel& model_;
  TrackerConfig config_;
  Rng rng_;
  Tensor filter_;
  ModulationVectors modulation_;
  Tensor ref_feat_;   // classifier features of the reference, for re-optimization
  Tensor ref_label_;
  BBox previous_box_;
  int frame_count_ = 0;
  int image_w_ = 0;
  int image_h_ = 0;
  bool initialized_ = false;
};

struct TrackedFrame {
  int frame_index = 0;
  BBox box;
  double confidence = 0.0;
  double weight_frame = 1.0;
  double weight_event = 1.0;
};

/// Init on frame 0 (requires ground truth there), then one step per later
/// frame; frame 0 echoes the ground truth.
std::vector<TrackedFrame> track_sequence(TrackerModel& model, const Sequence& seq,
                                         const TrackerConfig& config = {});

/// Prediction file lines: frame_index,x,y,w,h,confidence,w_f,w_e.
void write_predictions(const std::filesystem::path& path,
                       const std::vector<TrackedFrame>& frames);
std::map<int, BBox> read_predictions(const std::filesystem::path& path);

}  // namespace fetrack
