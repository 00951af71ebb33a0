#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fetrack/event_stream.hpp"
#include "fetrack/loss.hpp"
#include "fetrack/model.hpp"

namespace fetrack {

struct TrainConfig {
  double lr_classifier = 1e-3;
  double lr_regressor = 1e-3;
  double lr_cdfi = 1e-4;
  double decay_factor = 0.2;
  int decay_every = 5;  // epochs between decays
  int epochs = 10;
  int batch_size = 4;
  int pairs_per_epoch = 16;
  int max_gap = 10;        // frames between reference and test
  int iou_candidates = 8;  // jittered boxes per pair for the IoU head
  double jitter_sigma = 0.1;  // fraction of box dims
  // Calibrated on synthetic data so beta*L_cls and L_b start on the same
  // order of magnitude (raw hinge-MSE sits near 1e2 at initialization).
  double beta = 0.01;
  std::uint64_t seed = 0;

  void check() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);

  double lr_factor(int epoch) const;
};

struct TrainingPair {
  int sequence = 0;
  int ref_frame = 0;
  int test_frame = 0;
};

using TrainDataset = std::vector<Sequence>;

TrainDataset load_dataset(const std::filesystem::path& dir);

/// Deterministic siamese pair sampling; the test frame follows the reference
/// within max_gap annotated frames.
std::vector<TrainingPair> sample_pairs(const TrainDataset& data, int count, std::uint64_t seed,
                                       int max_gap);

struct TrainStepInfo {
  LossReport losses;
  double grad_norm_cdfi = 0.0;
  double grad_norm_classifier = 0.0;
  double grad_norm_regressor = 0.0;
};

class Trainer {
 public:
  Trainer(TrackerModel& model, const TrainConfig& config);

  /// Forward both branches, compute the total objective, backprop and apply
  /// one Adam update. Returns the losses evaluated before the update.
  TrainStepInfo train_step(const TrainDataset& data, std::span<const TrainingPair> batch);

  /// Full loop: per-epoch sampling, lr decay, per-epoch checkpoints and a
  /// loss CSV (step,L_total,L_cls,L_b). Finishes with a BN recalibration
  /// pass so eval-mode statistics match the final weights. Returns all
  /// per-step losses.
  std::vector<LossReport> train(const TrainDataset& data,
                                const std::filesystem::path& out_dir);

  /// Forward-only passes in training mode that re-converge the BN running
  /// statistics onto the current weights.
  void calibrate_batchnorm(const TrainDataset& data, int passes = 40);

  int steps_taken() const { return step_; }

 private:
  TrackerModel& model_;
  TrainConfig config_;
  AdamOptimizer adam_;
  Rng jitter_rng_;
  int step_ = 0;
  int epoch_ = 0;

  friend class TrainerTestHook;
};

}  // namespace fetrack
