#include "fetrack/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fetrack/checkpoint.hpp"
#include "fetrack/metrics.hpp"

namespace fetrack {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::check() const {
  if (lr_classifier < 0.0 || lr_regressor < 0.0 || lr_cdfi < 0.0) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1 || pairs_per_epoch < 1) throw ConfigError("batching must be >= 1");
  if (max_gap < 1) throw ConfigError("max_gap must be >= 1");
  if (iou_candidates < 1) throw ConfigError("iou_candidates must be >= 1");
  if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
}

double TrainConfig::lr_factor(int epoch) const {
  return std::pow(decay_factor, static_cast<double>(epoch / decay_every));
}

std::string TrainConfig::to_json() const {
  json j;
  j["lr_classifier"] = lr_classifier;
  j["lr_regressor"] = lr_regressor;
  j["lr_cdfi"] = lr_cdfi;
  j["decay_factor"] = decay_factor;
  j["decay_every"] = decay_every;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["pairs_per_epoch"] = pairs_per_epoch;
  j["max_gap"] = max_gap;
  j["iou_candidates"] = iou_candidates;
  j["jitter_sigma"] = jitter_sigma;
  j["beta"] = beta;
  j["seed"] = seed;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad train config JSON: ") + e.what());
  }
  TrainConfig cfg;
  if (j.contains("lr_classifier")) cfg.lr_classifier = j["lr_classifier"].get<double>();
  if (j.contains("lr_regressor")) cfg.lr_regressor = j["lr_regressor"].get<double>();
  if (j.contains("lr_cdfi")) cfg.lr_cdfi = j["lr_cdfi"].get<double>();
  if (j.contains("decay_factor")) cfg.decay_factor = j["decay_factor"].get<double>();
  if (j.contains("decay_every")) cfg.decay_every = j["decay_every"].get<int>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("pairs_per_epoch")) cfg.pairs_per_epoch = j["pairs_per_epoch"].get<int>();
  if (j.contains("max_gap")) cfg.max_gap = j["max_gap"].get<int>();
  if (j.contains("iou_candidates")) cfg.iou_candidates = j["iou_candidates"].get<int>();
  if (j.contains("jitter_sigma")) cfg.jitter_sigma = j["jitter_sigma"].get<double>();
  if (j.contains("beta")) cfg.beta = j["beta"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.check();
  return cfg;
}

TrainDataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir)) throw NotFoundError("dataset directory " + dir.string() + " not found");
  std::vector<fs::path> seq_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
      seq_dirs.push_back(entry.path());
    }
  }
  std::sort(seq_dirs.begin(), seq_dirs.end());
  if (seq_dirs.empty()) throw DataError("no sequences under " + dir.string());
  TrainDataset data;
  for (const auto& p : seq_dirs) data.push_back(load_sequence(p));
  return data;
}

std::vector<TrainingPair> sample_pairs(const TrainDataset& data, int count, std::uint64_t seed,
                                       int max_gap) {
  if (data.empty()) throw DataError("sample_pairs: empty dataset");
  std::vector<std::vector<int>> annotated(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (const auto& [frame, box] : data[s].gt.boxes) annotated[s].push_back(frame);
    if (annotated[s].size() < 2) {
      throw DataError("sequence " + data[s].name + " has fewer than 2 annotated frames");
    }
  }

  Rng rng(seed ^ 0x70616972ULL);
  std::vector<TrainingPair> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(pairs.size()) < count) {
    const auto s = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
    const auto& frames = annotated[s];
    const auto i = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(frames.size()) - 2));
    std::vector<int> successors;
    for (std::size_t j = i + 1; j < frames.size(); ++j) {
      if (frames[j] - frames[i] > max_gap) break;
      successors.push_back(frames[j]);
    }
    if (successors.empty()) continue;
    const auto pick = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(successors.size()) - 1));
    pairs.push_back({static_cast<int>(s), frames[i], successors[pick]});
  }
  return pairs;
}

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

struct FrameInputs {
  Tensor frame;               // (1,1,H16,W16)
  std::vector<Tensor> bins;   // n x (1,cpb,H16,W16)
};

FrameInputs prepare_inputs(const Sequence& seq, int frame_index, const CdfiConfig& cfg) {
  const FrameRecord& rec = seq.frames[static_cast<std::size_t>(frame_index)];
  FrameInputs out;
  out.frame = TrackerModel::pad_to_16(image_to_tensor(rec.image), 0.0);

  const std::uint64_t period = frame_period_us(seq.meta.fps);
  std::uint64_t t_end = rec.t;
  const std::uint64_t t_start = t_end >= period ? t_end - period : 0;
  if (t_end <= t_start) t_end = t_start + 1;  // frame 0 has no preceding window
  AggregationParams params;
  params.tau = cfg.time_surface_tau;
  const AggregatedFrames agg = aggregate_interframe(seq.stream, t_start, t_end, cfg.n_bins,
                                                    cfg.aggregation, params);
  const double fill = neutral_fill(cfg.aggregation);
  for (Tensor& bin : aggregated_to_tensors(agg)) {
    out.bins.push_back(TrackerModel::pad_to_16(bin, fill));
  }
  return out;
}

Tensor stack_batch(std::vector<Tensor> parts) {
  return parts.size() == 1 ? parts[0] : concat_batch(parts);
}

double grad_norm(const std::vector<NamedTensor>& params, TrackerModel::Group group) {
  double acc = 0.0;
  for (const auto& nt : params) {
    if (TrackerModel::group_of(nt.name) != group) continue;
    auto t = nt.tensor;
    for (double g : t.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace

Trainer::Trainer(TrackerModel& model, const TrainConfig& config)
    : model_(model), config_(config), jitter_rng_(config.seed ^ 0x6a697474ULL) {
  config_.check();
}

namespace {

struct BatchInputs {
  Tensor ref_frames;
  Tensor test_frames;
  std::vector<Tensor> ref_bins;
  std::vector<Tensor> test_bins;
  Tensor ref_boxes;  // (B,4)
};

BatchInputs assemble_batch(const TrainDataset& data, std::span<const TrainingPair> batch,
                           const CdfiConfig& ccfg) {
  const int n_bins = ccfg.n_bins;
  std::vector<Tensor> ref_frames, test_frames;
  std::vector<std::vector<Tensor>> ref_bins(static_cast<std::size_t>(n_bins));
  std::vector<std::vector<Tensor>> test_bins(static_cast<std::size_t>(n_bins));
  std::vector<double> ref_box_data;
  for (const TrainingPair& pair : batch) {
    const Sequence& seq = data[static_cast<std::size_t>(pair.sequence)];
    FrameInputs ref = prepare_inputs(seq, pair.ref_frame, ccfg);
    FrameInputs test = prepare_inputs(seq, pair.test_frame, ccfg);
    ref_frames.push_back(ref.frame);
    test_frames.push_back(test.frame);
    for (int b = 0; b < n_bins; ++b) {
      ref_bins[static_cast<std::size_t>(b)].push_back(ref.bins[static_cast<std::size_t>(b)]);
      test_bins[static_cast<std::size_t>(b)].push_back(test.bins[static_cast<std::size_t>(b)]);
    }
    const BBox& rb = seq.gt.at(pair.ref_frame);
    ref_box_data.insert(ref_box_data.end(), {rb.x, rb.y, rb.w, rb.h});
  }
  BatchInputs out;
  out.ref_frames = stack_batch(std::move(ref_frames));
  out.test_frames = stack_batch(std::move(test_frames));
  for (int b = 0; b < n_bins; ++b) {
    out.ref_bins.push_back(stack_batch(std::move(ref_bins[static_cast<std::size_t>(b)])));
    out.test_bins.push_back(stack_batch(std::move(test_bins[static_cast<std::size_t>(b)])));
  }
  out.ref_boxes =
      Tensor::from_data({static_cast<std::int64_t>(batch.size()), 4}, std::move(ref_box_data));
  return out;
}

}  // namespace

TrainStepInfo Trainer::train_step(const TrainDataset& data, std::span<const TrainingPair> batch) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  model_.set_training(true);
  const CdfiConfig& ccfg = model_.config().cdfi;
  const HeadsConfig& hcfg = model_.config().heads;

  const BatchInputs in = assemble_batch(data, batch, ccfg);
  const Tensor& ref_boxes = in.ref_boxes;

  // Siamese forward.
  const FusedFeatures k_ref = model_.cdfi().forward(in.ref_frames, in.ref_bins);
  const FusedFeatures k_test = model_.cdfi().forward(in.test_frames, in.test_bins);

  // Classifier branch: filter from the reference, applied to the test frame.
  const Classifier& cls = model_.classifier();
  Tensor feat_ref = cls.features(k_ref.low);
  Tensor feat_test = cls.features(k_test.low);
  const auto map_h = static_cast<int>(feat_ref.dim(2));
  const auto map_w = static_cast<int>(feat_ref.dim(3));

  std::vector<Tensor> test_labels;
  const double off = hcfg.response_offset_px();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sequence& seq = data[static_cast<std::size_t>(batch[i].sequence)];
    const BBox& tb = seq.gt.at(batch[i].test_frame);
    test_labels.push_back(
        make_label(tb.cx() + off, tb.cy() + off, tb.w, tb.h, map_h, map_w, hcfg.stride_low).map);
  }
  Tensor test_label_batch = stack_batch(test_labels);

  // Train on the raw pooled filter: the features themselves must make the
  // correlation discriminative. Steepest-descent refinement stays a
  // tracking-time procedure.
  Tensor filter0 = cls.init_filter(feat_ref, ref_boxes);
  Tensor scores = cls.classify(feat_test, filter0);
  Tensor l_cls = classification_loss(scores, test_label_batch);

  // Regressor branch: jittered candidates around the test ground truth.
  const BboxRegressor& reg = model_.regressor();
  ModulationVectors v = reg.compute_modulation(k_ref.low, k_ref.high, ref_boxes);
  BboxRegressor::TestFeatures feats = reg.prepare_test(k_test.low, k_test.high);

  std::vector<Tensor> iou_preds;
  std::vector<double> iou_targets;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sequence& seq = data[static_cast<std::size_t>(batch[i].sequence)];
    const BBox& gt_box = seq.gt.at(batch[i].test_frame);
    const double img_w = seq.meta.width;
    const double img_h = seq.meta.height;
    std::vector<double> cand_data;
    for (int c = 0; c < config_.iou_candidates; ++c) {
      BBox cand = gt_box;
      if (c > 0) {
        cand.x += jitter_rng_.normal(0.0, config_.jitter_sigma * gt_box.w);
        cand.y += jitter_rng_.normal(0.0, config_.jitter_sigma * gt_box.h);
        cand.w = std::max(2.0, gt_box.w + jitter_rng_.normal(0.0, config_.jitter_sigma * gt_box.w));
        cand.h = std::max(2.0, gt_box.h + jitter_rng_.normal(0.0, config_.jitter_sigma * gt_box.h));
      }
      cand = cand.clamped(img_w, img_h, 2.0);
      cand_data.insert(cand_data.end(), {cand.x, cand.y, cand.w, cand.h});
      iou_targets.push_back(iou(cand, gt_box));
    }
    Tensor cand_boxes = Tensor::from_data({config_.iou_candidates, 4}, std::move(cand_data));
    BboxRegressor::TestFeatures feats_i{slice_batch(feats.low, static_cast<std::int64_t>(i)),
                                        slice_batch(feats.high, static_cast<std::int64_t>(i))};
    ModulationVectors v_i{slice_batch(v.low, static_cast<std::int64_t>(i)),
                          slice_batch(v.high, static_cast<std::int64_t>(i))};
    iou_preds.push_back(reg.predict_iou(feats_i, v_i, cand_boxes));
  }
  Tensor pred_batch = stack_batch(iou_preds);
  Tensor target_batch =
      Tensor::from_data({static_cast<std::int64_t>(iou_targets.size()), 1}, iou_targets);
  Tensor l_b = bbox_loss(pred_batch, target_batch);

  Tensor l_tot = total_loss(l_cls, l_b, config_.beta);

  TrainStepInfo info;
  info.losses.cls = l_cls.item();
  info.losses.bbox = l_b.item();
  info.losses.total = l_tot.item();
  info.losses.beta = config_.beta;
  if (!std::isfinite(info.losses.total)) {
    throw NumericsError("non-finite loss at step " + std::to_string(step_) +
                        " (L_cls=" + std::to_string(info.losses.cls) +
                        ", L_b=" + std::to_string(info.losses.bbox) + ")");
  }

  l_tot.backward();

  const auto params = model_.named_parameters();
  info.grad_norm_cdfi = grad_norm(params, TrackerModel::Group::Cdfi);
  info.grad_norm_classifier = grad_norm(params, TrackerModel::Group::Classifier);
  info.grad_norm_regressor = grad_norm(params, TrackerModel::Group::Regressor);

  const double factor = config_.lr_factor(epoch_);
  std::vector<double> rates;
  rates.reserve(params.size());
  for (const auto& nt : params) {
    switch (TrackerModel::group_of(nt.name)) {
      case TrackerModel::Group::Classifier:
        rates.push_back(config_.lr_classifier * factor);
        break;
      case TrackerModel::Group::Regressor:
        rates.push_back(config_.lr_regressor * factor);
        break;
      case TrackerModel::Group::Cdfi:
        rates.push_back(config_.lr_cdfi * factor);
        break;
    }
  }
  adam_.step(params, rates);
  model_.zero_grad();
  ++step_;
  return info;
}

void Trainer::calibrate_batchnorm(const TrainDataset& data, int passes) {
  model_.set_training(true);
  NoGradGuard no_grad;
  Rng calib_rng(config_.seed ^ 0x626e63616cULL);
  const CdfiConfig& ccfg = model_.config().cdfi;
  for (int p = 0; p < passes; ++p) {
    const auto pairs =
        sample_pairs(data, config_.batch_size, calib_rng.next_u64(), config_.max_gap);
    const BatchInputs in = assemble_batch(data, pairs, ccfg);
    (void)model_.cdfi().forward(in.ref_frames, in.ref_bins);
    (void)model_.cdfi().forward(in.test_frames, in.test_bins);
  }
}

std::vector<LossReport> Trainer::train(const TrainDataset& data, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "loss.csv");
  if (!csv) throw IoError("cannot write loss.csv under " + out_dir.string());
  csv << "step,L_total,L_cls,L_b\n";

  std::vector<LossReport> history;
  Rng epoch_rng(config_.seed ^ 0x65706f63ULL);
  for (epoch_ = 0; epoch_ < config_.epochs; ++epoch_) {
    const auto pairs =
        sample_pairs(data, config_.pairs_per_epoch, epoch_rng.next_u64(), config_.max_gap);
    for (std::size_t off = 0; off < pairs.size(); off += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t len =
          std::min<std::size_t>(static_cast<std::size_t>(config_.batch_size), pairs.size() - off);
      const TrainStepInfo info =
          train_step(data, std::span<const TrainingPair>(pairs.data() + off, len));
      history.push_back(info.losses);
      csv << step_ << "," << info.losses.total << "," << info.losses.cls << ","
          << info.losses.bbox << "\n";
    }
    char name[48];
    std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.fetw", epoch_ + 1);
    save_checkpoint(out_dir / name, model_.named_state());
  }
  if (config_.epochs > 0) calibrate_batchnorm(data);
  save_checkpoint(out_dir / "model.fetw", model_.named_state());
  model_.config().save(out_dir / "model.json");
  return history;
}

}  // namespace fetrack
