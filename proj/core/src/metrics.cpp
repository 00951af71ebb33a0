#include "fetrack/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "fetrack/errors.hpp"

namespace fetrack {

using nlohmann::json;

double iou(const BBox& a, const BBox& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

double center_error(const BBox& a, const BBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

std::vector<double> success_curve(const std::vector<double>& ious) {
  if (ious.empty()) throw DataError("success_curve: no samples");
  std::vector<double> curve(101);
  for (int i = 0; i <= 100; ++i) {
    const double tau = i / 100.0;
    std::size_t hits = 0;
    for (double v : ious) {
      if (v > tau) ++hits;
    }
    curve[static_cast<std::size_t>(i)] = static_cast<double>(hits) / ious.size();
  }
  return curve;
}

std::vector<double> precision_curve(const std::vector<double>& errors) {
  if (errors.empty()) throw DataError("precision_curve: no samples");
  std::vector<double> curve(51);
  for (int d = 0; d <= 50; ++d) {
    std::size_t hits = 0;
    for (double v : errors) {
      if (v <= d) ++hits;
    }
    curve[static_cast<std::size_t>(d)] = static_cast<double>(hits) / errors.size();
  }
  return curve;
}

double op_t(const std::vector<double>& ious, double threshold) {
  if (ious.empty()) return 0.0;
  std::size_t hits = 0;
  for (double v : ious) {
    if (v > threshold) ++hits;
  }
  return static_cast<double>(hits) / ious.size();
}

SequenceEval evaluate_sequence(const std::vector<double>& ious,
                               const std::vector<double>& errors) {
  if (ious.size() != errors.size()) throw DataError("evaluate_sequence: length mismatch");
  SequenceEval eval;
  eval.ious = ious;
  eval.center_errors = errors;
  eval.success = success_curve(ious);
  eval.precision = precision_curve(errors);
  double acc = 0.0;
  for (double v : eval.success) acc += v;
  eval.rsr = acc / eval.success.size();
  eval.rpr = eval.precision[20];
  eval.op50 = op_t(ious, 0.50);
  eval.op75 = op_t(ious, 0.75);
  return eval;
}

EvalReport evaluate(const std::vector<EvalInput>& inputs) {
  if (inputs.empty()) throw DataError("evaluate: no sequences");
  EvalReport report;
  std::map<std::string, std::vector<const SequenceEval*>> groups;

  for (const EvalInput& input : inputs) {
    std::vector<double> ious, errors;
    for (const auto& [frame, gt_box] : input.ground_truth) {
      if (frame == 0) continue;  // initialization frame
      auto it = input.predictions.find(frame);
      if (it == input.predictions.end()) {
        throw DataError("sequence " + input.name + ": no prediction for frame " +
                        std::to_string(frame));
      }
      ious.push_back(iou(it->second, gt_box));
      errors.push_back(center_error(it->second, gt_box));
    }
    if (ious.empty()) {
      throw DataError("sequence " + input.name + " has no annotated frames beyond frame 0");
    }
    report.per_sequence[input.name] = evaluate_sequence(ious, errors);
  }

  for (const EvalInput& input : inputs) {
    const std::string key = input.attribute.empty() ? "none" : input.attribute;
    groups[key].push_back(&report.per_sequence.at(input.name));
  }

  auto mean_of = [](const std::vector<const SequenceEval*>& evals) {
    SequenceEval out;
    out.success.assign(101, 0.0);
    out.precision.assign(51, 0.0);
    for (const SequenceEval* e : evals) {
      out.rsr += e->rsr;
      out.rpr += e->rpr;
      out.op50 += e->op50;
      out.op75 += e->op75;
      for (std::size_t i = 0; i < out.success.size(); ++i) out.success[i] += e->success[i];
      for (std::size_t i = 0; i < out.precision.size(); ++i) out.precision[i] += e->precision[i];
    }
    const double n = static_cast<double>(evals.size());
    out.rsr /= n;
    out.rpr /= n;
    out.op50 /= n;
    out.op75 /= n;
    for (double& v : out.success) v /= n;
    for (double& v : out.precision) v /= n;
    return out;
  };

  for (const auto& [key, evals] : groups) {
    report.per_attribute[key] = mean_of(evals);
  }
  std::vector<const SequenceEval*> all;
  for (const auto& [name, eval] : report.per_sequence) all.push_back(&eval);
  const SequenceEval overall = mean_of(all);
  report.rsr = overall.rsr;
  report.rpr = overall.rpr;
  report.op50 = overall.op50;
  report.op75 = overall.op75;
  return report;
}

std::string report_to_json(const EvalReport& report, bool include_curves) {
  json j;
  j["rsr"] = report.rsr;
  j["rpr"] = report.rpr;
  j["op50"] = report.op50;
  j["op75"] = report.op75;
  auto eval_json = [&](const SequenceEval& e) {
    json s;
    s["rsr"] = e.rsr;
    s["rpr"] = e.rpr;
    s["op50"] = e.op50;
    s["op75"] = e.op75;
    if (!e.ious.empty()) {
      // Per-sequence detail; attribute aggregates carry only the rates.
      s["frames"] = e.ious.size();
      double mean_iou = 0.0;
      for (double v : e.ious) mean_iou += v;
      s["mean_iou"] = mean_iou / static_cast<double>(e.ious.size());
    }
    if (include_curves) {
      s["success"] = e.success;
      s["precision"] = e.precision;
    }
    return s;
  };
  json per_seq;
  for (const auto& [name, e] : report.per_sequence) per_seq[name] = eval_json(e);
  j["per_sequence"] = per_seq;
  json per_attr;
  for (const auto& [name, e] : report.per_attribute) per_attr[name] = eval_json(e);
  j["per_attribute"] = per_attr;
  // Threshold-grid conventions baked into this implementation.
  j["protocol"] = {{"success_thresholds", "0:0.01:1.00, strict greater-than"},
                   {"precision_thresholds", "0:1:50 px, non-strict"},
                   {"rpr_threshold_px", 20},
                   {"frame0_excluded", true}};
  return j.dump(2);
}

}  // namespace fetrack
