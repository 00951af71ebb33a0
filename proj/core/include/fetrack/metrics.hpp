#pragma once

#include <map>
#include <string>
#include <vector>

#include "fetrack/geometry.hpp"

namespace fetrack {

/// Intersection over union, in [0,1]. Throws BoxError on degenerate boxes.
double iou(const BBox& a, const BBox& b);

/// Euclidean distance between box centers, pixels.
double center_error(const BBox& a, const BBox& b);

/// SR(tau) = fraction of frames with IoU > tau, tau in {0, 0.01, ..., 1.00}.
std::vector<double> success_curve(const std::vector<double>& ious);

/// PR(d) = fraction of frames with center error <= d, d in {0, 1, ..., 50}.
std::vector<double> precision_curve(const std::vector<double>& errors);

/// Fraction of frames with IoU > threshold.
double op_t(const std::vector<double>& ious, double threshold);

struct SequenceEval {
  std::vector<double> ious;
  std::vector<double> center_errors;
  std::vector<double> success;    // 101 points
  std::vector<double> precision;  // 51 points
  double rsr = 0.0;               // mean of the success curve
  double rpr = 0.0;               // precision at 20 px
  double op50 = 0.0;
  double op75 = 0.0;
};

SequenceEval evaluate_sequence(const std::vector<double>& ious,
                               const std::vector<double>& errors);

struct EvalInput {
  std::string name;
  std::string attribute;                 // optional grouping key
  std::map<int, BBox> predictions;       // frame index -> predicted box
  std::map<int, BBox> ground_truth;      // frame index -> annotated box
};

struct EvalReport {
  double rsr = 0.0;
  double rpr = 0.0;
  double op50 = 0.0;
  double op75 = 0.0;
  std::map<std::string, SequenceEval> per_sequence;
  std::map<std::string, SequenceEval> per_attribute;  // mean curves per group
};

/// Per-sequence and aggregate evaluation. Frame 0 (the initialization frame)
/// is excluded; every annotated frame beyond it must have a prediction.
EvalReport evaluate(const std::vector<EvalInput>& inputs);

std::string report_to_json(const EvalReport& report, bool include_curves = false);

}  // namespace fetrack
