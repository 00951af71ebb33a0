#include "fetrack/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fetrack {

GradCheckReport grad_check(const std::function<Tensor()>& function,
                           const std::vector<std::pair<std::string, Tensor>>& parameters,
                           double h, double tolerance, std::int64_t max_probes) {
  GradCheckReport report;
  report.tolerance = tolerance;

  for (const auto& [name, t] : parameters) {
    auto tensor = t;
    tensor.zero_grad();
  }
  Tensor output = function();
  output.backward();

  // Analytic gradients snapshot (backward consumed the graph).
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : parameters) {
    auto tensor = t;
    analytic.emplace_back(tensor.grad().begin(), tensor.grad().end());
  }

  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < parameters.size(); ++pi) {
    auto tensor = parameters[pi].second;
    GradCheckEntry entry;
    entry.name = parameters[pi].first;

    const std::int64_t n = tensor.numel();
    const std::int64_t step = max_probes > 0 && n > max_probes
                                  ? std::max<std::int64_t>(1, n / max_probes)
                                  : 1;
    auto values = tensor.data();
    for (std::int64_t i = 0; i < n; i += step) {
      const double saved = values[static_cast<std::size_t>(i)];
      values[static_cast<std::size_t>(i)] = saved + h;
      const double f_plus = function().item();
      values[static_cast<std::size_t>(i)] = saved - h;
      const double f_minus = function().item();
      values[static_cast<std::size_t>(i)] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[pi][static_cast<std::size_t>(i)];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > entry.max_error) entry.max_error = err;
      ++entry.checked;
    }
    entry.pass = entry.max_error <= tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace fetrack
