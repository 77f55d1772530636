#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "mivise/numerics/graph.hpp"
#include "mivise/rng.hpp"

namespace mivise {

struct GradReport {
  std::map<std::string, double> max_relative_error;
  double max_error = 0.0;
  double tolerance = 1e-4;
  std::size_t coordinates_checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  std::size_t coordinates_per_param = 25;
  std::uint64_t seed = 7;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor),
  // so coordinates whose true gradient is ~0 are judged on absolute error.
  double magnitude_floor = 1e-4;
};

using LossBuilder = std::function<Var<double>(Graph<double>&)>;

/// Compare reverse-mode gradients with central differences
/// (f(x + eps) - f(x - eps)) / (2 eps) on a random subset of coordinates per
/// parameter (all of them when the parameter is small). 64-bit only.
inline GradReport check_gradients(const LossBuilder& build_loss, ParamStore<double>& params, double eps,
                                  const GradCheckOptions& opts = {}) {
  if (!(eps > 0.0)) throw ContractError("check_gradients: eps must be positive");
  GradReport report;
  report.tolerance = opts.tolerance;

  Gradients<double> analytic;
  {
    Graph<double> g(&params);
    analytic = g.backward(build_loss(g));
  }

  auto evaluate = [&]() {
    Graph<double> g(&params);
    return build_loss(g).scalar();
  };

  Rng rng(opts.seed);
  for (const auto& name : params.names()) {
    Matrix<double>& value = params.value(name);
    const Index n = value.size();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    if (coords.size() > opts.coordinates_per_param) {
      rng.shuffle(coords);
      coords.resize(opts.coordinates_per_param);
      std::sort(coords.begin(), coords.end());
    }
    double worst = 0.0;
    for (Index c : coords) {
      const double saved = value.data()[c];
      value.data()[c] = saved + eps;
      const double up = evaluate();
      value.data()[c] = saved - eps;
      const double down = evaluate();
      value.data()[c] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = analytic.at(name).data()[c];
      const double denom = std::max({std::abs(exact), std::abs(numeric), opts.magnitude_floor});
      const double err = std::abs(exact - numeric) / denom;
      worst = std::isfinite(err) ? std::max(worst, err) : HUGE_VAL;
      ++report.coordinates_checked;
    }
    report.max_relative_error[name] = worst;
    report.max_error = std::max(report.max_error, worst);
  }
  report.passed = report.max_error < opts.tolerance;
  return report;
}

}  // namespace mivise
