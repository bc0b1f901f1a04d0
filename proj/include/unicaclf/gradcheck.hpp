#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unicaclf/rng.hpp"

namespace unicaclf {

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Relative errors use max(|analytic|, |numeric|, denominator_floor) so
  /// that coordinates with vanishing gradients are judged on absolute error.
  double denominator_floor = 1e-4;
  /// Above this many coordinates a seeded random subset of this size is checked.
  std::size_t max_coordinates = 5000;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_name;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// `objective(x)` evaluates the scalar function; `analytic` is its gradient at x.
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& objective,
                                  std::vector<double> x, std::span<const double> analytic,
                                  const GradCheckOptions& opt,
                                  const std::function<std::string(std::size_t)>& name = {}) {
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > opt.max_coordinates) {
    Rng rng(opt.seed);
    rng.shuffle(coords);
    coords.resize(opt.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }
  GradCheckReport r;
  for (std::size_t i : coords) {
    const double saved = x[i];
    x[i] = saved + opt.step;
    const double up = objective(x);
    x[i] = saved - opt.step;
    const double down = objective(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double rel = relative_error(analytic[i], numeric, opt.denominator_floor);
    r.max_absolute_error = std::max(r.max_absolute_error, std::abs(analytic[i] - numeric));
    if (rel > r.max_relative_error || r.checked == 0) {
      r.max_relative_error = rel;
      r.worst_index = i;
      r.worst_analytic = analytic[i];
      r.worst_numeric = numeric;
    }
    ++r.checked;
  }
  if (name && r.checked > 0) r.worst_name = name(r.worst_index);
  r.passed = r.max_relative_error < opt.tolerance;
  return r;
}

}  // namespace unicaclf
