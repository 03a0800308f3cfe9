#pragma once

// Central finite differences for checking hand-written backward passes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>

namespace mate {

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kGradientTolerance = 1e-4;
/// Gradient magnitudes below this are compared against the floor instead. With h = 1e-5 the
/// rounding noise of a central difference is about eps * |loss| / h, i.e. 1e-10 for losses of
/// order 10, which is already 1e-4 of a 1e-6 gradient.
inline constexpr double kGradientFloor = 1e-5;

/// d loss / d params by central differences, one coordinate at a time.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& loss,
                                        const Eigen::VectorXd& params, double step = kFiniteDifferenceStep) {
  Eigen::VectorXd grad(params.size());
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = loss(probe);
    probe[i] = saved - step;
    const double down = loss(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                                 double floor = kGradientFloor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace mate
