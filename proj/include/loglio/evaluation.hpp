#pragma once

// Absolute trajectory error after rigid alignment.

#include "loglio/core.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace loglio {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MatchedPositions {
  std::vector<Point3> estimate;
  std::vector<Point3> truth;
};

/// Pairs each estimated pose with the nearest ground-truth timestamp within max_dt.
inline MatchedPositions match_by_time(const Trajectory& estimate, const Trajectory& truth,
                                      double max_dt = 0.01) {
  MatchedPositions m;
  if (truth.empty()) return m;
  for (const StampedPose& e : estimate) {
    const auto it = std::lower_bound(truth.begin(), truth.end(), e.time,
                                     [](const StampedPose& s, double t) { return s.time < t; });
    const StampedPose* best = nullptr;
    double best_dt = max_dt;
    for (auto c : {it, it == truth.begin() ? truth.end() : it - 1}) {
      if (c == truth.end()) continue;
      const double dt = std::abs(c->time - e.time);
      if (dt <= best_dt) {
        best_dt = dt;
        best = &*c;
      }
    }
    if (!best) continue;
    m.estimate.push_back(e.pose.translation);
    m.truth.push_back(best->pose.translation);
  }
  return m;
}

/// Rigid transform (no scale) minimizing the squared distance from aligned estimate to truth.
inline Pose align_rigid(const std::vector<Point3>& estimate, const std::vector<Point3>& truth) {
  const auto n = static_cast<Eigen::Index>(estimate.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimate[static_cast<std::size_t>(i)];
    dst.col(i) = truth[static_cast<std::size_t>(i)];
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  return Pose{Rotation::from_matrix(T.topLeftCorner<3, 3>()), T.topRightCorner<3, 1>()};
}

/// ATE RMSE in meters.
inline double ate_rmse(const Trajectory& estimate, const Trajectory& truth, double max_dt = 0.01) {
  const MatchedPositions m = match_by_time(estimate, truth, max_dt);
  if (m.estimate.size() < 3)
    throw EvaluationError("ATE needs at least 3 matched poses, got " + std::to_string(m.estimate.size()));
  const Pose T = align_rigid(m.estimate, m.truth);
  double sum = 0.0;
  for (std::size_t i = 0; i < m.estimate.size(); ++i) sum += (T * m.estimate[i] - m.truth[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(m.estimate.size()));
}

}  // namespace loglio
