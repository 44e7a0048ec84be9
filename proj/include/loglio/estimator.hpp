#pragma once

// IMU propagation, motion deskewing and the iterated error-state Kalman update.
//
// Conventions: the error state is ordered (dtheta, dp, dv, dbg, dba, dg) and
// rotation errors are right perturbations, R = R_hat * Exp(dtheta).

#include "loglio/association.hpp"
#include "loglio/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace loglio {

/// Continuous-time IMU noise densities.
struct ImuNoise {
  double gyro_noise = 1e-3;      // rad/s/sqrt(Hz)
  double accel_noise = 1e-2;     // m/s^2/sqrt(Hz)
  double gyro_bias_rw = 1e-5;    // rad/s^2/sqrt(Hz)
  double accel_bias_rw = 1e-4;   // m/s^3/sqrt(Hz)

  static ImuNoise zero() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct FilterState {
  NavState nav;
  Cov18 cov = Cov18::Identity() * 1e-4;
  double time = 0.0;
};

struct PoseSample {
  double time = 0.0;
  Pose pose;  // world_T_imu
  Vec3 velocity = Vec3::Zero();
};

/// Time-stamped IMU poses across one propagation interval.
class PoseBuffer {
 public:
  void push(const PoseSample& s) { samples_.push_back(s); }
  const std::vector<PoseSample>& samples() const { return samples_; }
  bool empty() const { return samples_.empty(); }
  double start() const { return samples_.front().time; }
  double end() const { return samples_.back().time; }

  /// Pose at time t: linear in translation, spherical in rotation.
  std::optional<Pose> at(double t) const {
    if (samples_.empty() || t < start() || t > end()) return std::nullopt;
    const auto it = std::lower_bound(samples_.begin(), samples_.end(), t,
                                     [](const PoseSample& s, double v) { return s.time < v; });
    if (it->time == t) return it->pose;
    const PoseSample& b = *it;
    const PoseSample& a = *(it - 1);
    return interpolate(a.pose, b.pose, (t - a.time) / (b.time - a.time));
  }

 private:
  std::vector<PoseSample> samples_;
};

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Propagation {
  FilterState state;
  PoseBuffer buffer;
};

namespace detail {

struct ImuKnot {
  double t;
  Vec3 gyro;
  Vec3 accel;
};

inline ImuKnot lerp_imu(const ImuSample& a, const ImuSample& b, double t) {
  const double u = b.timestamp > a.timestamp ? (t - a.timestamp) / (b.timestamp - a.timestamp) : 0.0;
  return {t, a.angular_velocity + u * (b.angular_velocity - a.angular_velocity),
          a.linear_acceleration + u * (b.linear_acceleration - a.linear_acceleration)};
}

/// Measurement knots over [t0, t1]: interpolated ends plus every sample in between.
inline std::vector<ImuKnot> imu_knots(std::span<const ImuSample> imu, double t0, double t1,
                                      double max_gap) {
  if (imu.empty()) throw PropagationError("no IMU samples");
  auto value_at = [&](double t) -> ImuKnot {
    const auto it = std::lower_bound(imu.begin(), imu.end(), t,
                                     [](const ImuSample& s, double v) { return s.timestamp < v; });
    if (it == imu.begin()) {
      if (it->timestamp - t > max_gap) throw PropagationError("IMU stream starts too late");
      return {t, it->angular_velocity, it->linear_acceleration};
    }
    if (it == imu.end()) {
      const ImuSample& last = imu.back();
      if (t - last.timestamp > max_gap) throw PropagationError("IMU stream ends too early");
      return {t, last.angular_velocity, last.linear_acceleration};
    }
    if (it->timestamp - (it - 1)->timestamp > max_gap) throw PropagationError("gap in IMU stream");
    return lerp_imu(*(it - 1), *it, t);
  };
  std::vector<ImuKnot> knots;
  knots.push_back(value_at(t0));
  for (const ImuSample& s : imu) {
    if (s.timestamp <= t0) continue;
    if (s.timestamp >= t1) break;
    if (s.timestamp - knots.back().t > max_gap) throw PropagationError("gap in IMU stream");
    knots.push_back({s.timestamp, s.angular_velocity, s.linear_acceleration});
  }
  if (t1 > t0) knots.push_back(value_at(t1));
  return knots;
}

}  // namespace detail

/// Midpoint integration of the IMU from state.time to t_end with first-order
/// error-state covariance propagation. Every integration step is recorded.
inline Propagation imu_propagate(const FilterState& state, std::span<const ImuSample> imu,
                                 const ImuNoise& noise, double t_end, double max_gap = 0.1) {
  using namespace state_index;
  if (t_end < state.time) throw PropagationError("propagation target lies in the past");
  Propagation out;
  out.state = state;
  NavState& x = out.state.nav;
  Cov18& P = out.state.cov;
  out.buffer.push({state.time, x.pose(), x.velocity});
  if (t_end == state.time) return out;

  const std::vector<detail::ImuKnot> knots = detail::imu_knots(imu, state.time, t_end, max_gap);
  for (std::size_t i = 1; i < knots.size(); ++i) {
    const detail::ImuKnot& a = knots[i - 1];
    const detail::ImuKnot& b = knots[i];
    const double dt = b.t - a.t;
    if (dt <= 0.0) continue;

    const Vec3 w = 0.5 * (a.gyro + b.gyro) - x.gyro_bias;
    const Vec3 acc_body = 0.5 * (a.accel + b.accel) - x.accel_bias;
    const Rotation R0 = x.rotation;
    const Rotation R1 = R0 * Rotation::exp(w * dt);
    const Vec3 acc = 0.5 * (R0 * (a.accel - x.accel_bias) + R1 * (b.accel - x.accel_bias)) + x.gravity;

    Cov18 F = Cov18::Identity();
    const Mat3 R0m = R0.matrix();
    F.block<3, 3>(kRot, kRot) = so3::exp(-w * dt).toRotationMatrix();
    F.block<3, 3>(kRot, kGyroBias) = -so3::right_jacobian(w * dt) * dt;
    F.block<3, 3>(kPos, kVel) = Mat3::Identity() * dt;
    F.block<3, 3>(kVel, kRot) = -R0m * so3::hat(acc_body) * dt;
    F.block<3, 3>(kVel, kAccelBias) = -R0m * dt;
    F.block<3, 3>(kVel, kGravity) = Mat3::Identity() * dt;

    Cov18 Q = Cov18::Zero();
    Q.block<3, 3>(kRot, kRot).diagonal().setConstant(noise.gyro_noise * noise.gyro_noise * dt);
    Q.block<3, 3>(kVel, kVel).diagonal().setConstant(noise.accel_noise * noise.accel_noise * dt);
    Q.block<3, 3>(kGyroBias, kGyroBias).diagonal().setConstant(noise.gyro_bias_rw * noise.gyro_bias_rw * dt);
    Q.block<3, 3>(kAccelBias, kAccelBias)
        .diagonal()
        .setConstant(noise.accel_bias_rw * noise.accel_bias_rw * dt);

    x.position += x.velocity * dt + 0.5 * acc * dt * dt;
    x.velocity += acc * dt;
    x.rotation = R1;
    P = F * P * F.transpose() + Q;
    P = (0.5 * (P + P.transpose())).eval();
    out.buffer.push({b.t, x.pose(), x.velocity});
  }
  out.state.time = t_end;
  return out;
}

/// Transform taking a LiDAR point captured at time t into the LiDAR frame at the buffer end.
inline std::optional<Pose> lidar_motion_to_end(const PoseBuffer& buffer, const Pose& imu_T_lidar,
                                               double t) {
  const auto at_t = buffer.at(t);
  if (!at_t || buffer.empty()) return std::nullopt;
  const Pose end = buffer.samples().back().pose;
  return (end * imu_T_lidar).inverse() * (*at_t * imu_T_lidar);
}

struct DeskewResult {
  std::vector<Point3> points;
  std::vector<std::size_t> source_index;
  std::size_t dropped = 0;
};

/// Expresses every point of the scan in the LiDAR frame at the end of the buffer.
/// Points whose timestamp falls outside the buffer are dropped and counted.
inline DeskewResult deskew(const RingScan& scan, const PoseBuffer& buffer, const Pose& imu_T_lidar) {
  DeskewResult out;
  out.points.reserve(scan.points.size());
  out.source_index.reserve(scan.points.size());
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const RingPoint& p = scan.points[i];
    const auto T = lidar_motion_to_end(buffer, imu_T_lidar, scan.scan_start + p.time_offset);
    if (!T) {
      ++out.dropped;
      continue;
    }
    out.points.push_back(*T * p.position);
    out.source_index.push_back(i);
  }
  return out;
}

using Row18 = Eigen::Matrix<double, 1, state_index::kDim>;

struct Linearization {
  double z = 0.0;
  Row18 H = Row18::Zero();
};

/// z = n . (p_w - q) with p_w = R (imu_T_lidar p_l) + t, and its Jacobian with
/// respect to the error state (nonzero only in the rotation and position blocks).
inline Linearization residual_and_jacobian(const NavState& x, const Pose& imu_T_lidar,
                                           const Point3& point_lidar, const Correspondence& c) {
  using namespace state_index;
  const Point3 p_imu = imu_T_lidar * point_lidar;
  const Point3 p_world = x.rotation * p_imu + x.position;
  Linearization lin;
  lin.z = c.normal.dot(p_world - c.anchor);
  lin.H.segment<3>(kRot) = -c.normal.transpose() * x.rotation.matrix() * so3::hat(p_imu);
  lin.H.segment<3>(kPos) = c.normal.transpose();
  return lin;
}

struct Measurement {
  double z = 0.0;
  Row18 H = Row18::Zero();
  double variance = 1e-2;
};

/// Produces residual rows linearized at the given iterate.
using ResidualProvider = std::function<void(const NavState&, std::vector<Measurement>&)>;

struct IekfConfig {
  int max_iters = 4;
  double convergence_tol = 1e-3;
  double condition_cap = 1e14;
  bool update_gravity = true;
  /// Evaluate the MAP cost at every iterate (one extra residual pass).
  bool track_cost = false;
};

struct IekfResult {
  FilterState state;
  int iterations = 0;
  bool converged = false;
  bool rejected = false;
  std::size_t measurements = 0;
  /// MAP cost at the prediction and after each iteration when tracked.
  std::vector<double> cost;
};

namespace detail {

/// Jacobian of (x [+] d) [-] x_pred with respect to d at d = 0.
inline Cov18 boxminus_jacobian(const ErrorState18& r) {
  Cov18 J = Cov18::Identity();
  J.block<3, 3>(0, 0) = so3::right_jacobian_inv(r.segment<3>(0));
  return J;
}

}  // namespace detail

/// MAP cost: prior Mahalanobis term plus weighted squared residuals.
inline double map_cost(const NavState& x, const FilterState& pred, const std::vector<Measurement>& m) {
  const ErrorState18 r = box_minus(x, pred.nav);
  double c = r.dot(pred.cov.ldlt().solve(r));
  for (const Measurement& mi : m) c += mi.z * mi.z / mi.variance;
  return c;
}

/// Iterated error-state Kalman update in information form (18 x 18 solves only).
///
/// Each iteration linearizes the prior term ||x [-] x_pred||_P and the residual
/// rows at the current iterate, solves for the tangent step and retracts.
/// The posterior covariance is (I - K H) P' on the final linearization.
inline IekfResult iekf_update(const FilterState& pred, const ResidualProvider& provider,
                              const IekfConfig& cfg = {}) {
  using namespace state_index;
  IekfResult res;
  res.state = pred;
  const int active = cfg.update_gravity ? kDim : kGravity;
  NavState x = pred.nav;
  std::vector<Measurement> meas;
  Cov18 P_lin = pred.cov;
  Cov18 KH = Cov18::Zero();
  bool have_update = false;

  for (int it = 0; it < cfg.max_iters; ++it) {
    meas.clear();
    provider(x, meas);
    res.measurements = meas.size();
    if (cfg.track_cost && it == 0) res.cost.push_back(map_cost(x, pred, meas));

    const ErrorState18 r0 = box_minus(x, pred.nav);
    const Cov18 J = detail::boxminus_jacobian(r0);
    const Cov18 J_inv = J.inverse();
    const Cov18 P_prime = J_inv * pred.cov * J_inv.transpose();

    Cov18 N = Cov18::Zero();
    ErrorState18 Hz = ErrorState18::Zero();
    for (const Measurement& m : meas) {
      const double w = 1.0 / m.variance;
      N.noalias() += m.H.transpose() * m.H * w;
      Hz.noalias() += m.H.transpose() * (m.z * w);
    }

    const Eigen::MatrixXd Pa = P_prime.topLeftCorner(active, active);
    const Eigen::LDLT<Eigen::MatrixXd> Pa_ldlt(Pa);
    const Eigen::MatrixXd Pa_inv = Pa_ldlt.solve(Eigen::MatrixXd::Identity(active, active));
    const Eigen::MatrixXd A = Pa_inv + N.topLeftCorner(active, active);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues()(0);
    const double lmax = es.eigenvalues()(active - 1);
    if (!(lmin > 0.0) || lmax / lmin > cfg.condition_cap) {
      res.state = pred;
      res.rejected = true;
      res.iterations = it + 1;
      return res;
    }

    const ErrorState18 prior_step = J_inv * r0;
    const Eigen::VectorXd b =
        -Pa_inv * prior_step.head(active) - Hz.head(active);
    const Eigen::LDLT<Eigen::MatrixXd> A_ldlt(A);
    ErrorState18 delta = ErrorState18::Zero();
    delta.head(active) = A_ldlt.solve(b);

    x = box_plus(x, delta);
    P_lin = P_prime;
    KH.setZero();
    KH.topRows(active) = A_ldlt.solve(N.topRows(active));
    have_update = true;
    res.iterations = it + 1;
    if (cfg.track_cost) {
      std::vector<Measurement> m2;
      provider(x, m2);
      res.cost.push_back(map_cost(x, pred, m2));
    }
    if (delta.norm() < cfg.convergence_tol) {
      res.converged = true;
      break;
    }
  }

  res.state.nav = x;
  if (have_update) {
    Cov18 P = P_lin - KH * P_lin;
    res.state.cov = 0.5 * (P + P.transpose());
  }
  return res;
}

}  // namespace loglio
