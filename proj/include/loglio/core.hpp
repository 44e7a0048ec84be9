#pragma once

// Value types shared by every stage of the pipeline, plus the SO(3)/manifold
// arithmetic used by the error-state filter.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

namespace loglio {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Point3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Angle between two (not necessarily unit) vectors, robust near 0 and pi.
inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Angle between two lines, i.e. ignoring the sign of either vector. In [0, pi/2].
inline double unsigned_angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), std::abs(a.dot(b)));
}

/// Unit bearing of a ray with the given azimuth and vertical angle.
inline Vec3 bearing(double azimuth, double elevation) {
  const double ce = std::cos(elevation);
  return {std::cos(azimuth) * ce, std::sin(azimuth) * ce, std::sin(elevation)};
}

namespace so3 {

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

inline Quat exp(const Vec3& w) {
  const double theta = w.norm();
  const double half = 0.5 * theta;
  // sin(x/2)/x, Taylor expanded near zero.
  const double k = theta < 1e-8 ? 0.5 - theta * theta / 48.0 : std::sin(half) / theta;
  return Quat(std::cos(half), k * w.x(), k * w.y(), k * w.z()).normalized();
}

/// Rotation vector of q with angle in [0, pi]. At exactly pi the axis is taken
/// from the vector part with its first nonzero component made positive.
inline Vec3 log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  Vec3 v = q.vec();
  const double sin_half = v.norm();
  if (sin_half < 1e-10) {
    // q.w() ~ 1 here.
    return 2.0 * v / q.w();
  }
  if (q.w() == 0.0) {
    for (int i = 0; i < 3; ++i) {
      if (v[i] != 0.0) {
        if (v[i] < 0.0) v = -v;
        break;
      }
    }
  }
  const double theta = 2.0 * std::atan2(sin_half, q.w());
  return theta / sin_half * v;
}

/// Right Jacobian of SO(3): Exp(w + dw) ~ Exp(w) Exp(Jr(w) dw).
inline Mat3 right_jacobian(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = hat(w);
  if (theta < 1e-6) return Mat3::Identity() - 0.5 * W + W * W / 6.0;
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * W +
         (theta - std::sin(theta)) / (t2 * theta) * W * W;
}

inline Mat3 right_jacobian_inv(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = hat(w);
  if (theta < 1e-6) return Mat3::Identity() + 0.5 * W + W * W / 12.0;
  const double t2 = theta * theta;
  const double coef = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * W + coef * W * W;
}

}  // namespace so3

/// Orientation stored as a unit quaternion, re-normalized after every composition.
class Rotation {
 public:
  Rotation() = default;
  explicit Rotation(const Quat& q) : q_(q.normalized()) {}

  static Rotation identity() { return Rotation(); }
  static Rotation exp(const Vec3& w) { return Rotation(so3::exp(w)); }
  static Rotation from_matrix(const Mat3& m) { return Rotation(Quat(m)); }
  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    return Rotation(Quat(Eigen::AngleAxisd(angle, axis.normalized())));
  }
  /// Intrinsic Z-Y-X (yaw, pitch, roll) Euler angles.
  static Rotation from_ypr(double yaw, double pitch, double roll) {
    return Rotation(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                         Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                         Eigen::AngleAxisd(roll, Vec3::UnitX())));
  }

  Vec3 log() const { return so3::log(q_); }
  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Quat& quaternion() const { return q_; }
  Rotation inverse() const { return Rotation(q_.conjugate()); }

  Rotation operator*(const Rotation& o) const { return Rotation(q_ * o.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  friend Rotation slerp(const Rotation& a, const Rotation& b, double t) {
    return Rotation(a.q_.slerp(t, b.q_));
  }

 private:
  Quat q_ = Quat::Identity();
};

/// Rigid transform taking points from frame b into frame a (a_T_b).
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    const Rotation inv = rotation.inverse();
    return {inv, -(inv * translation)};
  }
};

inline Pose interpolate(const Pose& a, const Pose& b, double t) {
  return {slerp(a.rotation, b.rotation, t), a.translation + t * (b.translation - a.translation)};
}

struct StampedPose {
  double time = 0.0;  // seconds
  Pose pose;
};

/// Poses with strictly increasing timestamps.
using Trajectory = std::vector<StampedPose>;

/// Error-state layout: (dtheta, dp, dv, dbg, dba, dg).
namespace state_index {
constexpr int kRot = 0;
constexpr int kPos = 3;
constexpr int kVel = 6;
constexpr int kGyroBias = 9;
constexpr int kAccelBias = 12;
constexpr int kGravity = 15;
constexpr int kDim = 18;
}  // namespace state_index

using ErrorState18 = Eigen::Matrix<double, state_index::kDim, 1>;
using Cov18 = Eigen::Matrix<double, state_index::kDim, state_index::kDim>;

/// IMU (body) state in the world frame.
struct NavState {
  Rotation rotation;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gravity{0.0, 0.0, -9.81};

  Pose pose() const { return {rotation, position}; }
};

/// Right-perturbation retraction: R Exp(dtheta), vectors added.
inline NavState box_plus(const NavState& x, const ErrorState18& d) {
  using namespace state_index;
  NavState out = x;
  out.rotation = x.rotation * Rotation::exp(d.segment<3>(kRot));
  out.position += d.segment<3>(kPos);
  out.velocity += d.segment<3>(kVel);
  out.gyro_bias += d.segment<3>(kGyroBias);
  out.accel_bias += d.segment<3>(kAccelBias);
  out.gravity += d.segment<3>(kGravity);
  return out;
}

/// a [-] b, expressed in the tangent space at b, so box_plus(b, box_minus(a, b)) == a.
inline ErrorState18 box_minus(const NavState& a, const NavState& b) {
  using namespace state_index;
  ErrorState18 d;
  d.segment<3>(kRot) = (b.rotation.inverse() * a.rotation).log();
  d.segment<3>(kPos) = a.position - b.position;
  d.segment<3>(kVel) = a.velocity - b.velocity;
  d.segment<3>(kGyroBias) = a.gyro_bias - b.gyro_bias;
  d.segment<3>(kAccelBias) = a.accel_bias - b.accel_bias;
  d.segment<3>(kGravity) = a.gravity - b.gravity;
  return d;
}

struct ImuSample {
  double timestamp = 0.0;
  Vec3 angular_velocity = Vec3::Zero();     // rad/s, body
  Vec3 linear_acceleration = Vec3::Zero();  // m/s^2, body specific force
};

struct RingPoint {
  Point3 position = Point3::Zero();  // sensor frame
  int ring = 0;
  double time_offset = 0.0;  // seconds since scan start
  double range = 0.0;
  double azimuth = 0.0;

  /// Builds a point from its polar measurement; position = range * bearing.
  static RingPoint from_polar(double range, double azimuth, double elevation, int ring,
                              double time_offset) {
    RingPoint p;
    p.position = range * bearing(azimuth, elevation);
    p.ring = ring;
    p.time_offset = time_offset;
    p.range = range;
    p.azimuth = azimuth;
    return p;
  }

  /// Builds a point from its Cartesian position, recovering range and azimuth.
  static RingPoint from_position(const Point3& position, int ring, double time_offset) {
    RingPoint p;
    p.position = position;
    p.ring = ring;
    p.time_offset = time_offset;
    p.range = position.norm();
    p.azimuth = std::atan2(position.y(), position.x());
    return p;
  }
};

/// One sweep of a spinning LiDAR.
struct RingScan {
  std::vector<RingPoint> points;
  double scan_start = 0.0;
  double scan_end = 0.0;
  int ring_count = 0;
  int points_per_ring = 0;

  double duration() const { return scan_end - scan_start; }
  bool empty() const { return points.empty(); }
};

}  // namespace loglio
