#pragma once

// Deterministic scene, spinning-LiDAR and IMU generator with ground truth.

#include "loglio/core.hpp"
#include "loglio/estimator.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace loglio::sim {

/// mt19937_64 with a portable normal transform, so sequences are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * kPi * u2);
  }

  Vec3 gaussian3(double sigma) { return sigma * Vec3(gaussian(), gaussian(), gaussian()); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Rectangle spanned by two orthogonal unit edges from a corner.
struct Patch {
  Point3 origin = Point3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  double u_len = 1.0;
  double v_len = 1.0;
  Vec3 normal = Vec3::UnitZ();
  int id = 0;
};

struct Hit {
  double range = 0.0;
  int patch = -1;
};

class Scene {
 public:
  /// Adds a rectangle; `normal` picks which side is the front face.
  int add_rectangle(const Point3& origin, const Vec3& edge_u, const Vec3& edge_v, const Vec3& normal) {
    Patch p;
    p.origin = origin;
    p.u_len = edge_u.norm();
    p.v_len = edge_v.norm();
    if (!(p.u_len > 0.0) || !(p.v_len > 0.0) || std::abs(edge_u.dot(edge_v)) > 1e-9 * p.u_len * p.v_len)
      throw std::invalid_argument("patch edges must be non-degenerate and orthogonal");
    p.u = edge_u / p.u_len;
    p.v = edge_v / p.v_len;
    Vec3 n = p.u.cross(p.v);
    if (n.dot(normal) < 0.0) n = -n;
    p.normal = n;
    p.id = static_cast<int>(patches_.size());
    patches_.push_back(p);
    return p.id;
  }

  /// Axis-aligned box as six patches; normals point out of the box, or into it for a room.
  void add_box(const Point3& lo, const Point3& hi, bool inward = false, bool with_floor = true,
               bool with_top = true) {
    const Vec3 d = hi - lo;
    const double s = inward ? -1.0 : 1.0;
    const Vec3 ex = Vec3::UnitX() * d.x(), ey = Vec3::UnitY() * d.y(), ez = Vec3::UnitZ() * d.z();
    add_rectangle(lo, ey, ez, -s * Vec3::UnitX());
    add_rectangle(lo + ex, ey, ez, s * Vec3::UnitX());
    add_rectangle(lo, ex, ez, -s * Vec3::UnitY());
    add_rectangle(lo + ey, ex, ez, s * Vec3::UnitY());
    if (with_floor) add_rectangle(lo, ex, ey, -s * Vec3::UnitZ());
    if (with_top) add_rectangle(lo + ez, ex, ey, s * Vec3::UnitZ());
  }

  const std::vector<Patch>& patches() const { return patches_; }
  bool empty() const { return patches_.empty(); }

  /// Nearest two-sided intersection within (0, max_range].
  std::optional<Hit> ray_cast(const Point3& origin, const Vec3& dir, double max_range) const {
    std::optional<Hit> best;
    double best_t = max_range;
    for (const Patch& p : patches_) {
      const double denom = p.normal.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double t = p.normal.dot(p.origin - origin) / denom;
      if (!(t > 0.0) || t > best_t) continue;
      const Vec3 rel = origin + t * dir - p.origin;
      const double a = rel.dot(p.u);
      const double b = rel.dot(p.v);
      if (a < 0.0 || a > p.u_len || b < 0.0 || b > p.v_len) continue;
      best_t = t;
      best = Hit{t, p.id};
    }
    return best;
  }

 private:
  std::vector<Patch> patches_;
};

struct LidarModel {
  int ring_count = 16;
  int points_per_ring = 1024;
  std::vector<double> vertical_angles;  // radians, strictly increasing, one per ring
  double spin_rate = 10.0;              // Hz
  double range_noise = 0.0;             // sigma, m
  double max_range = 100.0;
  double min_range = 0.3;

  double horizontal_resolution() const { return 2.0 * kPi / points_per_ring; }
  double sweep_duration() const { return 1.0 / spin_rate; }

  void validate() const {
    if (ring_count < 1 || static_cast<int>(vertical_angles.size()) != ring_count)
      throw std::invalid_argument("one vertical angle per ring is required");
    if (points_per_ring < 8) throw std::invalid_argument("points_per_ring must be at least 8");
    for (int i = 1; i < ring_count; ++i)
      if (!(vertical_angles[i] > vertical_angles[i - 1]))
        throw std::invalid_argument("vertical angles must be strictly increasing");
    if (!(spin_rate > 0.0) || !(max_range > min_range) || range_noise < 0.0)
      throw std::invalid_argument("invalid lidar timing or range limits");
  }

  static LidarModel uniform(int rings, double lo_deg, double hi_deg, int cols) {
    LidarModel m;
    m.ring_count = rings;
    m.points_per_ring = cols;
    m.vertical_angles.resize(static_cast<std::size_t>(rings));
    for (int i = 0; i < rings; ++i)
      m.vertical_angles[static_cast<std::size_t>(i)] =
          deg2rad(rings == 1 ? lo_deg : lo_deg + (hi_deg - lo_deg) * i / (rings - 1));
    return m;
  }

  /// 32 rings from -30.67 to +10.67 degrees, 1800 columns: 57600 rays per sweep.
  static LidarModel velodyne32() { return uniform(32, -30.67, 10.67, 1800); }
  /// 16 rings over +-16.6 degrees, 1024 columns.
  static LidarModel ouster16() { return uniform(16, -16.6, 16.6, 1024); }
};

struct SimulatedScan {
  RingScan scan;
  std::vector<Vec3> normal_world;   // patch normal per point
  std::vector<Vec3> normal_sensor;  // same, in the sensor frame at firing time
  std::vector<int> patch_id;
  std::size_t rays = 0;
};

/// world_T_sensor as a function of time.
using PoseFn = std::function<Pose(double)>;

/// Casts every (ring, column) ray from the sensor pose at its firing time.
/// Column c fires at scan_start + c / (m * spin_rate); all rings fire together.
inline SimulatedScan simulate_lidar(const Scene& scene, const PoseFn& pose_at, const LidarModel& model,
                                    double scan_start, Rng* rng = nullptr) {
  model.validate();
  SimulatedScan out;
  out.scan.scan_start = scan_start;
  out.scan.scan_end = scan_start + model.sweep_duration();
  out.scan.ring_count = model.ring_count;
  out.scan.points_per_ring = model.points_per_ring;
  out.rays = static_cast<std::size_t>(model.ring_count) * model.points_per_ring;
  if (scene.empty()) return out;
  const double h_res = model.horizontal_resolution();
  for (int c = 0; c < model.points_per_ring; ++c) {
    const double dt = c / (model.points_per_ring * model.spin_rate);
    const Pose T = pose_at(scan_start + dt);
    const double azimuth = c * h_res;
    for (int r = 0; r < model.ring_count; ++r) {
      const double elev = model.vertical_angles[static_cast<std::size_t>(r)];
      const Vec3 dir_s = bearing(azimuth, elev);
      const auto hit = scene.ray_cast(T.translation, T.rotation * dir_s, model.max_range);
      if (!hit) continue;
      double range = hit->range;
      if (rng && model.range_noise > 0.0) range += model.range_noise * rng->gaussian();
      if (range < model.min_range) continue;
      out.scan.points.push_back(RingPoint::from_polar(range, azimuth, elev, r, dt));
      const Vec3& n = scene.patches()[static_cast<std::size_t>(hit->patch)].normal;
      out.normal_world.push_back(n);
      out.normal_sensor.push_back(T.rotation.inverse() * n);
      out.patch_id.push_back(hit->patch);
    }
  }
  return out;
}

/// Pose, world-frame velocity and acceleration, and body angular rate at one instant.
struct Kinematics {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();  // body frame
};

/// Analytic trajectory family.
///
/// `loop` moves on an ellipse with a vertical wobble. Its phase starts at rest
/// for `rest` seconds and ramps up to the nominal rate over `ramp` seconds with
/// a C2 smootherstep, so acceleration stays continuous.
struct TrajectorySpec {
  enum class Kind { static_pose, constant_velocity, loop };
  Kind kind = Kind::static_pose;
  double duration = 1.0;

  // static / constant_velocity
  Pose start;
  Vec3 linear_velocity = Vec3::Zero();   // world
  Vec3 angular_velocity = Vec3::Zero();  // body

  // loop
  Point3 center = Point3::Zero();
  double radius_x = 5.0;
  double radius_y = 3.0;
  double height = 1.0;
  double height_amplitude = 0.0;
  double rate = 0.3;  // rad/s of loop phase
  double yaw0 = kPi / 2.0;
  double roll_amplitude = 0.0;
  double pitch_amplitude = 0.0;
  double rest = 1.0;
  double ramp = 2.0;

  static TrajectorySpec stationary(const Pose& p, double duration) {
    TrajectorySpec s;
    s.kind = Kind::static_pose;
    s.start = p;
    s.duration = duration;
    return s;
  }
  static TrajectorySpec constant(const Pose& p, const Vec3& v, const Vec3& w_body, double duration) {
    TrajectorySpec s;
    s.kind = Kind::constant_velocity;
    s.start = p;
    s.linear_velocity = v;
    s.angular_velocity = w_body;
    s.duration = duration;
    return s;
  }

  Kinematics at(double t) const {
    Kinematics k;
    switch (kind) {
      case Kind::static_pose:
        k.pose = start;
        return k;
      case Kind::constant_velocity:
        k.pose.rotation = start.rotation * Rotation::exp(angular_velocity * t);
        k.pose.translation = start.translation + linear_velocity * t;
        k.velocity = linear_velocity;
        k.angular_velocity = angular_velocity;
        return k;
      case Kind::loop:
        return loop_at(t);
    }
    return k;
  }

 private:
  // Phase progress g(t) and its derivatives.
  void progress(double t, double& g, double& g1, double& g2) const {
    if (t <= rest) {
      g = g1 = g2 = 0.0;
      return;
    }
    const double u = ramp > 0.0 ? (t - rest) / ramp : 1.0;
    if (u < 1.0) {
      const double u2 = u * u, u3 = u2 * u, u4 = u3 * u;
      g = ramp * (u4 * u2 - 3.0 * u4 * u + 2.5 * u4);
      g1 = 6.0 * u4 * u - 15.0 * u4 + 10.0 * u3;
      g2 = (30.0 * u4 - 60.0 * u3 + 30.0 * u2) / ramp;
      return;
    }
    g = 0.5 * ramp + (t - rest - ramp);
    g1 = 1.0;
    g2 = 0.0;
  }

  Kinematics loop_at(double t) const {
    double g, g1, g2;
    progress(t, g, g1, g2);
    const double ph = rate * g, ph1 = rate * g1, ph2 = rate * g2;
    const double s = std::sin(ph), c = std::cos(ph);
    const double s2 = std::sin(2.0 * ph), c2 = std::cos(2.0 * ph);
    const Vec3 p(center.x() + radius_x * c, center.y() + radius_y * s, height + height_amplitude * s2);
    const Vec3 dp(-radius_x * s, radius_y * c, 2.0 * height_amplitude * c2);
    const Vec3 ddp(-radius_x * c, -radius_y * s, -4.0 * height_amplitude * s2);

    const double yaw = yaw0 + ph, yaw_d = ph1;
    const double roll = roll_amplitude * std::sin(3.0 * ph), roll_d = 3.0 * roll_amplitude * std::cos(3.0 * ph) * ph1;
    const double pitch = pitch_amplitude * s2, pitch_d = 2.0 * pitch_amplitude * c2 * ph1;

    Kinematics k;
    k.pose.translation = p;
    k.pose.rotation = Rotation::from_ypr(yaw, pitch, roll);
    k.velocity = dp * ph1;
    k.acceleration = ddp * ph1 * ph1 + dp * ph2;
    // Body rates of a Z-Y-X Euler sequence.
    const double sr = std::sin(roll), cr = std::cos(roll), sp = std::sin(pitch), cp = std::cos(pitch);
    k.angular_velocity = Vec3(roll_d - yaw_d * sp, pitch_d * cr + yaw_d * sr * cp,
                              -pitch_d * sr + yaw_d * cr * cp);
    return k;
  }
};

struct ImuSimConfig {
  double rate = 200.0;
  ImuNoise noise = ImuNoise::zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gravity{0.0, 0.0, -9.81};
};

/// Samples gyro and specific force along the trajectory on [t0, t1].
inline std::vector<ImuSample> simulate_imu(const TrajectorySpec& traj, const ImuSimConfig& cfg, double t0,
                                           double t1, Rng* rng = nullptr) {
  if (cfg.rate < 50.0) throw std::invalid_argument("IMU rate must be at least 50 Hz");
  std::vector<ImuSample> out;
  const double dt = 1.0 / cfg.rate;
  const double gyro_sigma = cfg.noise.gyro_noise * std::sqrt(cfg.rate);
  const double accel_sigma = cfg.noise.accel_noise * std::sqrt(cfg.rate);
  const auto n = static_cast<std::size_t>(std::floor((t1 - t0) * cfg.rate + 1e-9));
  out.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    const Kinematics k = traj.at(t);
    ImuSample s;
    s.timestamp = t;
    s.angular_velocity = k.angular_velocity + cfg.gyro_bias;
    s.linear_acceleration = k.pose.rotation.inverse() * (k.acceleration - cfg.gravity) + cfg.accel_bias;
    if (rng) {
      if (gyro_sigma > 0.0) s.angular_velocity += rng->gaussian3(gyro_sigma);
      if (accel_sigma > 0.0) s.linear_acceleration += rng->gaussian3(accel_sigma);
    }
    out.push_back(s);
  }
  return out;
}

/// A complete named scenario: scene, sensors, motion and suggested map settings.
struct Fixture {
  std::string name;
  Scene scene;
  LidarModel lidar;
  TrajectorySpec trajectory;
  Pose imu_T_lidar;
  ImuSimConfig imu;
  double duration = 1.0;
  double map_resolution = 0.4;
  std::uint64_t seed = 1;
};

struct Sequence {
  std::vector<SimulatedScan> scans;
  std::vector<ImuSample> imu;
  std::vector<StampedPose> ground_truth;  // world_T_imu at every scan end
};

inline std::vector<std::string> fixture_names() {
  return {"corridor-60s", "openfield-sparse", "corner-room", "velodyne32-corridor"};
}

namespace detail {

inline Scene corridor_scene() {
  Scene s;
  // Ring corridor around a central block.
  s.add_box({-10.0, -6.0, 0.0}, {10.0, 6.0, 3.0}, /*inward=*/true);
  s.add_box({-5.0, -2.0, 0.0}, {5.0, 2.0, 3.0}, false, false, false);
  // Pillars and cabinets along the outer walls.
  for (double x : {-8.0, -3.0, 2.0, 7.0}) {
    s.add_box({x, 5.5, 0.0}, {x + 0.5, 6.0, 3.0}, false, false, false);
    s.add_box({x + 1.0, -6.0, 0.0}, {x + 1.5, -5.5, 3.0}, false, false, false);
  }
  s.add_box({-9.7, -1.0, 0.0}, {-9.2, 1.0, 1.2}, false, false, true);
  s.add_box({9.2, -0.5, 0.0}, {9.7, 1.5, 1.0}, false, false, true);
  s.add_box({-1.0, 2.0, 0.0}, {0.5, 2.4, 1.5}, false, false, true);
  s.add_box({-0.5, -2.4, 0.0}, {1.0, -2.0, 0.9}, false, false, true);
  return s;
}

inline Scene openfield_scene() {
  Scene s;
  s.add_rectangle({-120.0, -120.0, 0.0}, {240.0, 0.0, 0.0}, {0.0, 240.0, 0.0}, Vec3::UnitZ());
  s.add_box({22.0, -6.0, 0.0}, {30.0, 4.0, 8.0}, false, false, true);
  s.add_box({-32.0, 10.0, 0.0}, {-24.0, 16.0, 6.0}, false, false, true);
  s.add_box({-6.0, 24.0, 0.0}, {4.0, 30.0, 10.0}, false, false, true);
  s.add_box({4.0, -34.0, 0.0}, {12.0, -27.0, 5.0}, false, false, true);
  s.add_box({-30.0, -24.0, 0.0}, {-27.0, -20.0, 4.0}, false, false, true);
  return s;
}

inline Scene corner_scene() {
  Scene s;
  s.add_rectangle({-10.0, -10.0, 0.0}, {13.0, 0.0, 0.0}, {0.0, 13.0, 0.0}, Vec3::UnitZ());
  s.add_rectangle({3.0, -10.0, 0.0}, {0.0, 13.0, 0.0}, {0.0, 0.0, 3.0}, -Vec3::UnitX());
  s.add_rectangle({-10.0, 3.0, 0.0}, {13.0, 0.0, 0.0}, {0.0, 0.0, 3.0}, -Vec3::UnitY());
  return s;
}

}  // namespace detail

/// Consumer-grade IMU noise densities used by the standard fixtures.
inline ImuNoise consumer_imu_noise() { return {2e-3, 2e-2, 2e-5, 2e-4}; }

inline Fixture make_fixture(std::string_view name, std::uint64_t seed = 1) {
  Fixture f;
  f.name = std::string(name);
  f.seed = seed;
  f.imu_T_lidar = Pose{Rotation::identity(), Vec3(0.05, 0.0, 0.10)};
  f.imu.rate = 200.0;
  f.imu.noise = consumer_imu_noise();
  f.imu.gyro_bias = Vec3(0.002, -0.001, 0.0015);
  f.imu.accel_bias = Vec3(0.02, -0.01, 0.015);
  if (name == "corridor-60s") {
    f.scene = detail::corridor_scene();
    f.lidar = LidarModel::ouster16();
    f.lidar.max_range = 40.0;
    f.lidar.range_noise = 0.01;
    f.duration = 60.0;
    f.map_resolution = 0.4;
    TrajectorySpec& t = f.trajectory;
    t.kind = TrajectorySpec::Kind::loop;
    t.duration = f.duration;
    t.center = Point3::Zero();
    t.radius_x = 7.5;
    t.radius_y = 4.0;
    t.height = 1.0;
    t.height_amplitude = 0.2;
    t.rate = 2.0 * kPi / 20.0;
    t.roll_amplitude = 0.05;
    t.pitch_amplitude = 0.05;
    t.rest = 1.0;
    t.ramp = 3.0;
  } else if (name == "openfield-sparse") {
    f.scene = detail::openfield_scene();
    f.lidar = LidarModel::ouster16();
    f.lidar.max_range = 60.0;
    f.lidar.range_noise = 0.02;
    f.duration = 40.0;
    f.map_resolution = 0.5;
    TrajectorySpec& t = f.trajectory;
    t.kind = TrajectorySpec::Kind::loop;
    t.duration = f.duration;
    t.radius_x = 12.0;
    t.radius_y = 8.0;
    t.height = 1.5;
    t.height_amplitude = 0.3;
    t.rate = 2.0 * kPi / 30.0;
    t.roll_amplitude = 0.04;
    t.pitch_amplitude = 0.04;
    t.rest = 1.0;
    t.ramp = 3.0;
  } else if (name == "corner-room") {
    f.scene = detail::corner_scene();
    f.lidar = LidarModel::ouster16();
    f.lidar.max_range = 30.0;
    f.lidar.range_noise = 0.0;
    f.duration = 2.0;
    f.map_resolution = 0.4;
    f.trajectory = TrajectorySpec::stationary(Pose{Rotation::identity(), Vec3(0.0, 0.0, 1.0)}, f.duration);
  } else if (name == "velodyne32-corridor") {
    // Dense 32-ring sweeps of the corridor from a standstill, for timing.
    f.scene = detail::corridor_scene();
    f.lidar = LidarModel::velodyne32();
    f.lidar.max_range = 40.0;
    f.lidar.range_noise = 0.01;
    f.duration = 1.0;
    f.map_resolution = 0.4;
    f.trajectory = TrajectorySpec::stationary(
        Pose{Rotation::from_ypr(kPi / 2.0, 0.0, 0.0), Vec3(7.5, 0.0, 1.0)}, f.duration);
  } else {
    throw std::invalid_argument("unknown fixture: " + std::string(name));
  }
  return f;
}

/// Renders a fixture: one scan per sweep over the whole duration, the IMU
/// stream, and the IMU ground-truth pose at every scan end.
inline Sequence generate(const Fixture& f) {
  Rng rng(f.seed);
  Sequence seq;
  const PoseFn sensor_pose = [&](double t) { return f.trajectory.at(t).pose * f.imu_T_lidar; };
  const double sweep = f.lidar.sweep_duration();
  const auto n_scans = static_cast<std::size_t>(std::floor(f.duration / sweep + 1e-9));
  seq.scans.reserve(n_scans);
  for (std::size_t i = 0; i < n_scans; ++i) {
    const double t0 = static_cast<double>(i) * sweep;
    seq.scans.push_back(simulate_lidar(f.scene, sensor_pose, f.lidar, t0, &rng));
    const double t_end = seq.scans.back().scan.scan_end;
    seq.ground_truth.push_back({t_end, f.trajectory.at(t_end).pose});
  }
  seq.imu = simulate_imu(f.trajectory, f.imu, 0.0, f.duration + 0.05, &rng);
  return seq;
}

}  // namespace loglio::sim
