#pragma once

// Scan-to-map odometry: normals, per-voxel downsampling, IMU prediction,
// deskewing, hierarchical association, iterated update and map insertion.

#include "loglio/association.hpp"
#include "loglio/config.hpp"
#include "loglio/core.hpp"
#include "loglio/estimator.hpp"
#include "loglio/map_index.hpp"
#include "loglio/ring_fals.hpp"

#include <chrono>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace loglio {

enum class ScanErrorKind { not_initialized, empty_scan, dimension_mismatch, out_of_order, no_normals };

inline std::string_view to_string(ScanErrorKind k) {
  switch (k) {
    case ScanErrorKind::not_initialized: return "not_initialized";
    case ScanErrorKind::empty_scan: return "empty_scan";
    case ScanErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ScanErrorKind::out_of_order: return "out_of_order";
    case ScanErrorKind::no_normals: return "no_normals";
  }
  return "unknown";
}

/// A scan the pipeline cannot use. The filter state is left untouched.
class ScanError : public std::runtime_error {
 public:
  ScanError(ScanErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ScanErrorKind kind() const { return kind_; }

 private:
  ScanErrorKind kind_;
};

struct StageTimings {
  double projection_ms = 0.0;
  double box_filter_ms = 0.0;
  double smoothing_ms = 0.0;
  double downsample_ms = 0.0;
  double propagate_ms = 0.0;
  double deskew_ms = 0.0;
  double update_ms = 0.0;
  double map_ms = 0.0;

  double total_ms() const {
    return projection_ms + box_filter_ms + smoothing_ms + downsample_ms + propagate_ms + deskew_ms + update_ms +
           map_ms;
  }
};

struct ScanDiagnostics {
  double timestamp = 0.0;
  Pose pose;
  std::size_t points_in = 0;
  std::size_t normals_valid = 0;
  std::size_t points_downsampled = 0;
  std::size_t deskew_dropped = 0;
  int iterations = 0;
  bool converged = false;
  bool rejected = false;
  bool update_skipped = false;
  AssociationHistogram histogram;
  StageTimings timings;
  std::vector<std::string> warnings;
};

/// One downsampled scan point in the LiDAR frame.
struct FeaturePoint {
  Point3 position = Point3::Zero();
  std::optional<Vec3> normal;
  double time_offset = 0.0;
};

/// Keeps one point per voxel: the one nearest the voxel's centroid, with the
/// sign-aligned average of the valid normals in that voxel. Voxels are emitted
/// in order of first appearance.
inline std::vector<FeaturePoint> voxel_downsample(const RingScan& scan, const std::vector<Vec3>& normals,
                                                  const std::vector<std::uint8_t>& valid, double resolution) {
  struct Cell {
    Vec3 sum = Vec3::Zero();
    Vec3 normal_sum = Vec3::Zero();
    std::size_t normal_count = 0;
    std::vector<std::size_t> members;
  };
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const Point3& p = scan.points[i].position;
    const auto [it, inserted] = slot.try_emplace(voxel_key(p, resolution), cells.size());
    if (inserted) cells.emplace_back();
    Cell& c = cells[it->second];
    c.sum += p;
    c.members.push_back(i);
    if (i < valid.size() && valid[i]) {
      c.normal_sum += c.normal_sum.dot(normals[i]) >= 0.0 ? normals[i] : Vec3(-normals[i]);
      ++c.normal_count;
    }
  }
  std::vector<FeaturePoint> out;
  out.reserve(cells.size());
  for (const Cell& c : cells) {
    const Point3 centroid = c.sum / static_cast<double>(c.members.size());
    std::size_t best = c.members.front();
    double best_d2 = (scan.points[best].position - centroid).squaredNorm();
    for (std::size_t m : c.members) {
      const double d2 = (scan.points[m].position - centroid).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = m;
      }
    }
    FeaturePoint f;
    f.position = scan.points[best].position;
    f.time_offset = scan.points[best].time_offset;
    if (c.normal_count > 0 && c.normal_sum.norm() > 1e-9) {
      Vec3 n = c.normal_sum.normalized();
      if (n.dot(f.position) > 0.0) n = -n;  // keep facing the sensor
      f.normal = n;
    }
    out.push_back(f);
  }
  return out;
}

class Odometry {
 public:
  Odometry(RunConfig config, StructureTable table)
      : cfg_(std::move(config)), table_(std::move(table)), assoc_(cfg_.assoc_config()), map_(cfg_.map_options()) {}

  const RunConfig& config() const { return cfg_; }
  const StructureTable& table() const { return table_; }
  const FilterState& state() const { return state_; }
  const MapIndex& map() const { return map_; }
  bool initialized() const { return initialized_; }

  /// Standstill initialization from the IMU samples in [t0, t0 + init_duration].
  /// The world frame is the initial IMU frame; gravity is the negated mean
  /// specific force scaled to 9.81, the gyro bias the mean angular rate.
  void initialize(std::span<const ImuSample> imu, double t0) {
    Vec3 acc = Vec3::Zero(), gyro = Vec3::Zero();
    std::size_t n = 0;
    for (const ImuSample& s : imu) {
      if (s.timestamp < t0 || s.timestamp > t0 + cfg_.init_duration) continue;
      acc += s.linear_acceleration;
      gyro += s.angular_velocity;
      ++n;
    }
    if (n == 0 || !(acc.norm() > 1e-6))
      throw ScanError(ScanErrorKind::not_initialized, "no IMU samples in the initialization window");
    acc /= static_cast<double>(n);
    gyro /= static_cast<double>(n);
    using namespace state_index;
    state_ = FilterState{};
    state_.time = t0;
    state_.nav.gravity = -acc.normalized() * 9.81;
    state_.nav.gyro_bias = gyro;
    Cov18& P = state_.cov;
    P.setZero();
    P.block<3, 3>(kRot, kRot).diagonal().setConstant(1e-6);
    P.block<3, 3>(kPos, kPos).diagonal().setConstant(1e-6);
    P.block<3, 3>(kVel, kVel).diagonal().setConstant(1e-4);
    P.block<3, 3>(kGyroBias, kGyroBias).diagonal().setConstant(1e-6);
    P.block<3, 3>(kAccelBias, kAccelBias).diagonal().setConstant(1e-3);
    P.block<3, 3>(kGravity, kGravity).diagonal().setConstant(1e-4);
    initialized_ = true;
  }

  /// Processes one sweep; `imu` must cover (state time, scan_end].
  ScanDiagnostics process_scan(const RingScan& scan, std::span<const ImuSample> imu) {
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
      return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };
    if (!initialized_) throw ScanError(ScanErrorKind::not_initialized, "pipeline not initialized");
    if (!table_.same_shape(scan.ring_count, scan.points_per_ring))
      throw ScanError(ScanErrorKind::dimension_mismatch, "scan dimensions do not match the structure table");
    if (scan.points.empty()) throw ScanError(ScanErrorKind::empty_scan, "scan has no points");
    if (!(scan.scan_end > state_.time)) throw ScanError(ScanErrorKind::out_of_order, "scan ends before filter time");

    ScanDiagnostics d;
    d.timestamp = scan.scan_end;
    d.points_in = scan.points.size();

    const ScanNormals normals = estimate_scan_normals(scan, table_, cfg_.ringfals);
    d.timings.projection_ms = normals.projection_ms;
    d.timings.box_filter_ms = normals.box_filter_ms;
    d.timings.smoothing_ms = normals.smoothing_ms;
    d.normals_valid = normals.valid_count();
    if (d.normals_valid == 0) throw ScanError(ScanErrorKind::no_normals, "no valid normals in scan");

    auto t0 = clock::now();
    const std::vector<FeaturePoint> feats =
        voxel_downsample(scan, normals.normal, normals.valid, cfg_.downsample_resolution);
    d.points_downsampled = feats.size();
    d.timings.downsample_ms = ms_since(t0);

    t0 = clock::now();
    Propagation prop;
    try {
      prop = imu_propagate(state_, imu, cfg_.imu_noise, scan.scan_end, cfg_.imu_max_gap);
    } catch (const PropagationError& e) {
      throw ScanError(ScanErrorKind::out_of_order, std::string("IMU propagation failed: ") + e.what());
    }
    d.timings.propagate_ms = ms_since(t0);

    // Deskew into the scan-end LiDAR frame, normals included.
    t0 = clock::now();
    std::vector<FeaturePoint> pts;
    pts.reserve(feats.size());
    for (const FeaturePoint& f : feats) {
      const auto T = lidar_motion_to_end(prop.buffer, cfg_.imu_T_lidar, scan.scan_start + f.time_offset);
      if (!T) {
        ++d.deskew_dropped;
        continue;
      }
      FeaturePoint g = f;
      g.position = *T * f.position;
      if (f.normal) g.normal = T->rotation * *f.normal;
      pts.push_back(g);
    }
    d.timings.deskew_ms = ms_since(t0);

    t0 = clock::now();
    FilterState post = prop.state;
    if (map_.empty()) {
      d.update_skipped = true;
    } else {
      // Correspondences at the prediction; re-evaluated per iterate only when configured.
      AssociationHistogram hist;
      std::vector<std::pair<std::size_t, Correspondence>> corr;
      auto associate_at = [&](const NavState& x) {
        hist = {};
        corr.clear();
        const Pose T = x.pose() * cfg_.imu_T_lidar;
        for (std::size_t i = 0; i < pts.size(); ++i) {
          const FeaturePoint& f = pts[i];
          if (!f.normal) continue;
          const auto c = associate(map_, T * f.position, T.rotation * *f.normal, T.translation, assoc_);
          hist.add(c);
          if (c) corr.emplace_back(i, *c);
        }
      };
      associate_at(prop.state.nav);
      const ResidualProvider provider = [&](const NavState& x, std::vector<Measurement>& meas) {
        if (cfg_.reassociate) associate_at(x);
        for (const auto& [i, c] : corr) {
          const Linearization lin = residual_and_jacobian(x, cfg_.imu_T_lidar, pts[i].position, c);
          meas.push_back({lin.z, lin.H, c.noise});
        }
      };
      if (corr.size() < cfg_.min_correspondences) {
        d.update_skipped = true;
        d.histogram = hist;
        d.warnings.push_back("only " + std::to_string(corr.size()) + " correspondences; update skipped");
      } else {
        const IekfResult r = iekf_update(prop.state, provider, cfg_.iekf);
        post = r.state;
        d.iterations = r.iterations;
        d.converged = r.converged;
        d.rejected = r.rejected;
        d.histogram = hist;
        if (r.rejected) d.warnings.push_back("ill-conditioned update rejected");
      }
    }
    d.timings.update_ms = ms_since(t0);

    t0 = clock::now();
    const Pose T = post.nav.pose() * cfg_.imu_T_lidar;
    std::vector<SurfacePoint> world;
    world.reserve(pts.size());
    for (const FeaturePoint& f : pts) {
      SurfacePoint sp;
      sp.position = T * f.position;
      if (f.normal) sp.normal = T.rotation * *f.normal;
      world.push_back(sp);
    }
    map_.insert_scan(world);
    d.timings.map_ms = ms_since(t0);

    state_ = post;
    d.pose = state_.nav.pose();
    return d;
  }

 private:
  RunConfig cfg_;
  StructureTable table_;
  AssocConfig assoc_;
  MapIndex map_;
  FilterState state_;
  bool initialized_ = false;
};

}  // namespace loglio
