#pragma once

// Incremental point distribution of one map voxel.
//
// Only n, P = sum p and the upper triangle of S = sum p p^T are stored; the
// scatter matrix is recovered as M = S - P P^T / n, so batches and whole
// voxels merge by plain addition.

#include "loglio/core.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>

namespace loglio {

struct SurfacePoint {
  Point3 position = Point3::Zero();
  std::optional<Vec3> normal;
};

/// Eigen-analysis of a scatter matrix, eigenvalues ascending.
struct Shape {
  Vec3 eigenvalues = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // eigenvector of the smallest eigenvalue
  double rho = 0.0;             // planarity 2 (l2 - l1) / (l1 + l2 + l3)
  double gamma = 1.0;           // l2 / l1, +inf for an exact plane
};

enum class SurfelScale { small, large };

struct SurfelView {
  Point3 mean = Point3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double rho = 0.0;
  double gamma = 1.0;
  SurfelScale scale = SurfelScale::small;
};

struct SurfelThresholds {
  double rho_min = 0.95;
  double gamma_min = 100.0;
  std::size_t min_points = 25;
};

struct FixPolicy {
  std::size_t eta = 25;
  double angle_threshold_deg = 20.0;
};

/// Shape frozen when a voxel is fixed.
struct CachedSurfel {
  Point3 mean = Point3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Shape shape;
};

struct VoxelStats {
  std::size_t n = 0;
  Vec3 sum = Vec3::Zero();
  /// Upper triangle of sum p p^T: xx, xy, xz, yy, yz, zz.
  std::array<double, 6> sq{};
  /// Sign-aligned sum of measured normals and how many contributed.
  Vec3 normal_sum = Vec3::Zero();
  std::size_t normal_count = 0;
  bool fixed = false;
  std::optional<CachedSurfel> surfel;

  bool empty() const { return n == 0; }

  Point3 mean() const { return n == 0 ? Point3::Zero() : Point3(sum / static_cast<double>(n)); }

  Mat3 second_moment() const {
    Mat3 s;
    s << sq[0], sq[1], sq[2],  //
        sq[1], sq[3], sq[4],   //
        sq[2], sq[4], sq[5];
    return s;
  }

  /// M = S - P P^T / n.
  Mat3 scatter() const {
    if (n == 0) return Mat3::Zero();
    return second_moment() - sum * sum.transpose() / static_cast<double>(n);
  }

  /// Normalized average of the accumulated measured normals.
  std::optional<Vec3> mean_normal() const {
    if (normal_count == 0) return std::nullopt;
    const double len = normal_sum.norm();
    if (!(len > 1e-12)) return std::nullopt;
    return Vec3(normal_sum / len);
  }
};

namespace detail {

inline void add_normal(VoxelStats& s, const Vec3& normal) {
  s.normal_sum += s.normal_sum.dot(normal) >= 0.0 ? normal : Vec3(-normal);
  ++s.normal_count;
}

}  // namespace detail

/// Adds a batch of points. Fixed voxels are returned unchanged.
inline VoxelStats accumulate(VoxelStats stats, std::span<const SurfacePoint> points) {
  if (stats.fixed) return stats;
  for (const SurfacePoint& sp : points) {
    const Point3& p = sp.position;
    ++stats.n;
    stats.sum += p;
    stats.sq[0] += p.x() * p.x();
    stats.sq[1] += p.x() * p.y();
    stats.sq[2] += p.x() * p.z();
    stats.sq[3] += p.y() * p.y();
    stats.sq[4] += p.y() * p.z();
    stats.sq[5] += p.z() * p.z();
    if (sp.normal) detail::add_normal(stats, *sp.normal);
  }
  return stats;
}

inline VoxelStats accumulate(VoxelStats stats, const SurfacePoint& point) {
  return accumulate(std::move(stats), std::span<const SurfacePoint>(&point, 1));
}

/// Distribution of the union of two point sets. The result is never fixed.
inline VoxelStats merge(const VoxelStats& a, const VoxelStats& b) {
  VoxelStats out;
  out.n = a.n + b.n;
  out.sum = a.sum + b.sum;
  for (std::size_t i = 0; i < 6; ++i) out.sq[i] = a.sq[i] + b.sq[i];
  out.normal_sum = a.normal_sum;
  out.normal_count = a.normal_count;
  if (b.normal_count > 0) {
    out.normal_sum += a.normal_sum.dot(b.normal_sum) >= 0.0 ? b.normal_sum : Vec3(-b.normal_sum);
    out.normal_count += b.normal_count;
  }
  return out;
}

/// Eigen-analysis of a scatter matrix. The returned normal is oriented to have a
/// non-negative dot with `reference` when one is given, otherwise its largest
/// magnitude component is made positive.
inline Shape shape_of(const Mat3& scatter, const std::optional<Vec3>& reference = std::nullopt) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  Shape sh;
  sh.eigenvalues = es.eigenvalues().cwiseMax(0.0);
  sh.normal = es.eigenvectors().col(0).normalized();
  const double l1 = sh.eigenvalues[0];
  const double l2 = sh.eigenvalues[1];
  const double trace = sh.eigenvalues.sum();
  if (trace > 0.0) {
    sh.rho = 2.0 * (l2 - l1) / trace;
    sh.gamma = l1 < 1e-12 * trace ? std::numeric_limits<double>::infinity() : l2 / l1;
  } else {
    sh.rho = 0.0;
    sh.gamma = 1.0;
  }
  if (reference) {
    if (sh.normal.dot(*reference) < 0.0) sh.normal = -sh.normal;
  } else {
    Eigen::Index i = 0;
    sh.normal.cwiseAbs().maxCoeff(&i);
    if (sh.normal[i] < 0.0) sh.normal = -sh.normal;
  }
  return sh;
}

/// Shape of a voxel's distribution; requires at least three points.
inline std::optional<Shape> shape(const VoxelStats& stats) {
  if (stats.n < 3) return std::nullopt;
  return shape_of(stats.scatter(), stats.mean_normal());
}

inline bool passes(const Shape& sh, const SurfelThresholds& th) {
  return sh.rho >= th.rho_min && sh.gamma >= th.gamma_min;
}

/// Surfel view of a voxel, or nothing when the distribution is not planar enough.
/// Fixed voxels answer from the shape frozen at fixing time.
inline std::optional<SurfelView> classify_surfel(const VoxelStats& stats, const SurfelThresholds& th,
                                                 SurfelScale scale = SurfelScale::small) {
  if (stats.n < th.min_points) return std::nullopt;
  if (stats.fixed && stats.surfel) {
    const CachedSurfel& c = *stats.surfel;
    if (!passes(c.shape, th)) return std::nullopt;
    return SurfelView{c.mean, c.normal, c.shape.rho, c.shape.gamma, scale};
  }
  const auto sh = shape(stats);
  if (!sh || !passes(*sh, th)) return std::nullopt;
  return SurfelView{stats.mean(), sh->normal, sh->rho, sh->gamma, scale};
}

/// Fix-on-convergence policy.
///
/// From eta points on, the voxel is fixed as soon as the averaged measured
/// normal agrees with the distribution normal within the angle threshold; the
/// frozen normal is then the average of the two. A voxel that reaches 2 eta
/// points without agreeing is fixed with the distribution normal alone.
inline VoxelStats try_fix(VoxelStats stats, const FixPolicy& policy = {}) {
  if (stats.fixed || stats.n < policy.eta) return stats;
  const auto sh = shape(stats);
  if (!sh) return stats;
  const auto measured = stats.mean_normal();
  if (measured && rad2deg(angle_between(*measured, sh->normal)) < policy.angle_threshold_deg) {
    stats.fixed = true;
    stats.surfel = CachedSurfel{stats.mean(), (*measured + sh->normal).normalized(), *sh};
    return stats;
  }
  if (stats.n >= 2 * policy.eta) {
    stats.fixed = true;
    stats.surfel = CachedSurfel{stats.mean(), sh->normal, *sh};
  }
  return stats;
}

}  // namespace loglio
