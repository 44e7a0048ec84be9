#pragma once

// Hierarchical data association of a world-frame scan point with the map:
// nearest neighbors -> visibility check -> normal consistency check ->
// large-scale surfel, small-scale surfel, plane fit (first match wins).

#include "loglio/core.hpp"
#include "loglio/map_index.hpp"
#include "loglio/voxel_stats.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace loglio {

enum class CorrespondenceKind { large_surfel = 0, small_surfel = 1, plane = 2 };

inline std::string_view to_string(CorrespondenceKind k) {
  switch (k) {
    case CorrespondenceKind::large_surfel: return "large_surfel";
    case CorrespondenceKind::small_surfel: return "small_surfel";
    case CorrespondenceKind::plane: return "plane";
  }
  return "unknown";
}

struct Correspondence {
  CorrespondenceKind kind = CorrespondenceKind::plane;
  Vec3 normal = Vec3::UnitZ();     // unit, world frame
  Point3 anchor = Point3::Zero();  // a point on the associated element
  double noise = 1e-2;             // variance, m^2
};

struct KindNoise {
  double large_surfel = 2e-3;
  double small_surfel = 5e-3;
  double plane = 1e-2;

  double of(CorrespondenceKind k) const {
    switch (k) {
      case CorrespondenceKind::large_surfel: return large_surfel;
      case CorrespondenceKind::small_surfel: return small_surfel;
      case CorrespondenceKind::plane: return plane;
    }
    return plane;
  }
};

enum class AssociationMode { hierarchical, plane_only };

struct AssocConfig {
  std::size_t k = 5;
  double max_radius = 2.0;
  double alpha_deg = 60.0;
  double merge_plane_distance = 0.1;
  double plane_fit_tolerance = 0.1;
  SurfelThresholds surfel;
  KindNoise noise;
  AssociationMode mode = AssociationMode::hierarchical;

  /// Defaults tied to the map resolution: 5 voxels search radius, quarter-voxel merge distance.
  static AssocConfig for_resolution(double resolution) {
    AssocConfig c;
    c.max_radius = 5.0 * resolution;
    c.merge_plane_distance = resolution / 4.0;
    return c;
  }
};

/// True when the map normal faces the sensor, i.e. the angle between the normal
/// and the ray from the point to the sensor is at most 90 degrees.
inline bool visibility_check(const Vec3& map_normal, const Point3& point_world,
                             const Point3& sensor_origin_world) {
  return map_normal.dot(sensor_origin_world - point_world) >= 0.0;
}

/// Mean unsigned angle between the query normal and the neighbor normals is at most alpha.
inline bool consistency_check(const Vec3& query_normal, std::span<const Vec3> neighbor_normals,
                              double alpha_deg) {
  if (neighbor_normals.empty()) return false;
  double sum = 0.0;
  for (const Vec3& n : neighbor_normals) sum += unsigned_angle_between(query_normal, n);
  return rad2deg(sum / static_cast<double>(neighbor_normals.size())) <= alpha_deg;
}

/// Least-squares plane through points: unit normal plus centroid.
struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();
  Point3 centroid = Point3::Zero();
};

inline std::optional<PlaneFit> fit_plane(std::span<const Point3> pts) {
  if (pts.size() < 3) return std::nullopt;
  Point3 c = Point3::Zero();
  for (const Point3& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 m = Mat3::Zero();
  for (const Point3& p : pts) m.noalias() += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(m);
  // A line or a single point gives no unique plane.
  if (!(es.eigenvalues()[1] > 1e-12 * std::max(1.0, es.eigenvalues()[2]))) return std::nullopt;
  return PlaneFit{es.eigenvectors().col(0).normalized(), c};
}

enum class AssociationOutcome {
  no_neighbors,
  not_visible,
  inconsistent,
  large_surfel,
  small_surfel,
  plane,
  plane_rejected,
};

/// Association result plus which hierarchy levels were tried.
struct AssociationTrace {
  std::optional<Correspondence> correspondence;
  AssociationOutcome outcome = AssociationOutcome::no_neighbors;
  bool large_tried = false;
  bool small_tried = false;
  bool plane_tried = false;
};

inline AssociationTrace associate_traced(const MapIndex& map, const Point3& point,
                                         const Vec3& query_normal, const Point3& sensor_origin,
                                         const AssocConfig& cfg) {
  AssociationTrace tr;
  const std::vector<Neighbor> nbrs = map.knn(point, cfg.k, cfg.max_radius);
  if (nbrs.empty()) return tr;

  // Neighbors without a stored normal cannot be checked and are kept as-is.
  std::vector<const MapPoint*> kept;
  std::vector<Vec3> kept_normals;
  for (const Neighbor& nb : nbrs) {
    const MapPoint& mp = *nb.point;
    if (mp.normal && !visibility_check(*mp.normal, point, sensor_origin)) continue;
    kept.push_back(&mp);
    if (mp.normal) kept_normals.push_back(*mp.normal);
  }
  if (kept.empty()) {
    tr.outcome = AssociationOutcome::not_visible;
    return tr;
  }
  if (!kept_normals.empty() && !consistency_check(query_normal, kept_normals, cfg.alpha_deg)) {
    tr.outcome = AssociationOutcome::inconsistent;
    return tr;
  }
  auto aligned = [&](Vec3 n) { return n.dot(query_normal) < 0.0 ? Vec3(-n) : n; };

  if (cfg.mode == AssociationMode::hierarchical) {
    // Large scale: merge the distributions of the distinct voxels owning the neighbors.
    tr.large_tried = true;
    std::vector<const VoxelStats*> owners;
    std::vector<VoxelKey> keys;
    for (const MapPoint* mp : kept) {
      if (std::find(keys.begin(), keys.end(), mp->key) != keys.end()) continue;
      if (const auto* v = map.find_voxel(mp->key)) {
        keys.push_back(mp->key);
        owners.push_back(&v->stats);
      }
    }
    if (owners.size() >= 2) {
      VoxelStats merged;
      for (const VoxelStats* s : owners) merged = merge(merged, *s);
      if (auto sv = classify_surfel(merged, cfg.surfel, SurfelScale::large)) {
        bool coplanar = true;
        for (const VoxelStats* s : owners) {
          if (std::abs(sv->normal.dot(s->mean() - sv->mean)) > cfg.merge_plane_distance) {
            coplanar = false;
            break;
          }
        }
        if (coplanar) {
          tr.outcome = AssociationOutcome::large_surfel;
          tr.correspondence = Correspondence{CorrespondenceKind::large_surfel, aligned(sv->normal),
                                             sv->mean, cfg.noise.large_surfel};
          return tr;
        }
      }
    }

    // Small scale: the fixed voxel containing the query point.
    tr.small_tried = true;
    if (const auto* v = map.find_voxel(map.key_of(point)); v && v->stats.fixed) {
      if (auto sv = classify_surfel(v->stats, cfg.surfel, SurfelScale::small)) {
        tr.outcome = AssociationOutcome::small_surfel;
        tr.correspondence = Correspondence{CorrespondenceKind::small_surfel, aligned(sv->normal),
                                           sv->mean, cfg.noise.small_surfel};
        return tr;
      }
    }
  }

  tr.plane_tried = true;
  tr.outcome = AssociationOutcome::plane_rejected;
  std::vector<Point3> pts;
  pts.reserve(kept.size());
  for (const MapPoint* mp : kept) pts.push_back(mp->position);
  const auto plane = fit_plane(pts);
  if (!plane) return tr;
  for (const Point3& p : pts) {
    if (std::abs(plane->normal.dot(p - plane->centroid)) > cfg.plane_fit_tolerance) return tr;
  }
  tr.outcome = AssociationOutcome::plane;
  tr.correspondence = Correspondence{CorrespondenceKind::plane, aligned(plane->normal),
                                     plane->centroid, cfg.noise.plane};
  return tr;
}

inline std::optional<Correspondence> associate(const MapIndex& map, const Point3& point,
                                               const Vec3& query_normal, const Point3& sensor_origin,
                                               const AssocConfig& cfg) {
  return associate_traced(map, point, query_normal, sensor_origin, cfg).correspondence;
}

/// Per-scan counts of each association kind plus failures.
struct AssociationHistogram {
  std::array<std::size_t, 3> by_kind{};
  std::size_t none = 0;

  void add(const std::optional<Correspondence>& c) {
    if (c) {
      ++by_kind[static_cast<std::size_t>(c->kind)];
    } else {
      ++none;
    }
  }
  std::size_t count(CorrespondenceKind k) const { return by_kind[static_cast<std::size_t>(k)]; }
  std::size_t matched() const { return by_kind[0] + by_kind[1] + by_kind[2]; }
};

}  // namespace loglio
