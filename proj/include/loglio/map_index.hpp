#pragma once

// World map: voxel-keyed distributions plus a bounded set of retained points
// per voxel, searched with an exact expanding-shell nearest neighbor query.

#include "loglio/core.hpp"
#include "loglio/voxel_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace loglio {

struct VoxelKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  VoxelKey operator+(const VoxelKey& o) const { return {x + o.x, y + o.y, z + o.z}; }
  VoxelKey operator-(const VoxelKey& o) const { return {x - o.x, y - o.y, z - o.z}; }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    // Large primes, as in the usual spatial hashing of voxel grids.
    return static_cast<std::size_t>(k.x * 73856093LL ^ k.y * 19349669LL ^ k.z * 83492791LL);
  }
};

inline VoxelKey voxel_key(const Point3& p, double resolution) {
  return {static_cast<std::int64_t>(std::floor(p.x() / resolution)),
          static_cast<std::int64_t>(std::floor(p.y() / resolution)),
          static_cast<std::int64_t>(std::floor(p.z() / resolution))};
}

struct MapPoint {
  Point3 position = Point3::Zero();
  std::optional<Vec3> normal;
  VoxelKey key;
  std::uint64_t id = 0;  // insertion order
};

struct Neighbor {
  const MapPoint* point = nullptr;
  double squared_distance = 0.0;

  double distance() const { return std::sqrt(squared_distance); }
};

struct MapOptions {
  double resolution = 0.4;
  std::size_t retained_cap = 5;
  FixPolicy fix;
};

class MapIndex {
 public:
  struct Voxel {
    VoxelStats stats;
    std::vector<std::size_t> retained;  // indices into points()
  };

  explicit MapIndex(MapOptions options = {}) : opt_(options) {
    if (!(opt_.resolution > 0.0)) throw std::invalid_argument("map resolution must be positive");
  }

  const MapOptions& options() const { return opt_; }
  double resolution() const { return opt_.resolution; }
  std::size_t point_count() const { return points_.size(); }
  std::size_t voxel_count() const { return voxels_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<MapPoint>& points() const { return points_; }
  /// Number of points folded into voxel statistics so far.
  std::size_t accumulated_count() const { return accumulated_; }

  VoxelKey key_of(const Point3& p) const { return voxel_key(p, opt_.resolution); }

  /// Accumulates every point into its voxel, retains it while the voxel is
  /// under its cap, then runs the fixing policy on each touched voxel.
  void insert_scan(std::span<const SurfacePoint> points) {
    std::vector<VoxelKey> touched;
    std::unordered_map<VoxelKey, std::vector<SurfacePoint>, VoxelKeyHash> batches;
    for (const SurfacePoint& sp : points) {
      const VoxelKey k = key_of(sp.position);
      auto [it, inserted] = batches.try_emplace(k);
      if (inserted) touched.push_back(k);
      it->second.push_back(sp);
    }
    for (const VoxelKey& k : touched) {
      const auto& batch = batches[k];
      Voxel& v = voxels_[k];
      if (v.stats.fixed) continue;
      v.stats = accumulate(std::move(v.stats), std::span<const SurfacePoint>(batch));
      accumulated_ += batch.size();
      for (const SurfacePoint& sp : batch) {
        if (v.retained.size() >= opt_.retained_cap) break;
        v.retained.push_back(points_.size());
        points_.push_back({sp.position, sp.normal, k, next_id_++});
      }
      v.stats = try_fix(std::move(v.stats), opt_.fix);
    }
  }

  const Voxel* find_voxel(const VoxelKey& k) const {
    const auto it = voxels_.find(k);
    return it == voxels_.end() ? nullptr : &it->second;
  }

  std::optional<VoxelStats> voxel_of(const Point3& p) const {
    const Voxel* v = find_voxel(key_of(p));
    if (!v) return std::nullopt;
    return v->stats;
  }

  /// Exactly the k nearest retained points within max_radius, ascending by
  /// distance, ties broken by insertion order.
  std::vector<Neighbor> knn(const Point3& query, std::size_t k, double max_radius) const {
    std::vector<Neighbor> out;
    if (k == 0 || points_.empty() || !(max_radius >= 0.0)) return out;
    const double r2 = max_radius * max_radius;
    const VoxelKey center = key_of(query);
    const double res = opt_.resolution;
    const auto max_shell = static_cast<std::int64_t>(std::ceil(max_radius / res)) + 1;

    auto better = [](const Neighbor& a, const Neighbor& b) {
      if (a.squared_distance != b.squared_distance) return a.squared_distance < b.squared_distance;
      return a.point->id < b.point->id;
    };
    auto visit = [&](const VoxelKey& key) {
      const Voxel* v = find_voxel(key);
      if (!v) return;
      for (std::size_t idx : v->retained) {
        const MapPoint& mp = points_[idx];
        const double d2 = (mp.position - query).squaredNorm();
        if (d2 <= r2) out.push_back({&mp, d2});
      }
    };

    for (std::int64_t L = 0; L <= max_shell; ++L) {
      for_each_in_shell(L, [&](const VoxelKey& off) { visit(center + off); });
      // Any point beyond shell L is at least L * res from the query; strict
      // comparisons keep equal-distance ties resolvable by insertion order.
      const double bound = static_cast<double>(L) * res;
      if (out.size() >= k) {
        std::nth_element(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k - 1), out.end(),
                         better);
        if (out[k - 1].squared_distance < bound * bound) break;
      }
      if (bound > max_radius) break;
    }
    std::sort(out.begin(), out.end(), better);
    if (out.size() > k) out.resize(k);
    return out;
  }

  template <class F>
  void for_each_voxel(F&& f) const {
    for (const auto& [k, v] : voxels_) f(k, v);
  }

 private:
  template <class F>
  static void for_each_in_shell(std::int64_t L, F&& f) {
    if (L == 0) {
      f(VoxelKey{0, 0, 0});
      return;
    }
    for (std::int64_t dx = -L; dx <= L; ++dx) {
      for (std::int64_t dy = -L; dy <= L; ++dy) {
        const bool on_face = std::abs(dx) == L || std::abs(dy) == L;
        if (on_face) {
          for (std::int64_t dz = -L; dz <= L; ++dz) f(VoxelKey{dx, dy, dz});
        } else {
          f(VoxelKey{dx, dy, -L});
          f(VoxelKey{dx, dy, L});
        }
      }
    }
  }

  MapOptions opt_;
  std::unordered_map<VoxelKey, Voxel, VoxelKeyHash> voxels_;
  std::vector<MapPoint> points_;
  std::size_t accumulated_ = 0;
  std::uint64_t next_id_ = 0;
};

}  // namespace loglio
