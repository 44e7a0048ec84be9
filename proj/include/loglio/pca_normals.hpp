#pragma once

// Reference normal estimator: k nearest neighbors from a kd-tree, then the
// smallest-eigenvalue eigenvector of the neighborhood covariance.

#include "loglio/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

namespace loglio {

/// Static kd-tree over a point set, exact k-nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> points) : pts_(points.begin(), points.end()) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), 0u);
    if (!pts_.empty()) build(0, idx_.size());
  }

  std::size_t size() const { return pts_.size(); }

  /// Indices of the k nearest points, nearest first; ties broken by index.
  std::vector<std::uint32_t> knn(const Point3& q, std::size_t k) const {
    std::vector<std::uint32_t> out;
    if (k == 0 || pts_.empty()) return out;
    Heap heap;
    if (!nodes_.empty()) search(0, q, k, heap);
    out.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
      out[i] = heap.top().second;
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in idx_ for leaves
    std::int32_t left = -1, right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };
  using Entry = std::pair<double, std::uint32_t>;
  using Heap = std::priority_queue<Entry>;  // max-heap on (d2, index)

  static constexpr std::size_t kLeaf = 12;

  std::int32_t build(std::size_t b, std::size_t e) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(e)});
    if (e - b <= kLeaf) return id;
    Vec3 lo = pts_[idx_[b]], hi = lo;
    for (std::size_t i = b; i < e; ++i) {
      lo = lo.cwiseMin(pts_[idx_[i]]);
      hi = hi.cwiseMax(pts_[idx_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = b + (e - b) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(b), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(e),
                     [&](std::uint32_t x, std::uint32_t y) { return pts_[x][axis] < pts_[y][axis]; });
    const double split = pts_[idx_[mid]][axis];
    const std::int32_t l = build(b, mid);
    const std::int32_t r = build(mid, e);
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.axis = axis;
    n.split = split;
    n.left = l;
    n.right = r;
    return id;
  }

  void search(std::int32_t id, const Point3& q, std::size_t k, Heap& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t j = idx_[i];
        const Entry e{(pts_[j] - q).squaredNorm(), j};
        if (heap.size() < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      return;
    }
    const double d = q[n.axis] - n.split;
    const std::int32_t near = d < 0.0 ? n.left : n.right;
    const std::int32_t far = d < 0.0 ? n.right : n.left;
    search(near, q, k, heap);
    if (heap.size() < k || d * d <= heap.top().first) search(far, q, k, heap);
  }

  std::vector<Point3> pts_;
  std::vector<std::uint32_t> idx_;
  std::vector<Node> nodes_;
};

struct PcaNormals {
  std::vector<Vec3> normal;
  std::vector<std::uint8_t> valid;
  double elapsed_ms = 0.0;
};

/// Normal of every point from its k nearest neighbors (itself included),
/// oriented toward the sensor origin.
inline PcaNormals pca_normals(std::span<const Point3> points, std::size_t k = 20) {
  const auto t0 = std::chrono::steady_clock::now();
  PcaNormals out;
  out.normal.assign(points.size(), Vec3::Zero());
  out.valid.assign(points.size(), 0);
  const KdTree tree(points);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nb = tree.knn(points[i], k);
    if (nb.size() < 3) continue;
    Point3 c = Point3::Zero();
    for (std::uint32_t j : nb) c += points[j];
    c /= static_cast<double>(nb.size());
    Mat3 m = Mat3::Zero();
    for (std::uint32_t j : nb) m.noalias() += (points[j] - c) * (points[j] - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(m);
    if (!(es.eigenvalues()[1] > 1e-12 * std::max(1e-300, es.eigenvalues()[2]))) continue;
    Vec3 n = es.eigenvectors().col(0).normalized();
    if (n.dot(points[i]) > 0.0) n = -n;
    out.normal[i] = n;
    out.valid[i] = 1;
  }
  out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline PcaNormals pca_normals(const RingScan& scan, std::size_t k = 20) {
  std::vector<Point3> pts;
  pts.reserve(scan.points.size());
  for (const RingPoint& p : scan.points) pts.push_back(p.position);
  return pca_normals(std::span<const Point3>(pts), k);
}

}  // namespace loglio
