#pragma once

// Ring-based fast approximate least squares normal estimation.
//
// A spinning LiDAR fires each ring at a fixed vertical angle and a fixed set
// of azimuth columns, so the bearing of every (ring, column) cell is constant
// across scans. The per-cell moment matrix sum(v v^T) over a window of
// neighboring bearings therefore depends only on sensor geometry and can be
// inverted once. For a new scan the normal of a cell solves
//     min sum_i (v_i^T n - 1/r_i)^2   =>   n = M^-1 * sum_i v_i / r_i
// which only needs a box filter over the inverse-range image.

#include "loglio/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace loglio {

struct StructureCell {
  /// (cos azimuth, sin azimuth, cos elevation, sin elevation) of the first observation.
  Vec4 structure = Vec4::Zero();
  Vec3 bearing = Vec3::Zero();
  Mat3 moment_inv = Mat3::Zero();
  bool observed = false;
  /// Never observed; bearing completed from the ring's elevation and the column azimuth.
  bool inferred = false;
  bool valid = false;

  bool known() const { return observed || inferred; }
};

/// Per-sensor lookup table of bearings and inverted neighborhood moment matrices.
class StructureTable {
 public:
  StructureTable() = default;
  StructureTable(int rows, int cols, int window)
      : rows_(rows), cols_(cols), window_(window), cells_(static_cast<std::size_t>(rows) * cols) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int window() const { return window_; }
  double horizontal_resolution() const { return 2.0 * kPi / cols_; }

  /// Column of an azimuth: round(azimuth / H_res) wrapped into [0, cols).
  int column_of(double azimuth) const {
    long c = std::lround(azimuth / horizontal_resolution());
    c %= cols_;
    if (c < 0) c += cols_;
    return static_cast<int>(c);
  }

  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * cols_ + col;
  }
  const StructureCell& at(int row, int col) const { return cells_[index(row, col)]; }
  StructureCell& at(int row, int col) { return cells_[index(row, col)]; }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(cells_.begin(), cells_.end(), [](const StructureCell& c) { return c.valid; }));
  }

  bool same_shape(int rows, int cols) const { return rows == rows_ && cols == cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  int window_ = 0;
  std::vector<StructureCell> cells_;
};

namespace detail {

inline int wrap_col(int c, int cols) {
  c %= cols;
  return c < 0 ? c + cols : c;
}

/// Condition number of a symmetric PSD 3x3 matrix; infinity when singular.
inline double condition_number(const Mat3& m) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(m, Eigen::EigenvaluesOnly);
  const Vec3& ev = es.eigenvalues();
  if (!(ev[0] > 0.0)) return std::numeric_limits<double>::infinity();
  return ev[2] / ev[0];
}

inline void check_window(int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("window must be a positive odd integer");
}

}  // namespace detail

/// Accumulates first observations per cell across several scans, then builds the table.
class StructureTableBuilder {
 public:
  StructureTableBuilder(int rows, int cols) : rows_(rows), cols_(cols), table_(rows, cols, 1) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("structure table needs positive dimensions");
  }

  void add(const RingScan& scan) {
    if (scan.ring_count != rows_ || scan.points_per_ring != cols_)
      throw std::invalid_argument("scan dimensions do not match the structure table");
    for (const RingPoint& p : scan.points) {
      if (p.ring < 0 || p.ring >= rows_ || !(p.range > 0.0)) continue;
      StructureCell& cell = table_.at(p.ring, table_.column_of(p.azimuth));
      if (cell.observed) continue;
      const Vec3 v = p.position / p.range;
      const double elevation = std::asin(std::clamp(v.z(), -1.0, 1.0));
      cell.structure = Vec4(std::cos(p.azimuth), std::sin(p.azimuth), std::cos(elevation),
                            std::sin(elevation));
      cell.bearing = bearing(p.azimuth, elevation);
      cell.observed = true;
    }
    ++scans_;
  }

  int scans_added() const { return scans_; }

  /// With `complete_rings`, cells never hit in the added scans (sky, out of
  /// range) take the median elevation of their ring and their column azimuth,
  /// so later scans seeing those directions still get normals. Rings without
  /// any observation stay unknown.
  StructureTable build(int window, double condition_cap = 1e6, bool complete_rings = true) const {
    detail::check_window(window);
    StructureTable filled = table_;
    if (complete_rings) {
      for (int r = 0; r < rows_; ++r) {
        std::vector<double> elev;
        for (int c = 0; c < cols_; ++c) {
          const StructureCell& cell = table_.at(r, c);
          if (cell.observed) elev.push_back(std::atan2(cell.structure[3], cell.structure[2]));
        }
        if (elev.empty()) continue;
        const auto mid = elev.begin() + static_cast<std::ptrdiff_t>(elev.size() / 2);
        std::nth_element(elev.begin(), mid, elev.end());
        const double e = *mid;
        for (int c = 0; c < cols_; ++c) {
          StructureCell& cell = filled.at(r, c);
          if (cell.observed) continue;
          const double az = c * table_.horizontal_resolution();
          cell.structure = Vec4(std::cos(az), std::sin(az), std::cos(e), std::sin(e));
          cell.bearing = bearing(az, e);
          cell.inferred = true;
        }
      }
    }
    StructureTable out(rows_, cols_, window);
    const int half = window / 2;
    for (int r = 0; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        StructureCell cell = filled.at(r, c);
        cell.valid = false;
        if (cell.known()) {
          Mat3 m = Mat3::Zero();
          int n = 0;
          for (int dr = -half; dr <= half; ++dr) {
            const int rr = r + dr;
            if (rr < 0 || rr >= rows_) continue;
            for (int dc = -half; dc <= half; ++dc) {
              const StructureCell& nb = filled.at(rr, detail::wrap_col(c + dc, cols_));
              if (!nb.known()) continue;
              m.noalias() += nb.bearing * nb.bearing.transpose();
              ++n;
            }
          }
          if (n >= 3 && detail::condition_number(m) < condition_cap) {
            cell.moment_inv = m.inverse();
            cell.valid = true;
          }
        }
        out.at(r, c) = cell;
      }
    }
    return out;
  }

 private:
  int rows_;
  int cols_;
  int scans_ = 0;
  StructureTable table_;
};

/// Builds the lookup table from the first observation of every cell across `scans`.
inline StructureTable build_structure_table(std::span<const RingScan> scans, int window,
                                            double condition_cap = 1e6, bool complete_rings = true) {
  if (scans.empty()) throw std::invalid_argument("at least one scan is required");
  StructureTableBuilder builder(scans.front().ring_count, scans.front().points_per_ring);
  for (const RingScan& s : scans) builder.add(s);
  return builder.build(window, condition_cap, complete_rings);
}

/// Grid of inverse ranges indexed like the structure table.
struct RangeImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> inv_range;
  std::vector<std::uint8_t> occupied;
  /// Index into the source scan's points, -1 when empty.
  std::vector<int> source;

  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols + c; }
  std::size_t occupied_count() const {
    return static_cast<std::size_t>(std::count(occupied.begin(), occupied.end(), 1));
  }
};

inline RangeImage project_scan(const RingScan& scan, const StructureTable& table) {
  if (!table.same_shape(scan.ring_count, scan.points_per_ring))
    throw std::invalid_argument("scan dimensions do not match the structure table");
  RangeImage img;
  img.rows = table.rows();
  img.cols = table.cols();
  const std::size_t n = static_cast<std::size_t>(img.rows) * img.cols;
  img.inv_range.assign(n, 0.0);
  img.occupied.assign(n, 0);
  img.source.assign(n, -1);
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const RingPoint& p = scan.points[i];
    if (p.ring < 0 || p.ring >= img.rows || !(p.range > 0.0) || !std::isfinite(p.range)) continue;
    const std::size_t k = img.index(p.ring, table.column_of(p.azimuth));
    const double inv = 1.0 / p.range;
    // Nearer return wins a shared cell.
    if (!img.occupied[k] || inv > img.inv_range[k]) {
      img.inv_range[k] = inv;
      img.occupied[k] = 1;
      img.source[k] = static_cast<int>(i);
    }
  }
  return img;
}

struct NormalImage {
  int rows = 0;
  int cols = 0;
  std::vector<Vec3> normal;
  std::vector<std::uint8_t> valid;

  NormalImage() = default;
  NormalImage(int r, int c)
      : rows(r),
        cols(c),
        normal(static_cast<std::size_t>(r) * c, Vec3::Zero()),
        valid(static_cast<std::size_t>(r) * c, 0) {}

  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols + c; }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
  }
};

struct NormalEstimationOptions {
  int window = 5;
  /// Minimum occupied / observed ratio inside the window.
  double min_occupancy = 0.6;
  double condition_cap = 1e6;
};

/// Box-filters v / r over each window and solves with the precomputed moment inverse.
///
/// When some observed neighbors are missing from this scan the lookup inverse
/// no longer matches the summed bearings; the moment matrix is then rebuilt
/// from the occupied subset as long as it covers `min_occupancy` of the window.
inline NormalImage estimate_normals(const RangeImage& image, const StructureTable& table,
                                    const NormalEstimationOptions& opt = {}) {
  detail::check_window(opt.window);
  if (image.rows != table.rows() || image.cols != table.cols())
    throw std::invalid_argument("range image dimensions do not match the structure table");
  NormalImage out(image.rows, image.cols);
  const int half = opt.window / 2;
  const bool table_window = opt.window == table.window();
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      const std::size_t k = image.index(r, c);
      if (!image.occupied[k] || !table.at(r, c).valid) continue;
      Vec3 b = Vec3::Zero();
      Mat3 m_occ = Mat3::Zero();
      int observed = 0;
      int occupied = 0;
      for (int dr = -half; dr <= half; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= image.rows) continue;
        for (int dc = -half; dc <= half; ++dc) {
          const int cc = detail::wrap_col(c + dc, image.cols);
          const StructureCell& cell = table.at(rr, cc);
          if (!cell.known()) continue;
          ++observed;
          const std::size_t kk = image.index(rr, cc);
          if (!image.occupied[kk]) continue;
          ++occupied;
          b += cell.bearing * image.inv_range[kk];
          m_occ.noalias() += cell.bearing * cell.bearing.transpose();
        }
      }
      if (occupied < 3) continue;
      Vec3 n;
      if (table_window && occupied == observed) {
        n = table.at(r, c).moment_inv * b;
      } else {
        if (static_cast<double>(occupied) < opt.min_occupancy * observed) continue;
        if (!(detail::condition_number(m_occ) < opt.condition_cap)) continue;
        n = m_occ.ldlt().solve(b);
      }
      const double len = n.norm();
      if (!(len > 0.0) || !std::isfinite(len)) continue;
      out.normal[k] = n / len;
      out.valid[k] = 1;
    }
  }
  return out;
}

/// Orients every valid normal toward the sensor (n . v <= 0).
inline NormalImage flip_backfaced(NormalImage normals, const StructureTable& table) {
  if (normals.rows != table.rows() || normals.cols != table.cols())
    throw std::invalid_argument("normal image dimensions do not match the structure table");
  for (int r = 0; r < normals.rows; ++r) {
    for (int c = 0; c < normals.cols; ++c) {
      const std::size_t k = normals.index(r, c);
      if (normals.valid[k] && normals.normal[k].dot(table.at(r, c).bearing) > 0.0)
        normals.normal[k] = -normals.normal[k];
    }
  }
  return normals;
}

namespace detail {

/// Median of v[0..n); sorts the prefix in place. Even counts average the middle pair.
inline double median9(double* p) {
  auto sort2 = [](double& a, double& b) {
    const double lo = std::min(a, b);
    b = std::max(a, b);
    a = lo;
  };
  sort2(p[1], p[2]); sort2(p[4], p[5]); sort2(p[7], p[8]);
  sort2(p[0], p[1]); sort2(p[3], p[4]); sort2(p[6], p[7]);
  sort2(p[1], p[2]); sort2(p[4], p[5]); sort2(p[7], p[8]);
  sort2(p[0], p[3]); sort2(p[5], p[8]); sort2(p[4], p[7]);
  sort2(p[3], p[6]); sort2(p[1], p[4]); sort2(p[2], p[5]);
  sort2(p[4], p[7]); sort2(p[4], p[2]); sort2(p[6], p[4]);
  sort2(p[4], p[2]);
  return p[4];
}

inline double median_inplace(double* v, std::size_t n) {
  if (n == 9) return median9(v);
  if (n <= 16) {
    for (std::size_t i = 1; i < n; ++i) {
      const double x = v[i];
      std::size_t j = i;
      for (; j > 0 && v[j - 1] > x; --j) v[j] = v[j - 1];
      v[j] = x;
    }
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  const std::size_t mid = n / 2;
  std::nth_element(v, v + mid, v + n);
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  return 0.5 * (*std::max_element(v, v + mid) + upper);
}

inline double median_inplace(std::vector<double>& v) { return median_inplace(v.data(), v.size()); }

}  // namespace detail

/// Per-component median over valid neighbors, then re-normalized. Validity is unchanged.
inline NormalImage median_smooth(const NormalImage& normals, int window = 3) {
  detail::check_window(window);
  NormalImage out = normals;
  const int half = window / 2;
  const std::size_t cap = static_cast<std::size_t>(window) * window;
  std::array<std::vector<double>, 3> comp;
  for (auto& v : comp) v.resize(cap);
  std::vector<int> cols(static_cast<std::size_t>(window));
  for (int c = 0; c < normals.cols; ++c) {
    for (int dc = -half; dc <= half; ++dc) cols[static_cast<std::size_t>(dc + half)] = detail::wrap_col(c + dc, normals.cols);
    for (int r = 0; r < normals.rows; ++r) {
      const std::size_t k = normals.index(r, c);
      if (!normals.valid[k]) continue;
      std::size_t n = 0;
      for (int rr = std::max(0, r - half); rr <= std::min(normals.rows - 1, r + half); ++rr) {
        for (int cc : cols) {
          const std::size_t kk = normals.index(rr, cc);
          if (!normals.valid[kk]) continue;
          const Vec3& v = normals.normal[kk];
          comp[0][n] = v.x();
          comp[1][n] = v.y();
          comp[2][n] = v.z();
          ++n;
        }
      }
      Vec3 m(detail::median_inplace(comp[0].data(), n), detail::median_inplace(comp[1].data(), n),
             detail::median_inplace(comp[2].data(), n));
      const double len = m.norm();
      if (len > 1e-12) out.normal[k] = m / len;
    }
  }
  return out;
}

/// Normals per scan point (indexed like scan.points) plus per-stage timings.
struct ScanNormals {
  std::vector<Vec3> normal;
  std::vector<std::uint8_t> valid;
  NormalImage image;
  RangeImage range_image;
  double projection_ms = 0.0;
  double box_filter_ms = 0.0;
  double smoothing_ms = 0.0;

  double total_ms() const { return projection_ms + box_filter_ms + smoothing_ms; }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
  }
};

struct RingFalsOptions {
  NormalEstimationOptions estimation;
  int smooth_window = 3;
};

/// Full per-scan chain: projection, box filtering (+ flipping), median smoothing.
inline ScanNormals estimate_scan_normals(const RingScan& scan, const StructureTable& table,
                                         const RingFalsOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  ScanNormals out;
  auto t0 = clock::now();
  out.range_image = project_scan(scan, table);
  out.projection_ms = ms_since(t0);

  t0 = clock::now();
  NormalImage img = flip_backfaced(estimate_normals(out.range_image, table, opt.estimation), table);
  out.box_filter_ms = ms_since(t0);

  t0 = clock::now();
  out.image = median_smooth(img, opt.smooth_window);
  out.smoothing_ms = ms_since(t0);

  out.normal.assign(scan.points.size(), Vec3::Zero());
  out.valid.assign(scan.points.size(), 0);
  for (std::size_t k = 0; k < out.image.valid.size(); ++k) {
    const int src = out.range_image.source[k];
    if (src < 0 || !out.image.valid[k]) continue;
    out.normal[static_cast<std::size_t>(src)] = out.image.normal[k];
    out.valid[static_cast<std::size_t>(src)] = 1;
  }
  return out;
}

}  // namespace loglio
