#include "loglio/voxel_stats.hpp"

#include <gtest/gtest.h>

#include <random>
#include <vector>

using namespace loglio;

namespace {

std::vector<SurfacePoint> pts(std::initializer_list<Point3> ps) {
  std::vector<SurfacePoint> out;
  for (const auto& p : ps) out.push_back({p, std::nullopt});
  return out;
}

Mat3 batch_scatter(const std::vector<SurfacePoint>& ps, Point3& mean) {
  mean.setZero();
  for (const auto& p : ps) mean += p.position;
  mean /= static_cast<double>(ps.size());
  Mat3 m = Mat3::Zero();
  for (const auto& p : ps) m += (p.position - mean) * (p.position - mean).transpose();
  return m;
}

std::vector<SurfacePoint> plane_patch(std::mt19937_64& g, int n, double sigma, const Vec3& normal) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  std::normal_distribution<double> nd(0.0, sigma);
  Vec3 a = normal.unitOrthogonal(), b = normal.cross(a);
  std::vector<SurfacePoint> out;
  for (int i = 0; i < n; ++i)
    out.push_back({Point3(1, 2, 3) + u(g) * a + u(g) * b + nd(g) * normal, normal});
  return out;
}

/// k x k grid on the z = 0 plane: equal in-plane eigenvalues, so rho = 1 at zero noise.
std::vector<SurfacePoint> grid_patch(int k, const Vec3& measured = Vec3::UnitZ()) {
  std::vector<SurfacePoint> out;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) out.push_back({Point3(0.05 * i, 0.05 * j, 0.0), measured});
  return out;
}

}  // namespace

TEST(Accumulate, HandArithmetic) {
  const VoxelStats s = accumulate(VoxelStats{}, pts({{0, 0, 0}, {1, 0, 0}}));
  EXPECT_EQ(s.n, 2u);
  EXPECT_EQ(s.sum, Vec3(1, 0, 0));
  EXPECT_EQ(s.sq[0], 1.0);
  for (std::size_t i = 1; i < 6; ++i) EXPECT_EQ(s.sq[i], 0.0);
}

TEST(Accumulate, TwoBatchSquare) {
  VoxelStats s = accumulate(VoxelStats{}, pts({{0, 0, 0}, {1, 0, 0}}));
  s = accumulate(s, pts({{0, 1, 0}, {1, 1, 0}}));
  EXPECT_LT((s.mean() - Point3(0.5, 0.5, 0)).norm(), 1e-15);
  const Mat3 expected = Vec3(1, 1, 0).asDiagonal();
  EXPECT_LT((s.scatter() - expected).norm(), 1e-12);
}

TEST(Accumulate, EmptyBatchIsIdentity) {
  const VoxelStats s = accumulate(VoxelStats{}, pts({{1, 2, 3}, {4, 5, 6}}));
  const VoxelStats t = accumulate(s, std::span<const SurfacePoint>{});
  EXPECT_EQ(t.n, s.n);
  EXPECT_EQ(t.sum, s.sum);
  EXPECT_EQ(t.sq, s.sq);
}

TEST(Accumulate, FixedVoxelIgnoresPoints) {
  VoxelStats s = accumulate(VoxelStats{}, pts({{1, 2, 3}}));
  s.fixed = true;
  const VoxelStats t = accumulate(s, pts({{9, 9, 9}}));
  EXPECT_EQ(t.n, 1u);
  EXPECT_EQ(t.sum, s.sum);
}

TEST(Accumulate, NormalsSignAligned) {
  VoxelStats s;
  s = accumulate(s, SurfacePoint{{0, 0, 0}, Vec3::UnitZ()});
  s = accumulate(s, SurfacePoint{{1, 0, 0}, -Vec3::UnitZ()});
  s = accumulate(s, SurfacePoint{{0, 1, 0}, Vec3(0.1, 0, 1).normalized()});
  ASSERT_TRUE(s.mean_normal());
  EXPECT_GT(s.mean_normal()->z(), 0.99);
  EXPECT_EQ(s.normal_count, 3u);
}

TEST(Merge, EmptyAndCommutative) {
  const VoxelStats a = accumulate(VoxelStats{}, pts({{1, 2, 3}, {4, 5, 6}, {0, 1, 0}}));
  const VoxelStats b = accumulate(VoxelStats{}, pts({{7, 1, 3}, {2, 2, 2}}));
  const VoxelStats ae = merge(a, VoxelStats{});
  EXPECT_EQ(ae.n, a.n);
  EXPECT_EQ(ae.sum, a.sum);
  EXPECT_EQ(ae.sq, a.sq);
  const VoxelStats ab = merge(a, b), ba = merge(b, a);
  EXPECT_EQ(ab.n, ba.n);
  EXPECT_EQ(ab.sum, ba.sum);
  EXPECT_EQ(ab.sq, ba.sq);
}

TEST(Merge, Associative) {
  std::mt19937_64 g(4);
  std::normal_distribution<double> nd(0.0, 3.0);
  auto rand_stats = [&] {
    std::vector<SurfacePoint> v;
    for (int i = 0; i < 17; ++i) v.push_back({Point3(nd(g), nd(g), nd(g)), std::nullopt});
    return accumulate(VoxelStats{}, v);
  };
  const VoxelStats a = rand_stats(), b = rand_stats(), c = rand_stats();
  const VoxelStats l = merge(merge(a, b), c), r = merge(a, merge(b, c));
  EXPECT_EQ(l.n, r.n);
  EXPECT_LT((l.sum - r.sum).norm(), 1e-12 * l.sum.norm());
  EXPECT_LT((l.scatter() - r.scatter()).norm(), 1e-12 * l.second_moment().norm());
}

TEST(Merge, IncrementalEqualsBatch) {
  std::mt19937_64 g(77);
  std::uniform_int_distribution<int> count(10, 1000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = count(g);
    // Points spread like a real voxel: an offset cluster.
    const Point3 base(50.0 * u(g), -50.0 * u(g), 5.0 * u(g));
    std::vector<SurfacePoint> all;
    for (int i = 0; i < n; ++i) all.push_back({base + Point3(u(g), u(g), 0.3 * u(g)), std::nullopt});

    // Random batch partition, half accumulated in sequence, half merged as separate voxels.
    VoxelStats running, merged;
    std::size_t i = 0;
    while (i < all.size()) {
      const std::size_t len = std::min<std::size_t>(all.size() - i, 1 + static_cast<std::size_t>(u(g) * 60));
      const std::span<const SurfacePoint> batch(all.data() + i, len);
      if (u(g) < 0.5) running = accumulate(running, batch);
      else merged = merge(merged, accumulate(VoxelStats{}, batch));
      i += len;
    }
    const VoxelStats total = merge(running, merged);
    Point3 mean;
    const Mat3 m = batch_scatter(all, mean);
    ASSERT_EQ(total.n, all.size());
    EXPECT_LE((total.mean() - mean).norm(), 1e-9 * mean.norm());
    EXPECT_LE((total.scatter() - m).norm(), 1e-9 * m.norm());
  }
}

TEST(Shape, EigenvalueExamples) {
  Shape s = shape_of(Mat3::Identity());
  EXPECT_NEAR(s.rho, 0.0, 1e-12);
  EXPECT_NEAR(s.gamma, 1.0, 1e-12);

  s = shape_of(Vec3(0, 1, 1).asDiagonal());
  EXPECT_NEAR(s.rho, 1.0, 1e-12);
  EXPECT_TRUE(std::isinf(s.gamma));
  EXPECT_NEAR(std::abs(s.normal.x()), 1.0, 1e-12);

  s = shape_of(Vec3(0.1, 2, 3).asDiagonal());
  EXPECT_NEAR(s.rho, 2.0 * 1.9 / 5.1, 1e-12);
  EXPECT_NEAR(s.gamma, 20.0, 1e-9);
}

TEST(Shape, NeedsThreePoints) {
  EXPECT_FALSE(shape(accumulate(VoxelStats{}, pts({{0, 0, 0}, {1, 0, 0}}))));
  EXPECT_TRUE(shape(accumulate(VoxelStats{}, pts({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}))));
}

TEST(Shape, RangesOnRandomPsd) {
  std::mt19937_64 g(8);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 2000; ++i) {
    Eigen::Matrix<double, 3, 5> a;
    for (int k = 0; k < a.size(); ++k) a.data()[k] = nd(g) * (k % 3 == 0 ? 1e-3 : 1.0);
    const Shape s = shape_of(a * a.transpose());
    EXPECT_GE(s.rho, 0.0);
    EXPECT_LE(s.rho, 4.0 / 3.0);
    EXPECT_LE(s.rho, 1.0 + 1e-12);  // tighter: l2 <= l3 bounds rho by 1
    EXPECT_GE(s.gamma, 1.0);
  }
}

TEST(Shape, ScatterIsPsd) {
  std::mt19937_64 g(12);
  const auto ps = plane_patch(g, 300, 0.0, Vec3(0, 0, 1));
  const VoxelStats s = accumulate(VoxelStats{}, ps);
  const Mat3 m = s.scatter();
  EXPECT_LT((m - m.transpose()).norm(), 1e-12);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat3>(m).eigenvalues()[0], -1e-9);
}

TEST(Shape, NormalFollowsMeasuredNormals) {
  std::mt19937_64 g(13);
  const auto ps = plane_patch(g, 100, 0.001, -Vec3::UnitY());
  const auto sh = shape(accumulate(VoxelStats{}, ps));
  ASSERT_TRUE(sh);
  EXPECT_GT(sh->normal.dot(-Vec3::UnitY()), 0.99);
}

TEST(ClassifySurfel, PlanePatchIsSurfel) {
  std::mt19937_64 g(14);
  const auto sv = classify_surfel(accumulate(VoxelStats{}, plane_patch(g, 200, 0.001, Vec3(1, 1, 0).normalized())),
                                  SurfelThresholds{});
  ASSERT_TRUE(sv);
  EXPECT_GT(std::abs(sv->normal.dot(Vec3(1, 1, 0).normalized())), 0.999);
  EXPECT_EQ(sv->scale, SurfelScale::small);
}

TEST(ClassifySurfel, LineIsNotSurfel) {
  std::mt19937_64 g(15);
  std::uniform_real_distribution<double> u(0.0, 0.4);
  std::normal_distribution<double> nd(0.0, 0.001);
  std::vector<SurfacePoint> ps;
  for (int i = 0; i < 200; ++i) ps.push_back({Point3(u(g), nd(g), nd(g)), std::nullopt});
  EXPECT_FALSE(classify_surfel(accumulate(VoxelStats{}, ps), SurfelThresholds{}));
}

TEST(ClassifySurfel, BlobIsNotSurfel) {
  std::mt19937_64 g(16);
  std::normal_distribution<double> nd(0.0, 0.1);
  std::vector<SurfacePoint> ps;
  for (int i = 0; i < 200; ++i) ps.push_back({Point3(nd(g), nd(g), nd(g)), std::nullopt});
  const VoxelStats s = accumulate(VoxelStats{}, ps);
  EXPECT_LT(shape(s)->rho, 0.3);
  EXPECT_FALSE(classify_surfel(s, SurfelThresholds{}));
}

TEST(ClassifySurfel, TooFewPoints) {
  auto ps = grid_patch(5);
  EXPECT_TRUE(classify_surfel(accumulate(VoxelStats{}, ps), SurfelThresholds{}));
  ps.erase(ps.begin() + 12);  // drop the center; still symmetric
  EXPECT_FALSE(classify_surfel(accumulate(VoxelStats{}, ps), SurfelThresholds{}));
  EXPECT_NEAR(shape(accumulate(VoxelStats{}, ps))->rho, 1.0, 1e-9);
}

TEST(TryFix, DefaultsAreTheStatedConstants) {
  const FixPolicy p;
  EXPECT_EQ(p.eta, 25u);
  EXPECT_EQ(p.angle_threshold_deg, 20.0);
  const SurfelThresholds th;
  EXPECT_EQ(th.rho_min, 0.95);
  EXPECT_EQ(th.gamma_min, 100.0);
  EXPECT_EQ(th.min_points, 25u);
}

TEST(TryFix, FixesAtEtaWhenNormalsAgree) {
  std::mt19937_64 g(18);
  auto ps = plane_patch(g, 25, 0.001, Vec3::UnitZ());
  for (auto& p : ps) p.normal = Vec3(std::sin(deg2rad(5.0)), 0, std::cos(deg2rad(5.0)));
  VoxelStats s = accumulate(VoxelStats{}, std::span(ps).first(24));
  EXPECT_FALSE(try_fix(s).fixed);
  s = accumulate(s, std::span(ps).last(1));
  const VoxelStats f = try_fix(s);
  ASSERT_TRUE(f.fixed);
  ASSERT_TRUE(f.surfel);
  // Frozen normal halfway between measured and distribution normals.
  EXPECT_NEAR(rad2deg(angle_between(f.surfel->normal, Vec3::UnitZ())), 2.5, 0.3);
}

TEST(TryFix, BelowEtaUnchanged) {
  std::mt19937_64 g(19);
  const VoxelStats s = accumulate(VoxelStats{}, plane_patch(g, 10, 0.0, Vec3::UnitZ()));
  const VoxelStats f = try_fix(s);
  EXPECT_FALSE(f.fixed);
  EXPECT_FALSE(f.surfel);
}

TEST(TryFix, DisagreementFixedAtTwiceEta) {
  std::mt19937_64 g(20);
  auto ps = plane_patch(g, 50, 0.001, Vec3::UnitZ());
  for (auto& p : ps) p.normal = Vec3(std::sin(deg2rad(35.0)), 0, std::cos(deg2rad(35.0)));
  VoxelStats s;
  for (int i = 0; i < 49; ++i) {
    s = accumulate(s, ps[static_cast<std::size_t>(i)]);
    s = try_fix(s);
    ASSERT_FALSE(s.fixed) << "fixed early at n=" << s.n;
  }
  s = accumulate(s, ps[49]);
  s = try_fix(s);
  ASSERT_TRUE(s.fixed);
  EXPECT_GT(std::abs(s.surfel->normal.z()), 0.999);
}

TEST(TryFix, FixedVoxelAnswersFromCache) {
  std::mt19937_64 g(21);
  const VoxelStats f = try_fix(accumulate(VoxelStats{}, grid_patch(6)));
  ASSERT_TRUE(f.fixed);
  const auto before = classify_surfel(f, SurfelThresholds{});
  const VoxelStats g2 = accumulate(f, plane_patch(g, 30, 0.001, Vec3::UnitX()));
  const auto after = classify_surfel(g2, SurfelThresholds{});
  ASSERT_TRUE(before && after);
  EXPECT_EQ(before->normal, after->normal);
  EXPECT_EQ(g2.n, f.n);
}
