#include "loglio/map_index.hpp"
#include "loglio/simulator.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <tuple>

using namespace loglio;

namespace {

std::vector<const MapPoint*> brute_knn(const MapIndex& map, const Point3& q, std::size_t k, double max_radius) {
  std::vector<const MapPoint*> all;
  for (const MapPoint& p : map.points())
    if ((p.position - q).squaredNorm() <= max_radius * max_radius) all.push_back(&p);
  std::sort(all.begin(), all.end(), [&](const MapPoint* a, const MapPoint* b) {
    const double da = (a->position - q).squaredNorm(), db = (b->position - q).squaredNorm();
    return da != db ? da < db : a->id < b->id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::vector<SurfacePoint> surface(const std::vector<Point3>& ps) {
  std::vector<SurfacePoint> out;
  for (const auto& p : ps) out.push_back({p, std::nullopt});
  return out;
}

}  // namespace

TEST(VoxelKey, FloorConvention) {
  EXPECT_EQ(voxel_key({0.41, -0.01, 0.0}, 0.4), (VoxelKey{1, -1, 0}));
  EXPECT_EQ(voxel_key({0.0, 0.0, 0.0}, 0.4), (VoxelKey{0, 0, 0}));
}

TEST(VoxelKey, TranslationConsistent) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  // Powers-of-two resolution and coordinates on its grid keep the shift exact.
  for (int i = 0; i < 1000; ++i) {
    const Point3 p(std::round(u(g) * 64) / 64, std::round(u(g) * 64) / 64, std::round(u(g) * 64) / 64);
    EXPECT_EQ(voxel_key(p + Vec3(0.5, 0, 0), 0.5), (voxel_key(p, 0.5) + VoxelKey{1, 0, 0}));
  }
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const Point3 p(u(g), u(g), u(g));
    if (!(voxel_key(p + Vec3(0.4, 0, 0), 0.4) == voxel_key(p, 0.4) + VoxelKey{1, 0, 0})) ++mismatches;
  }
  // With 0.4 only points within rounding of a boundary can disagree.
  EXPECT_LE(mismatches, 2);
}

TEST(InsertScan, OnePoint) {
  MapIndex map;
  map.insert_scan(surface({{1, 2, 3}}));
  EXPECT_EQ(map.point_count(), 1u);
  EXPECT_EQ(map.voxel_count(), 1u);
  EXPECT_EQ(map.voxel_of({1, 2, 3})->n, 1u);
}

TEST(InsertScan, CapLimitsRetentionNotStatistics) {
  MapOptions opt;
  opt.retained_cap = 1;
  opt.fix.eta = 1000;  // keep the voxel open
  MapIndex map(opt);
  map.insert_scan(surface(std::vector<Point3>(100, Point3(0.1, 0.1, 0.1))));
  EXPECT_EQ(map.point_count(), 1u);
  EXPECT_EQ(map.voxel_of({0.1, 0.1, 0.1})->n, 100u);
}

TEST(InsertScan, VoxelCountMatchesBruteForce) {
  const sim::Fixture f = sim::make_fixture("corner-room");
  sim::Rng rng(2);
  const auto ss = sim::simulate_lidar(f.scene, [&](double) { return f.trajectory.start * f.imu_T_lidar; }, f.lidar,
                                      0.0, &rng);
  std::vector<Point3> world;
  const Pose T = f.trajectory.start * f.imu_T_lidar;
  for (const auto& p : ss.scan.points) world.push_back(T * p.position);
  MapIndex map(MapOptions{0.4, 5, {}});
  map.insert_scan(surface(world));
  std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> keys;
  for (const auto& p : world) {
    const VoxelKey k = voxel_key(p, 0.4);
    keys.emplace(k.x, k.y, k.z);
  }
  EXPECT_EQ(map.voxel_count(), keys.size());
  // Every stored point sits in its own voxel's retained list.
  map.for_each_voxel([&](const VoxelKey& k, const MapIndex::Voxel& v) {
    EXPECT_GE(v.stats.n, v.retained.size());
    for (std::size_t i : v.retained) EXPECT_EQ(map.points()[i].key, k);
  });
}

TEST(InsertScan, SumConservation) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  MapIndex map;
  std::size_t total = 0;
  for (int scan = 0; scan < 20; ++scan) {
    std::vector<Point3> ps;
    for (int i = 0; i < 500; ++i) ps.emplace_back(u(g), u(g), 0.1 * u(g));
    std::size_t open = 0;
    for (const auto& p : ps) {
      const auto v = map.voxel_of(p);
      if (!v || !v->fixed) ++open;
    }
    map.insert_scan(surface(ps));
    total += open;
  }
  std::size_t n = 0;
  map.for_each_voxel([&](const VoxelKey&, const MapIndex::Voxel& v) { n += v.stats.n; });
  EXPECT_EQ(n, total);
  EXPECT_EQ(map.accumulated_count(), total);
}

TEST(InsertScan, OrderInsensitiveStatistics) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point3> ps;
  for (int i = 0; i < 400; ++i) ps.emplace_back(u(g), u(g), u(g));
  MapOptions opt;
  opt.fix.eta = 100000;
  MapIndex a(opt), b(opt);
  a.insert_scan(surface(ps));
  std::shuffle(ps.begin(), ps.end(), g);
  b.insert_scan(surface(ps));
  a.for_each_voxel([&](const VoxelKey& k, const MapIndex::Voxel& v) {
    const MapIndex::Voxel* w = b.find_voxel(k);
    ASSERT_NE(w, nullptr);
    EXPECT_EQ(v.stats.n, w->stats.n);
    EXPECT_LT((v.stats.sum - w->stats.sum).norm(), 1e-12);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(v.stats.sq[i], w->stats.sq[i], 1e-12);
  });
}

TEST(InsertScan, FixedVoxelStopsAccumulating) {
  MapIndex map;
  std::vector<SurfacePoint> ps;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) ps.push_back({Point3(0.01 + 0.07 * i, 0.01 + 0.07 * j, 0.2), Vec3::UnitZ()});
  map.insert_scan(ps);
  ASSERT_TRUE(map.voxel_of({0.1, 0.1, 0.2})->fixed);
  map.insert_scan(ps);
  EXPECT_EQ(map.voxel_of({0.1, 0.1, 0.2})->n, 25u);
  EXPECT_EQ(map.accumulated_count(), 25u);
}

TEST(Knn, SmallOracle) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<Point3> ps;
  for (int i = 0; i < 10; ++i) ps.emplace_back(u(g), u(g), u(g));
  MapIndex map(MapOptions{0.4, 100, {}});
  map.insert_scan(surface(ps));
  const Point3 q(0.3, -0.2, 0.1);
  const auto got = map.knn(q, 3, 100.0);
  const auto want = brute_knn(map, q, 3, 100.0);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].point, want[i]);
}

TEST(Knn, QueryOnStoredPoint) {
  MapIndex map;
  map.insert_scan(surface({{1, 1, 1}, {1.2, 1, 1}, {3, 3, 3}}));
  const auto nb = map.knn({1.2, 1, 1}, 2, 5.0);
  ASSERT_EQ(nb.size(), 2u);
  EXPECT_EQ(nb[0].point->position, Point3(1.2, 1, 1));
  EXPECT_EQ(nb[0].squared_distance, 0.0);
}

TEST(Knn, RadiusExcludesAll) {
  MapIndex map;
  map.insert_scan(surface({{1, 1, 1}, {2, 2, 2}}));
  EXPECT_TRUE(map.knn({5, 5, 5}, 3, 1.0).empty());
  EXPECT_TRUE(MapIndex().knn({0, 0, 0}, 3, 10.0).empty());
}

TEST(Knn, TiesByInsertionOrder) {
  MapIndex map(MapOptions{0.4, 10, {}});
  map.insert_scan(surface({{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}}));
  const auto nb = map.knn({0, 0, 0}, 2, 2.0);
  ASSERT_EQ(nb.size(), 2u);
  EXPECT_EQ(nb[0].point->id, 0u);
  EXPECT_EQ(nb[1].point->id, 1u);
}

TEST(Knn, RandomizedExactness) {
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    const double res = 0.2 + u(g);
    MapIndex map(MapOptions{res, 1 + static_cast<std::size_t>(u(g) * 8), {}});
    const int n = trial == 0 ? 10000 : 500 + static_cast<int>(u(g) * 5000);
    const double extent = 2.0 + 20.0 * u(g);
    std::vector<Point3> ps;
    for (int i = 0; i < n; ++i) ps.emplace_back(extent * u(g), extent * u(g), 0.3 * extent * u(g));
    // Some exact duplicates and grid-aligned points for ties.
    for (int i = 0; i < 50; ++i) ps.push_back(ps[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 50; ++i) ps.emplace_back(res * i, res * (i % 7), 0.0);
    map.insert_scan(surface(ps));
    for (int qi = 0; qi < 1000; ++qi) {
      const Point3 q = qi % 10 == 0 ? ps[static_cast<std::size_t>(qi)]
                                    : Point3(extent * u(g), extent * u(g), 0.3 * extent * u(g));
      const std::size_t k = 1 + static_cast<std::size_t>(u(g) * 10);
      const double radius = qi % 3 == 0 ? 1e9 : 0.5 + 3.0 * u(g);
      const auto got = map.knn(q, k, radius);
      const auto want = brute_knn(map, q, k, radius);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i].point, want[i]);
    }
  }
}

TEST(VoxelOf, AdjacentVoxelsSeparate) {
  MapIndex map(MapOptions{1.0, 5, {}});
  map.insert_scan(surface({{0.5, 0.5, 0.5}, {0.6, 0.5, 0.5}, {1.5, 0.5, 0.5}}));
  EXPECT_EQ(map.voxel_of({0.9, 0.9, 0.9})->n, 2u);
  EXPECT_EQ(map.voxel_of({1.1, 0.1, 0.1})->n, 1u);
  EXPECT_FALSE(map.voxel_of({2.5, 0.5, 0.5}));
  EXPECT_FALSE(MapIndex().voxel_of({0, 0, 0}));
}

TEST(MapIndexOptions, RejectsNonPositiveResolution) {
  EXPECT_THROW(MapIndex(MapOptions{0.0, 5, {}}), std::invalid_argument);
}
