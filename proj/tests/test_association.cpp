#include "loglio/association.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace loglio;

namespace {

/// Floor z = 0.05 over [x0, x1) x [y0, y1), 0.04 m grid. Each voxel's center
/// point goes first so a retained_cap of 1 keeps exactly the voxel centers.
std::vector<SurfacePoint> floor_points(double x0, double x1, double y0, double y1, double res = 0.4) {
  std::vector<SurfacePoint> centers, rest;
  for (double x = x0 + 0.02; x < x1; x += 0.04)
    for (double y = y0 + 0.02; y < y1; y += 0.04) rest.push_back({Point3(x, y, 0.05), Vec3::UnitZ()});
  for (double x = x0 + res / 2; x < x1; x += res)
    for (double y = y0 + res / 2; y < y1; y += res) centers.push_back({Point3(x, y, 0.05), Vec3::UnitZ()});
  centers.insert(centers.end(), rest.begin(), rest.end());
  return centers;
}

MapOptions centers_only() {
  MapOptions o;
  o.resolution = 0.4;
  o.retained_cap = 1;
  return o;
}

}  // namespace

TEST(Visibility, Examples) {
  EXPECT_FALSE(visibility_check({1, 0, 0}, {2, 0, 0}, {0, 0, 0}));
  EXPECT_TRUE(visibility_check({-1, 0, 0}, {2, 0, 0}, {0, 0, 0}));
  EXPECT_TRUE(visibility_check({0, 1, 0}, {2, 0, 0}, {0, 0, 0}));
}

TEST(Visibility, ScaleInvariant) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 n = Vec3(nd(g), nd(g), nd(g)).normalized();
    const Point3 p(nd(g), nd(g), nd(g));
    const Vec3 ray(nd(g), nd(g), nd(g));
    const double c = std::exp(3.0 * nd(g));
    EXPECT_EQ(visibility_check(n, p, p + ray), visibility_check(n, p, p + c * ray));
  }
}

TEST(Consistency, Examples) {
  const Vec3 q = Vec3::UnitZ();
  const std::vector<Vec3> same(3, q);
  EXPECT_TRUE(consistency_check(q, same, 60.0));
  const std::vector<Vec3> ortho{Vec3::UnitX(), Vec3::UnitY()};
  EXPECT_FALSE(consistency_check(q, ortho, 60.0));
  auto at = [](double deg) { return Vec3(std::sin(deg2rad(deg)), 0, std::cos(deg2rad(deg))); };
  const std::vector<Vec3> mixed{at(10), at(50), at(80)};
  EXPECT_TRUE(consistency_check(q, mixed, 60.0));
  EXPECT_FALSE(consistency_check(q, mixed, 46.0));
  // Opposite normals count as parallel.
  const std::vector<Vec3> flipped{-q};
  EXPECT_TRUE(consistency_check(q, flipped, 1.0));
  EXPECT_FALSE(consistency_check(q, {}, 60.0));
}

TEST(FitPlane, DegenerateInputs) {
  const std::vector<Point3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  EXPECT_FALSE(fit_plane(line));
  const std::vector<Point3> two{{0, 0, 0}, {1, 0, 0}};
  EXPECT_FALSE(fit_plane(two));
}

TEST(Associate, LargeSurfelOnFloor) {
  MapIndex map(centers_only());
  map.insert_scan(floor_points(-1.2, 1.2, -1.2, 1.2));
  AssocConfig cfg = AssocConfig::for_resolution(0.4);
  cfg.k = 4;  // the four voxel centers around a shared corner
  const auto tr = associate_traced(map, {0.0, 0.0, 0.05}, Vec3::UnitZ(), {0.3, 0.2, 2.0}, cfg);
  ASSERT_TRUE(tr.correspondence);
  EXPECT_EQ(tr.correspondence->kind, CorrespondenceKind::large_surfel);
  EXPECT_LT((tr.correspondence->normal - Vec3::UnitZ()).norm(), 1e-9);
  EXPECT_NEAR(tr.correspondence->anchor.z(), 0.05, 1e-9);
  EXPECT_EQ(tr.correspondence->noise, cfg.noise.large_surfel);
  EXPECT_FALSE(tr.small_tried);
  EXPECT_FALSE(tr.plane_tried);
}

TEST(Associate, SmallSurfelAtCorner) {
  MapIndex map(centers_only());
  map.insert_scan(floor_points(0.0, 0.4, 0.0, 0.4));
  // Wall x = 0.42 inside voxel (1, 0, 0), facing -x.
  std::vector<SurfacePoint> wall{{Point3(0.42, 0.2, 0.2), -Vec3::UnitX()}};
  for (double y = 0.02; y < 0.4; y += 0.04)
    for (double z = 0.02; z < 0.4; z += 0.04) wall.push_back({Point3(0.42, y, z), -Vec3::UnitX()});
  map.insert_scan(wall);
  ASSERT_TRUE(map.voxel_of({0.1, 0.1, 0.05})->fixed);

  AssocConfig cfg = AssocConfig::for_resolution(0.4);
  cfg.k = 2;
  const auto tr = associate_traced(map, {0.38, 0.2, 0.05}, Vec3::UnitZ(), {-1.0, 0.2, 1.0}, cfg);
  ASSERT_TRUE(tr.correspondence);
  EXPECT_EQ(tr.correspondence->kind, CorrespondenceKind::small_surfel);
  EXPECT_TRUE(tr.large_tried);
  EXPECT_FALSE(tr.plane_tried);
  EXPECT_GT(tr.correspondence->normal.z(), 0.999);
  EXPECT_EQ(tr.correspondence->noise, cfg.noise.small_surfel);
}

TEST(Associate, PlaneInSparseMap) {
  MapIndex map;
  const Vec3 n = Vec3(1, 1, 1).normalized();
  const Point3 on(1, 1, 1);
  const Vec3 a = n.unitOrthogonal(), b = n.cross(a);
  std::vector<SurfacePoint> ps;
  for (int i = 0; i < 5; ++i) {
    const double t = 2.0 * kPi * i / 5.0;
    ps.push_back({on + 0.6 * std::cos(t) * a + 0.6 * std::sin(t) * b, -n});
  }
  map.insert_scan(ps);
  for (const auto& p : ps) ASSERT_FALSE(map.voxel_of(p.position)->fixed);
  const AssocConfig cfg = AssocConfig::for_resolution(0.4);
  const auto tr = associate_traced(map, on, -n, Point3::Zero(), cfg);
  ASSERT_TRUE(tr.correspondence);
  EXPECT_EQ(tr.correspondence->kind, CorrespondenceKind::plane);
  EXPECT_TRUE(tr.large_tried && tr.small_tried && tr.plane_tried);
  EXPECT_LT((tr.correspondence->normal - (-n)).norm(), 1e-9);  // sign follows the query
  EXPECT_LT((tr.correspondence->anchor - on).norm(), 1e-9);
}

TEST(Associate, PlaneRejectedWhenNeighborsOffPlane) {
  MapIndex map;
  std::vector<SurfacePoint> ps{{{0, 0, 0}, std::nullopt},   {{1, 0, 0}, std::nullopt}, {{0, 1, 0}, std::nullopt},
                               {{1, 1, 0}, std::nullopt},   {{0.5, 0.5, 0.8}, std::nullopt}};
  map.insert_scan(ps);
  AssocConfig cfg = AssocConfig::for_resolution(0.4);
  cfg.mode = AssociationMode::plane_only;
  const auto tr = associate_traced(map, {0.5, 0.5, 0.1}, Vec3::UnitZ(), {0, 0, 5}, cfg);
  EXPECT_FALSE(tr.correspondence);
  EXPECT_EQ(tr.outcome, AssociationOutcome::plane_rejected);
}

TEST(Associate, FailureOutcomes) {
  MapIndex map;
  const AssocConfig cfg = AssocConfig::for_resolution(0.4);
  EXPECT_EQ(associate_traced(map, {0, 0, 0}, Vec3::UnitZ(), {0, 0, 1}, cfg).outcome,
            AssociationOutcome::no_neighbors);

  std::vector<SurfacePoint> ps;
  for (int i = 0; i < 5; ++i) ps.push_back({Point3(0.3 * i, 0.1 * i * i, 0.0), Vec3::UnitZ()});
  map.insert_scan(ps);
  // Sensor below the floor: every map normal faces away.
  EXPECT_EQ(associate_traced(map, {0.3, 0.1, 0.0}, Vec3::UnitZ(), {0, 0, -2}, cfg).outcome,
            AssociationOutcome::not_visible);
  // Query normal orthogonal to the map normals.
  EXPECT_EQ(associate_traced(map, {0.3, 0.1, 0.0}, Vec3::UnitX(), {0, 0, 2}, cfg).outcome,
            AssociationOutcome::inconsistent);
}

TEST(Associate, PlaneOnlySkipsSurfels) {
  MapIndex map(centers_only());
  map.insert_scan(floor_points(-1.2, 1.2, -1.2, 1.2));
  AssocConfig cfg = AssocConfig::for_resolution(0.4);
  cfg.k = 4;
  cfg.mode = AssociationMode::plane_only;
  const auto tr = associate_traced(map, {0.0, 0.0, 0.05}, Vec3::UnitZ(), {0.3, 0.2, 2.0}, cfg);
  ASSERT_TRUE(tr.correspondence);
  EXPECT_EQ(tr.correspondence->kind, CorrespondenceKind::plane);
  EXPECT_FALSE(tr.large_tried);
  EXPECT_FALSE(tr.small_tried);
}

TEST(Associate, HierarchyExclusivity) {
  // Mixed scene; every trace must be consistent with first-match-wins.
  MapIndex map;
  map.insert_scan(floor_points(-2.0, 2.0, -2.0, 2.0));
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<SurfacePoint> clutter;
  for (int i = 0; i < 300; ++i)
    clutter.push_back({Point3(u(g), u(g), 0.5 + 0.2 * u(g)), Vec3(u(g), u(g), 2.0).normalized()});
  map.insert_scan(clutter);
  const AssocConfig cfg = AssocConfig::for_resolution(0.4);
  int kinds[3] = {0, 0, 0};
  for (int i = 0; i < 2000; ++i) {
    const Point3 q(u(g), u(g), 0.05 + 0.1 * u(g));
    const auto tr = associate_traced(map, q, Vec3::UnitZ(), {0, 0, 3}, cfg);
    if (!tr.correspondence) continue;
    ++kinds[static_cast<int>(tr.correspondence->kind)];
    EXPECT_NEAR(tr.correspondence->normal.norm(), 1.0, 1e-12);
    switch (tr.correspondence->kind) {
      case CorrespondenceKind::large_surfel:
        EXPECT_TRUE(tr.large_tried && !tr.small_tried && !tr.plane_tried);
        break;
      case CorrespondenceKind::small_surfel:
        EXPECT_TRUE(tr.large_tried && tr.small_tried && !tr.plane_tried);
        break;
      case CorrespondenceKind::plane:
        EXPECT_TRUE(tr.large_tried && tr.small_tried && tr.plane_tried);
        break;
    }
  }
  EXPECT_GT(kinds[0] + kinds[1] + kinds[2], 100);
}

TEST(Associate, RigidMotionEquivariance) {
  std::mt19937_64 g(4);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 n = Vec3(nd(g), nd(g), nd(g)).normalized();
    const Vec3 a = n.unitOrthogonal(), b = n.cross(a);
    const Point3 c(3 * u(g), 3 * u(g), 3 * u(g));
    std::vector<SurfacePoint> ps;
    for (int i = 0; i < 12; ++i) ps.push_back({c + u(g) * a + u(g) * b + 0.01 * u(g) * n, n});
    const Point3 q = c + 0.1 * u(g) * a;
    const Point3 sensor = c + 3.0 * n;
    const Pose T{Rotation(Quat(nd(g), nd(g), nd(g), nd(g))), Vec3(5 * u(g), 5 * u(g), 5 * u(g))};

    MapOptions opt;
    opt.retained_cap = 100;
    AssocConfig cfg = AssocConfig::for_resolution(0.4);
    cfg.mode = AssociationMode::plane_only;
    MapIndex m1(opt), m2(opt);
    m1.insert_scan(ps);
    std::vector<SurfacePoint> moved;
    for (const auto& p : ps) moved.push_back({T * p.position, T.rotation * *p.normal});
    m2.insert_scan(moved);
    const auto c1 = associate(m1, q, n, sensor, cfg);
    const auto c2 = associate(m2, T * q, T.rotation * n, T * sensor, cfg);
    ASSERT_EQ(c1.has_value(), c2.has_value());
    if (!c1) continue;
    EXPECT_EQ(c1->kind, c2->kind);
    EXPECT_LT((T.rotation * c1->normal - c2->normal).norm(), 1e-9);
    EXPECT_LT((T * c1->anchor - c2->anchor).norm(), 1e-9);
  }
}

TEST(AssocConfigDefaults, StatedValues) {
  const AssocConfig c = AssocConfig::for_resolution(0.4);
  EXPECT_EQ(c.k, 5u);
  EXPECT_DOUBLE_EQ(c.max_radius, 2.0);
  EXPECT_DOUBLE_EQ(c.merge_plane_distance, 0.1);
  EXPECT_EQ(c.alpha_deg, 60.0);
  EXPECT_EQ(c.plane_fit_tolerance, 0.1);
  EXPECT_EQ(c.noise.plane, 1e-2);
  EXPECT_EQ(c.noise.small_surfel, 5e-3);
  EXPECT_EQ(c.noise.large_surfel, 2e-3);
}

TEST(Histogram, Counts) {
  AssociationHistogram h;
  h.add(Correspondence{CorrespondenceKind::plane});
  h.add(Correspondence{CorrespondenceKind::large_surfel});
  h.add(std::nullopt);
  EXPECT_EQ(h.count(CorrespondenceKind::plane), 1u);
  EXPECT_EQ(h.count(CorrespondenceKind::large_surfel), 1u);
  EXPECT_EQ(h.matched(), 2u);
  EXPECT_EQ(h.none, 1u);
}
