#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "dsurf/camera.hpp"
#include "dsurf/error.hpp"
#include "dsurf/geometry.hpp"
#include "dsurf/random.hpp"
#include "dsurf/renderer.hpp"
#include "dsurf/synthetic.hpp"

using namespace dsurf;

namespace {

TriMesh sphere_mesh(int res, double radius) {
  return marching_cubes(sample_grid([&](const Eigen::Vector3d& x) { return x.norm() - radius; }, res));
}

std::vector<Eigen::Vector3d> random_points(std::mt19937_64& rng, int n, double spread) {
  std::vector<Eigen::Vector3d> p(n);
  for (auto& x : p) x = Eigen::Vector3d(uniform(rng, -spread, spread), uniform(rng, -spread, spread), uniform(rng, -spread, spread));
  return p;
}

}  // namespace

TEST(MarchingCubes, SphereVerticesWithinOneCellDiagonal) {
  const int res = 64;
  const TriMesh m = sphere_mesh(res, 0.5);
  ASSERT_FALSE(m.empty());
  m.validate();
  const double diagonal = std::sqrt(3.0) * 2.0 / (res - 1);
  for (const auto& v : m.vertices) ASSERT_LT(std::abs(v.norm() - 0.5), diagonal);
}

TEST(MarchingCubes, SphereIsClosedAndOutwardFacing) {
  const TriMesh m = sphere_mesh(48, 0.6);
  std::map<std::pair<int, int>, int> uses;
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
    const Eigen::Vector3d n = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
    const Eigen::Vector3d centroid = (m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3;
    ASSERT_GT(n.dot(centroid), 0.0);
  }
  for (const auto& [edge, count] : uses) ASSERT_EQ(count, 2);
  // V − E + F = 2 for a sphere.
  EXPECT_EQ(static_cast<long>(m.vertices.size()) - static_cast<long>(uses.size()) +
                static_cast<long>(m.triangles.size()),
            2);
}

TEST(MarchingCubes, ConstantGridIsEmpty) {
  EXPECT_TRUE(marching_cubes(sample_grid([](const Eigen::Vector3d&) { return 1.0; }, 8)).empty());
}

TEST(MarchingCubes, PlaneIsInterpolatedExactly) {
  const TriMesh m = marching_cubes(sample_grid([](const Eigen::Vector3d& x) { return x.z() - 0.1; }, 17));
  ASSERT_FALSE(m.empty());
  for (const auto& v : m.vertices) ASSERT_LT(std::abs(v.z() - 0.1), 1e-6);
  for (const auto& n : m.normals) EXPECT_GT(n.z(), 0.999);
  EXPECT_NEAR(m.area(), 4.0, 1e-9);
}

TEST(Grid, FieldCornersMatchDirectCalls) {
  SceneFields<double> f(FieldsConfig::desk());
  f.initialize(2);
  const GridField g = sample_grid(f, 2, std::nullopt);
  ASSERT_EQ(g.values.size(), 8u);
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(g.values[g.index(i, j, k)], sdf(f.sdf, g.point(i, j, k)).first);
      }
}

TEST(Grid, ZeroDeformationTimeGridEqualsCanonical) {
  SceneFields<double> f(FieldsConfig::desk());
  f.initialize(2);
  const GridField a = sample_grid(f, 12, std::nullopt);
  const GridField b = sample_grid(f, 12, 0.4);
  EXPECT_EQ(a.values, b.values);
}

TEST(Grid, SphereInitializedZeroCrossingNearRadius08) {
  SceneFields<float> f(FieldsConfig::desk());
  f.initialize(2);
  const TriMesh m = marching_cubes(sample_grid(f, 40, std::nullopt));
  ASSERT_FALSE(m.empty());
  for (const auto& v : m.vertices) ASSERT_NEAR(v.norm(), 0.8, 0.15);
}

TEST(Pcd, IdenticalAndSinglePointSets) {
  std::mt19937_64 rng(1);
  const auto a = random_points(rng, 50, 1.0);
  EXPECT_EQ(pcd(a, a), 0.0);
  EXPECT_DOUBLE_EQ(pcd({Eigen::Vector3d(0, 0, 0)}, {Eigen::Vector3d(1, 0, 0)}), 1.0);
  EXPECT_THROW(pcd({}, a), DegenerateInput);
}

TEST(Pcd, MatchesBruteForceAndIsSymmetric) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_points(rng, 100, 1.0);
    const auto b = random_points(rng, 100, 0.5 + trial * 0.1);
    EXPECT_NEAR(pcd(a, b), pcd_brute_force(a, b), 1e-12);
    EXPECT_DOUBLE_EQ(pcd(a, b), pcd(b, a));
  }
}

TEST(Pcd, IndexNearestMatchesBruteForceOffGrid) {
  std::mt19937_64 rng(3);
  const auto pts = random_points(rng, 500, 0.3);
  const PointIndex index(pts);
  for (int q = 0; q < 300; ++q) {
    const Eigen::Vector3d x(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    double best = 1e300;
    for (const auto& p : pts) best = std::min(best, (p - x).norm());
    ASSERT_DOUBLE_EQ(index.nearest_distance(x), best);
  }
}

TEST(Surface, AreaSamplesLieOnMesh) {
  const TriMesh m = sphere_mesh(40, 0.5);
  std::mt19937_64 rng(4);
  const auto pts = sample_surface(m, 20000, rng);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) {
    ASSERT_NEAR(p.norm(), 0.5, 0.05);
    mean += p / pts.size();
  }
  EXPECT_LT(mean.norm(), 0.01);
}

TEST(MeshFiles, ObjRoundTripAndPlyHeader) {
  const TriMesh m = sphere_mesh(16, 0.5);
  const auto dir = std::filesystem::temp_directory_path() / "dsurf_test_mesh";
  std::filesystem::create_directories(dir);
  write_obj(m, dir / "m.obj");
  write_ply(m, dir / "m.ply");
  const TriMesh back = read_obj(dir / "m.obj");
  ASSERT_EQ(back.vertices.size(), m.vertices.size());
  ASSERT_EQ(back.triangles, m.triangles);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) ASSERT_LT((back.vertices[i] - m.vertices[i]).norm(), 1e-8);
  std::ifstream ply(dir / "m.ply");
  std::string first, second;
  std::getline(ply, first);
  std::getline(ply, second);
  EXPECT_EQ(first, "ply");
  EXPECT_EQ(second, "format ascii 1.0");
  std::filesystem::remove_all(dir);
}

TEST(MeshFiles, TransformAppliesSimilarity) {
  TriMesh m = sphere_mesh(16, 0.5);
  SceneNormalization n;
  n.center = Eigen::Vector3d(1, 2, 3);
  n.scale = 2.0;
  m.transform(n.denormalize_transform());
  for (const auto& v : m.vertices) ASSERT_NEAR((v - n.center).norm(), 1.0, 0.05);
}

TEST(Visibility, DepthBufferAndBackFaceCulling) {
  const TriMesh m = sphere_mesh(48, 0.5);
  const Eigen::Matrix4d p = make_projection(60, 60, 32, 32, look_at({0, 0, -2}, Eigen::Vector3d::Zero()));
  const auto z = mesh_depth_buffer(m, p, 64, 64);
  EXPECT_NEAR(z[32 * 64 + 32], 1.5, 0.01);
  EXPECT_TRUE(std::isinf(z[0]));
  Frame f;
  f.height = f.width = 64;
  f.projection = p;
  f.mask.assign(64 * 64, 1);
  std::mt19937_64 rng(6);
  const auto pts = sample_surface(m, 4000, rng);
  const auto vis = visible_points(pts, m, f, 0.02);
  for (const auto& v : vis) ASSERT_LT(v.z(), 0.1);
  EXPECT_GT(vis.size(), pts.size() / 3);
  EXPECT_LT(vis.size(), pts.size() * 6 / 10);
}

TEST(Visibility, GroundTruthCloudMatchesAnalyticSurface) {
  SyntheticConfig c;
  c.frames = 1;
  c.resolution = 32;
  const Dataset ds = generate_synthetic(c);
  const auto cloud = depth_point_cloud(ds.frames[0]);
  ASSERT_EQ(cloud.size(), ds.frames[0].active_pixel_count());
  for (const auto& p : cloud) ASSERT_NEAR(p.norm(), c.sphere_radius, 1e-4);
}
