#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dsurf/camera.hpp"
#include "dsurf/error.hpp"
#include "dsurf/parallel.hpp"
#include "dsurf/random.hpp"
#include "dsurf/renderer.hpp"

using namespace dsurf;

namespace {

Eigen::Matrix4d axial_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  return make_projection(80, 80, 32.5, 32.5, look_at(eye, target));
}

SceneFields<double> sphere_fields(std::uint64_t seed = 7) {
  SceneFields<double> f(FieldsConfig::desk());
  f.initialize(seed);
  return f;
}

Ray axial_ray(double time = 0.5) {
  return *make_ray(axial_camera({0, 0, -2}, Eigen::Vector3d::Zero()), 32, 32, time);
}

// Uniform depths over [near, far] and their spacing.
std::vector<double> uniform_depths(double near, double far, int n) {
  std::vector<double> h(n);
  for (int i = 0; i < n; ++i) h[i] = near + (far - near) * i / (n - 1);
  return h;
}

double affine_depth(double h_star, const std::vector<double>& h, double s) {
  std::vector<double> rho(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) rho[i] = h_star - h[i];
  const std::vector<Eigen::Vector3d> colors(h.size(), Eigen::Vector3d::Zero());
  return composite(ray_alphas(rho, s), colors, section_depths(h)).depth;
}

}  // namespace

TEST(Ray, AxialRayNearFar) {
  const Ray r = axial_ray();
  EXPECT_NEAR(r.near, 1.0, 1e-12);
  EXPECT_NEAR(r.far, 3.0, 1e-12);
  EXPECT_NEAR(r.dir.z(), 1.0, 1e-12);
}

TEST(Ray, OutwardRayFromSphereSurfaceIsRejected) {
  EXPECT_FALSE(make_ray(axial_camera({0, 0, -1}, {0, 0, -2}), 32, 32, 0.0).has_value());
}

TEST(Ray, MissingRayIsRejected) {
  EXPECT_FALSE(make_ray(axial_camera({0, 3, -2}, {0, 3, 0}), 32, 32, 0.0).has_value());
}

TEST(Ray, PassesThroughProjectedPoint) {
  const Eigen::Matrix4d p = make_projection(70, 72, 30, 34, look_at({0.3, 0.2, -2}, {0, 0, 0.1}));
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const int row = 10 + static_cast<int>(uniform_index(rng, 40));
    const int col = 10 + static_cast<int>(uniform_index(rng, 40));
    const auto ray = make_ray(p, row, col, 0.0);
    ASSERT_TRUE(ray.has_value());
    const Eigen::Vector3d x = ray->origin + uniform(rng, ray->near, ray->far) * ray->dir;
    const Eigen::Vector2d px = project(p, x);
    EXPECT_NEAR(px.x(), col + 0.5, 1e-6);
    EXPECT_NEAR(px.y(), row + 0.5, 1e-6);
    const double along = (x - ray->origin).dot(ray->dir);
    EXPECT_LT((ray->origin + along * ray->dir - x).norm(), 1e-6);
  }
}

TEST(Formula, Phi) {
  EXPECT_DOUBLE_EQ(phi(0.0, 0.7), 0.5);
  EXPECT_NEAR(phi(0.3, 0.3), 0.731059, 1e-6);
  EXPECT_NEAR(phi(50.0, 0.1), 1.0, 1e-15);
  EXPECT_NEAR(phi(-50.0, 0.1), 0.0, 1e-15);
}

TEST(Formula, Alpha) {
  EXPECT_EQ(alpha(0.2, 0.2, 0.3), 0.0);
  const double p0 = 1.0 / (1.0 + std::exp(-0.1 / 0.3));
  const double p1 = 1.0 / (1.0 + std::exp(0.1 / 0.3));
  EXPECT_NEAR(alpha(0.1, -0.1, 0.3), (p0 - p1) / p0, 1e-12);
  // 0.283556 is the same expression with φ rounded to four digits.
  EXPECT_NEAR(alpha(0.1, -0.1, 0.3), 0.283556, 1e-4);
  EXPECT_EQ(alpha(-0.1, 0.1, 0.3), 0.0);
  EXPECT_EQ(alpha(-100.0, -200.0, 0.01), 0.0);  // φ(ρ_i) below the guard
}

TEST(Formula, CompositeExamples) {
  const std::vector<Eigen::Vector3d> colors{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const std::vector<double> h{1.0, 2.0, 3.0};
  auto none = composite(std::vector<double>{0, 0, 0}, colors, h);
  EXPECT_EQ(none.color, Eigen::Vector3d::Zero());
  EXPECT_EQ(none.depth, 0.0);
  EXPECT_EQ(none.acc, 0.0);
  auto opaque = composite(std::vector<double>{1, 0.4, 0.9}, colors, h);
  EXPECT_EQ(opaque.color, colors[0]);
  EXPECT_EQ(opaque.depth, 1.0);
  auto half = composite(std::vector<double>{0.5, 0.5, 0.5}, colors, h);
  EXPECT_DOUBLE_EQ(half.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(half.weights[1], 0.25);
  EXPECT_DOUBLE_EQ(half.weights[2], 0.125);
  EXPECT_DOUBLE_EQ(half.depth, 0.5 * 1 + 0.25 * 2 + 0.125 * 3);
  EXPECT_EQ(half.color, Eigen::Vector3d(0.5, 0.25, 0.125));
  EXPECT_DOUBLE_EQ(half.acc, 0.875);
}

TEST(Formula, CompositeIgnoresAppendedZeroAlpha) {
  const std::vector<Eigen::Vector3d> colors{{0.2, 0.4, 0.6}, {0.9, 0.1, 0.3}};
  const auto a = composite(std::vector<double>{0.3, 0.6}, colors, std::vector<double>{1, 2});
  std::vector<Eigen::Vector3d> more = colors;
  more.push_back({1, 1, 1});
  more.push_back({0.5, 0.5, 0.5});
  const auto b = composite(std::vector<double>{0.3, 0.6, 0, 0}, more, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.acc, b.acc);
}

TEST(Formula, BatchedAlphaMatchesScalar) {
  std::mt19937_64 rng(9);
  ad::Matrix<double> rho(3, 10);
  for (Eigen::Index i = 0; i < rho.size(); ++i) rho.data()[i] = uniform(rng, -0.5, 0.5);
  const double s = 0.2;
  const auto a = ad::unbiased_alpha(ad::constant<double>(rho), ad::scalar<double>(1.0 / s));
  const auto w = ad::transmittance_weights(a);
  for (int r = 0; r < 3; ++r) {
    std::vector<double> row(rho.row(r).data(), rho.row(r).data() + 10);
    const auto ref = ray_alphas(row, s);
    const std::vector<Eigen::Vector3d> colors(10, Eigen::Vector3d::Zero());
    const auto comp = composite(ref, colors, std::vector<double>(10, 0.0));
    for (int i = 0; i < 10; ++i) {
      EXPECT_NEAR(a.value()(r, i), ref[i], 1e-12);
      EXPECT_NEAR(w.value()(r, i), comp.weights[i], 1e-12);
    }
  }
}

TEST(Unbiased, AffineSdfDepthWithinHalfSpacing) {
  const auto h = uniform_depths(1.0, 3.0, 64);
  const double spacing = h[1] - h[0];
  for (int k : {10, 25, 31, 40, 50}) {
    for (double frac = 0.0; frac < 1.0; frac += 0.1) {
      const double h_star = h[k] + frac * spacing;
      const double sharp = std::abs(affine_depth(h_star, h, 0.01) - h_star);
      const double blurred = std::abs(affine_depth(h_star, h, 0.3) - h_star);
      EXPECT_LT(sharp, spacing / 2) << "k=" << k << " frac=" << frac;
      EXPECT_GT(blurred, sharp) << "k=" << k << " frac=" << frac;
    }
  }
}

TEST(Unbiased, ErrorShrinksWithDeviation) {
  const auto h = uniform_depths(1.0, 3.0, 64);
  const double h_star = 1.9;
  double prev = std::abs(affine_depth(h_star, h, 0.3) - h_star);
  for (double s : {0.1, 0.03}) {
    const double err = std::abs(affine_depth(h_star, h, s) - h_star);
    EXPECT_LT(err, prev) << "s=" << s;
    prev = err;
  }
}

TEST(Sampling, NoFineSamplesGivesStratifiedPartition) {
  const auto f = sphere_fields();
  const Ray r = axial_ray();
  SamplingOptions o;
  o.n_coarse = 16;
  o.n_fine = 0;
  o.fine_steps = 0;
  const Eigen::MatrixXd d = sample_rays(f, std::span<const Ray>(&r, 1), o, nullptr);
  ASSERT_EQ(d.cols(), 16);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(d(0, i), 1.0 + (i + 0.5) * 2.0 / 16, 1e-12);
}

TEST(Sampling, DefaultCountIs64AndIncreasing) {
  const auto f = sphere_fields();
  const Ray r = axial_ray();
  const SamplingOptions o;
  EXPECT_EQ(o.total(), 64);
  std::mt19937_64 rng(1);
  SamplingOptions jit = o;
  jit.jitter = true;
  for (const auto& opts : {o, jit}) {
    const Eigen::MatrixXd d = sample_rays(f, std::span<const Ray>(&r, 1), opts, &rng);
    ASSERT_EQ(d.cols(), 64);
    for (int i = 1; i < 64; ++i) EXPECT_GT(d(0, i), d(0, i - 1));
    EXPECT_GE(d(0, 0), r.near);
    EXPECT_LE(d(0, 63), r.far);
  }
}

TEST(Sampling, FineSamplesConcentrateAtZeroCrossing) {
  const auto f = sphere_fields();
  std::mt19937_64 rng(3);
  const Eigen::Matrix4d p = axial_camera({0, 0, -2}, Eigen::Vector3d::Zero());
  for (int k = 0; k < 10; ++k) {
    const int row = 24 + static_cast<int>(uniform_index(rng, 17));
    const int col = 24 + static_cast<int>(uniform_index(rng, 17));
    const Ray r = *make_ray(p, row, col, 0.5);
    const SamplingOptions o;
    const Eigen::MatrixXd d = sample_rays(f, std::span<const Ray>(&r, 1), o, nullptr);
    const auto coarse = stratified_depths(r, o.n_coarse, nullptr);
    Eigen::MatrixXd pts(64, 3);
    for (int i = 0; i < 64; ++i) pts.row(i) = (r.origin + d(0, i) * r.dir).transpose();
    const Eigen::VectorXd rho = observed_sdf(f, pts, Eigen::VectorXd::Constant(64, 0.5));
    int fine = 0, near_surface = 0;
    for (int i = 0; i < 64; ++i) {
      const bool is_coarse = std::any_of(coarse.begin(), coarse.end(),
                                         [&](double c) { return std::abs(c - d(0, i)) < 1e-12; });
      if (is_coarse) continue;
      ++fine;
      near_surface += std::abs(rho(i)) < 0.1;
    }
    EXPECT_EQ(fine, 32);
    EXPECT_GE(near_surface, fine / 2) << "pixel " << row << "," << col;
  }
}

TEST(Sampling, PdfInverseIsMonotoneAndInRange) {
  const std::vector<double> d{0, 1, 2, 3};
  const std::vector<double> w{0, 1, 0};
  const auto s = sample_pdf(d, w, 8);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_GE(s[i], 1.0 - 1e-3);
    EXPECT_LE(s[i], 2.0 + 1e-3);
    if (i) EXPECT_GT(s[i], s[i - 1]);
  }
}

TEST(Sampling, MergeKeepsDepthsStrictlyIncreasing) {
  const auto m = merge_sorted({1.0, 2.0, 3.0}, {2.0, 2.0, 0.5});
  ASSERT_EQ(m.size(), 6u);
  for (std::size_t i = 1; i < m.size(); ++i) EXPECT_GT(m[i], m[i - 1]);
  EXPECT_NEAR(m[3], 2.0, 1e-8);
}

TEST(Render, SphereInitDepthNearAnalyticCrossing) {
  const auto f = sphere_fields();
  const RayResult res = render_ray(f, axial_ray());
  EXPECT_NEAR(res.depth, 1.2, 0.15);
  EXPECT_GT(res.acc, 0.5);
  EXPECT_LE(res.acc, 1.0 + 1e-6);
  EXPECT_LT(res.normal.z(), -0.9);  // facing the camera
}

TEST(Render, ResultDoesNotDependOnWorkerCount) {
  const auto f = sphere_fields();
  const Eigen::Matrix4d p = axial_camera({0, 0, -2}, Eigen::Vector3d::Zero());
  std::vector<Ray> rays;
  for (int row = 16; row < 48; row += 3)
    for (int col = 16; col < 48; col += 3)
      if (auto r = make_ray(p, row, col, 0.5)) rays.push_back(*r);
  const int keep = thread_count();
  set_thread_count(1);
  const auto one = render_rays(f, std::span<const Ray>(rays), SamplingOptions{}, 7);
  set_thread_count(4);
  const auto four = render_rays(f, std::span<const Ray>(rays), SamplingOptions{}, 7);
  set_thread_count(keep);
  ASSERT_EQ(one.size(), four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].color, four[i].color);
    EXPECT_EQ(one[i].depth, four[i].depth);
    EXPECT_EQ(one[i].normal, four[i].normal);
  }
}

TEST(Render, ZeroDeformationIsTimeInvariant) {
  const auto f = sphere_fields();
  const RayResult a = render_ray(f, axial_ray(0.1));
  const RayResult b = render_ray(f, axial_ray(0.9));
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.depth, b.depth);
}

TEST(Render, InvariantsOnRandomRays) {
  const auto f = sphere_fields();
  std::mt19937_64 rng(21);
  std::vector<Ray> rays;
  while (rays.size() < 200) {
    const Eigen::Vector3d eye = uniform_on_sphere(rng, uniform(rng, 1.5, 3.0));
    const Eigen::Vector3d target = uniform_in_ball(rng, 0.5);
    const int row = static_cast<int>(uniform_index(rng, 64));
    const int col = static_cast<int>(uniform_index(rng, 64));
    if (auto r = make_ray(axial_camera(eye, target), row, col, uniform01(rng))) rays.push_back(*r);
  }
  const Eigen::MatrixXd d = sample_rays(f, std::span<const Ray>(rays), SamplingOptions{}, nullptr);
  const auto b = render_samples(f, std::span<const Ray>(rays), d, false);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    double trans = 1.0, sum = 0.0;
    for (int j = 0; j < d.cols(); ++j) {
      const double a = b.alpha.value()(r, j);
      ASSERT_GE(a, 0.0);
      ASSERT_LE(a, 1.0);
      const double next = trans * (1 - a);
      ASSERT_LE(next, trans);
      trans = next;
      sum += b.weights.value()(r, j);
    }
    ASSERT_LE(sum, 1.0 + 1e-6);
  }
}

TEST(Render, DifferentiableAndValueRendersAgree) {
  const auto f = sphere_fields();
  std::vector<Ray> rays{axial_ray(0.3)};
  rays.push_back(*make_ray(axial_camera({0, 0, -2}, Eigen::Vector3d::Zero()), 20, 40, 0.3));
  const Eigen::MatrixXd d = sample_rays(f, std::span<const Ray>(rays), SamplingOptions{}, nullptr);
  const auto a = render_samples(f, std::span<const Ray>(rays), d, true);
  const auto b = render_samples(f, std::span<const Ray>(rays), d, false);
  EXPECT_TRUE(a.color.value().isApprox(b.color.value(), 1e-12));
  EXPECT_TRUE(a.depth.value().isApprox(b.depth.value(), 1e-12));
  EXPECT_TRUE(a.normals.value().isApprox(b.normals.value(), 1e-12));
  EXPECT_TRUE(a.color.requires_grad());
  EXPECT_FALSE(b.color.requires_grad());
}

TEST(Render, NonFiniteFieldIsRenderFault) {
  auto f = sphere_fields();
  f.radiance.net().bias(f.radiance.net().spec().depth - 1).mutable_value()(0, 0) = NAN;
  const Ray r = axial_ray();
  const Eigen::MatrixXd d = sample_rays(f, std::span<const Ray>(&r, 1), SamplingOptions{}, nullptr);
  EXPECT_THROW(render_samples(f, std::span<const Ray>(&r, 1), d, false), RenderFault);
}
