#pragma once

// Brute-force references and small fixtures shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "dsurf/camera.hpp"
#include "dsurf/error.hpp"
#include "dsurf/losses.hpp"
#include "dsurf/random.hpp"
#include "dsurf/renderer.hpp"

namespace dsurf::testing {

struct RandomImages {
  int h, w;
  std::vector<float> a, b;
  std::vector<std::uint8_t> mask;
};

inline RandomImages random_images(std::mt19937_64& rng, int channels) {
  std::uniform_int_distribution<int> size(16, 28);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  RandomImages im{size(rng), size(rng), {}, {}, {}};
  const std::size_t px = std::size_t(im.h) * im.w;
  for (std::size_t i = 0; i < px * channels; ++i) {
    const float base = u(rng);
    im.a.push_back(base);
    im.b.push_back(std::clamp(base + 0.2f * (u(rng) - 0.5f), 0.f, 1.f));
  }
  // Active disc so that some SSIM windows fit fully inside.
  const double cr = im.h / 2.0, cc = im.w / 2.0, rad = 0.5 * std::min(im.h, im.w) + 1;
  for (int r = 0; r < im.h; ++r) {
    for (int c = 0; c < im.w; ++c) {
      im.mask.push_back(std::hypot(r - cr, c - cc) < rad || u(rng) < 0.05f ? 1 : 0);
    }
  }
  return im;
}

inline double psnr_oracle(const RandomImages& im, int channels) {
  std::vector<double> sq;
  for (std::size_t i = 0; i < im.mask.size(); ++i) {
    if (!im.mask[i]) continue;
    for (int c = 0; c < channels; ++c) {
      sq.push_back(std::pow(double(im.a[i * channels + c]) - im.b[i * channels + c], 2));
    }
  }
  double mse = 0;
  for (double v : sq) mse += v;
  mse /= sq.size();
  return 10.0 * std::log10(1.0 / mse);
}

// Separable Gaussian filtering of the whole image, then the SSIM map, then the
// mean over centres whose 11×11 neighbourhood is entirely active.
inline double ssim_oracle(const RandomImages& im) {
  const int h = im.h, w = im.w;
  std::vector<double> x(h * w), y(h * w);
  for (int i = 0; i < h * w; ++i) {
    x[i] = 0.299 * im.a[3 * i] + 0.587 * im.a[3 * i + 1] + 0.114 * im.a[3 * i + 2];
    y[i] = 0.299 * im.b[3 * i] + 0.587 * im.b[3 * i + 1] + 0.114 * im.b[3 * i + 2];
  }
  std::vector<double> k(11);
  double ks = 0;
  for (int i = 0; i < 11; ++i) ks += k[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  for (auto& v : k) v /= ks;
  auto filter = [&](const std::vector<double>& f) {
    std::vector<double> tmp(h * w, 0.0), out(h * w, 0.0);
    for (int r = 0; r < h; ++r)
      for (int c = 5; c < w - 5; ++c)
        for (int d = -5; d <= 5; ++d) tmp[r * w + c] += k[d + 5] * f[r * w + c + d];
    for (int r = 5; r < h - 5; ++r)
      for (int c = 0; c < w; ++c)
        for (int d = -5; d <= 5; ++d) out[r * w + c] += k[d + 5] * tmp[(r + d) * w + c];
    return out;
  };
  std::vector<double> xx(h * w), yy(h * w), xy(h * w);
  for (int i = 0; i < h * w; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter(x), my = filter(y), fxx = filter(xx), fyy = filter(yy), fxy = filter(xy);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (int r = 5; r < h - 5; ++r) {
    for (int c = 5; c < w - 5; ++c) {
      bool inside = true;
      for (int i = -5; i <= 5 && inside; ++i)
        for (int j = -5; j <= 5 && inside; ++j) inside = im.mask[(r + i) * w + c + j] != 0;
      if (!inside) continue;
      const int p = r * w + c;
      const double sx = fxx[p] - mx[p] * mx[p], sy = fyy[p] - my[p] * my[p];
      const double sxy = fxy[p] - mx[p] * my[p];
      total += (2 * mx[p] * my[p] + c1) * (2 * sxy + c2) /
               ((mx[p] * mx[p] + my[p] * my[p] + c1) * (sx + sy + c2));
      ++count;
    }
  }
  return total / count;
}

inline double rmse_oracle(const RandomImages& im) {
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < im.mask.size(); ++i) {
    if (im.mask[i] && im.b[i] > 0) {
      sum += std::pow(double(im.a[i]) - double(im.b[i]), 2);
      ++n;
    }
  }
  return std::sqrt(sum / n);
}

inline FieldsConfig tiny_fields_config() {
  FieldsConfig c;
  c.deformation = {2, 8, {}, 2};
  c.sdf = {2, 8, {1}, 2};
  c.radiance = {2, 8, {}, 2};
  c.radiance_dir_freqs = 1;
  return c;
}

// Four rays at the origin-centred sphere of radius 0.5 from (0, 0, -2). Two
// take the near hit as ground truth, two the far hit, so the visibility hinge
// is active on part of the batch.
inline RayBatch tiny_batch(std::mt19937_64& rng) {
  const Eigen::Matrix4d p =
      make_projection(40, 40, 16, 16, look_at({0, 0, -2}, Eigen::Vector3d::Zero()));
  RayBatch b;
  for (auto [row, col] : {std::pair{16, 16}, {12, 18}, {19, 14}, {15, 11}}) {
    b.rays.push_back(*make_ray(p, row, col, 0.25 + 0.1 * b.rays.size()));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(b.rays.size());
  b.color.resize(n, 3);
  b.depth.resize(n);
  b.mask = Eigen::VectorXd::Ones(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    double h0 = 0, h1 = 0;
    if (!intersect_sphere(b.rays[r].origin, b.rays[r].dir, 0.5, h0, h1)) {
      throw DegenerateInput("tiny_batch: ray misses the sphere");
    }
    b.depth(r) = r < 2 ? h0 : h1;
    b.color.row(r) << uniform01(rng), uniform01(rng), uniform01(rng);
  }
  return b;
}

struct GradientCheck {
  double worst = 0.0;     // max relative error
  std::size_t count = 0;  // scalars compared
  std::array<double, kLossTermCount> components{};
};

// Full weighted loss on the tiny fixture (8 samples per ray) with a non-zero
// warp output layer; reverse-mode parameter gradients against central
// differences.
inline GradientCheck full_loss_gradient_check(std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  SceneFields<double> f(tiny_fields_config());
  f.initialize(11);
  auto& wd = f.deformation.net().weight(f.deformation.net().spec().depth - 1).mutable_value();
  for (Eigen::Index i = 0; i < wd.size(); ++i) wd.data()[i] = uniform(rng, -0.05, 0.05);
  const RayBatch batch = tiny_batch(rng);
  SamplingOptions o;
  o.n_coarse = 8;
  o.n_fine = 0;
  o.fine_steps = 0;
  const Eigen::MatrixXd depths = sample_rays(f, std::span<const Ray>(batch.rays), o, nullptr);
  const GeometryDraws draws = draw_geometry(rng, 4, 4, 0.1);
  auto loss = [&] { return evaluate_losses(f, batch, depths, draws, LossWeights{}); };

  GradientCheck out;
  out.components = loss().report.components;
  const auto params = f.parameters();
  const auto grads = ad::grad<double>(loss().total, params);
  const double h = 1e-5;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = const_cast<ad::Var<double>&>(params[p]).mutable_value();
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double keep = value.data()[i];
      value.data()[i] = keep + h;
      const double up = loss().report.total;
      value.data()[i] = keep - h;
      const double down = loss().report.total;
      value.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double g = grads[p].value().data()[i];
      out.worst = std::max(out.worst, std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-3}));
      ++out.count;
    }
  }
  return out;
}

}  // namespace dsurf::testing
