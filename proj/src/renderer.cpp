#include "dsurf/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dsurf/camera.hpp"
#include "dsurf/error.hpp"
#include "dsurf/parallel.hpp"
#include "dsurf/random.hpp"

namespace dsurf {

std::optional<Ray> make_ray(const Eigen::Matrix4d& normalized_projection, int row, int col,
                            double time) {
  Ray ray;
  ray.origin = camera_center(normalized_projection);
  ray.dir = pixel_direction(normalized_projection, col + 0.5, row + 0.5);
  ray.row = row;
  ray.col = col;
  ray.time = time;
  double h0 = 0, h1 = 0;
  if (!intersect_sphere(ray.origin, ray.dir, 1.0, h0, h1)) return std::nullopt;
  ray.near = std::max(h0, 0.0);
  ray.far = h1;
  if (ray.far - ray.near < 1e-6) return std::nullopt;
  return ray;
}

std::optional<Ray> make_ray(const Frame& frame, const SceneNormalization& norm, int row, int col) {
  return make_ray(norm.normalized_projection(frame.projection), row, col, frame.time);
}

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

double phi(double rho, double s) {
  const double x = rho / s;
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double alpha(double rho_i, double rho_next, double s) {
  if (phi(rho_i, s) < 1e-12) return 0.0;
  const double ratio = std::exp(log_sigmoid(rho_next / s) - log_sigmoid(rho_i / s));
  return std::max(1.0 - ratio, 0.0);
}

std::vector<double> ray_alphas(std::span<const double> rho, double s) {
  std::vector<double> a(rho.size(), 0.0);
  for (std::size_t i = 0; i + 1 < rho.size(); ++i) a[i] = alpha(rho[i], rho[i + 1], s);
  return a;
}

std::vector<double> section_depths(std::span<const double> h) {
  std::vector<double> mid(h.begin(), h.end());
  for (std::size_t i = 0; i + 1 < h.size(); ++i) mid[i] = 0.5 * (h[i] + h[i + 1]);
  return mid;
}

Composite composite(std::span<const double> alphas, std::span<const Eigen::Vector3d> colors,
                    std::span<const double> depths) {
  if (colors.size() != alphas.size() || depths.size() != alphas.size()) {
    throw ConfigError("composite: alphas, colors and depths must have equal length");
  }
  Composite out;
  double trans = 1.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double w = trans * alphas[i];
    out.transmittance.push_back(trans);
    out.weights.push_back(w);
    out.color += w * colors[i];
    out.depth += w * depths[i];
    out.acc += w;
    trans *= 1.0 - alphas[i];
  }
  return out;
}

void SamplingOptions::validate() const {
  if (n_coarse < 2) throw ConfigError("n_coarse must be >= 2");
  if (n_fine < 0 || fine_steps < 0) throw ConfigError("n_fine and fine_steps must be >= 0");
  if (n_fine > 0 && (fine_steps == 0 || n_fine % fine_steps != 0)) {
    throw ConfigError("n_fine must be a positive multiple of fine_steps");
  }
  if (!(base_inv_s > 0)) throw ConfigError("base_inv_s must be positive");
}

std::vector<double> stratified_depths(const Ray& ray, int n, std::mt19937_64* rng) {
  std::vector<double> d(n);
  const double step = (ray.far - ray.near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = rng ? uniform01(*rng) : 0.5;
    d[i] = ray.near + (i + u) * step;
  }
  return d;
}

std::vector<double> sample_pdf(std::span<const double> depths, std::span<const double> weights,
                               int count) {
  if (depths.size() < 2 || weights.size() + 1 != depths.size()) {
    throw ConfigError("sample_pdf: need one weight per interval");
  }
  std::vector<double> cdf(depths.size(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) cdf[i + 1] = cdf[i] + weights[i] + 1e-5;
  const double total = cdf.back();
  std::vector<double> out(count);
  std::size_t i = 0;
  for (int j = 0; j < count; ++j) {
    const double u = (j + 0.5) / count * total;
    while (i + 2 < cdf.size() && cdf[i + 1] <= u) ++i;
    const double span = cdf[i + 1] - cdf[i];
    const double frac = span > 0 ? std::clamp((u - cdf[i]) / span, 0.0, 1.0) : 0.5;
    out[j] = depths[i] + frac * (depths[i + 1] - depths[i]);
  }
  return out;
}

namespace {

constexpr double kMinGap = 1e-9;

void enforce_increasing(std::vector<double>& d) {
  for (std::size_t i = 1; i < d.size(); ++i) d[i] = std::max(d[i], d[i - 1] + kMinGap);
}

}  // namespace

std::vector<double> merge_sorted(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  enforce_increasing(a);
  return a;
}

template <typename T>
Eigen::VectorXd observed_sdf(const SceneFields<T>& fields, const Eigen::MatrixXd& points,
                             const Eigen::VectorXd& times) {
  ad::NoGradGuard no_grad;
  ad::Matrix<T> x = points.cast<T>();
  ad::Matrix<T> t = times.cast<T>();
  ad::Var<T> xc = fields.deformation.warp(ad::constant<T>(std::move(x)), ad::constant<T>(std::move(t)));
  const ad::Var<T> rho = fields.sdf.sdf(xc);
  return rho.value().col(0).template cast<double>();
}

template <typename T>
Eigen::MatrixXd sample_rays(const SceneFields<T>& fields, std::span<const Ray> rays,
                            const SamplingOptions& options, std::mt19937_64* rng) {
  options.validate();
  const std::size_t n_rays = rays.size();
  std::vector<std::vector<double>> depth(n_rays), rho(n_rays);
  for (std::size_t r = 0; r < n_rays; ++r) depth[r] = stratified_depths(rays[r], options.n_coarse, options.jitter ? rng : nullptr);

  auto evaluate = [&](const std::vector<std::vector<double>>& d) {
    std::size_t total = 0;
    for (const auto& v : d) total += v.size();
    Eigen::MatrixXd pts(total, 3);
    Eigen::VectorXd ts(total);
    std::size_t k = 0;
    for (std::size_t r = 0; r < n_rays; ++r) {
      for (double h : d[r]) {
        pts.row(k) = (rays[r].origin + h * rays[r].dir).transpose();
        ts(k++) = rays[r].time;
      }
    }
    const Eigen::VectorXd values = observed_sdf(fields, pts, ts);
    std::vector<std::vector<double>> out(n_rays);
    k = 0;
    for (std::size_t r = 0; r < n_rays; ++r) {
      out[r].assign(values.data() + k, values.data() + k + d[r].size());
      k += d[r].size();
    }
    return out;
  };

  if (options.n_fine > 0) {
    rho = evaluate(depth);
    const int per_round = options.n_fine / options.fine_steps;
    for (int round = 0; round < options.fine_steps; ++round) {
      const double s = 1.0 / (options.base_inv_s * std::pow(2.0, round));
      std::vector<std::vector<double>> fresh(n_rays);
      for (std::size_t r = 0; r < n_rays; ++r) {
        const auto a = ray_alphas(rho[r], s);
        std::vector<double> w(a.size() - 1);
        double trans = 1.0;
        for (std::size_t i = 0; i + 1 < a.size(); ++i) {
          w[i] = trans * a[i];
          trans *= 1.0 - a[i];
        }
        fresh[r] = sample_pdf(depth[r], w, per_round);
      }
      const auto fresh_rho = evaluate(fresh);
      for (std::size_t r = 0; r < n_rays; ++r) {
        std::vector<std::pair<double, double>> merged;
        for (std::size_t i = 0; i < depth[r].size(); ++i) merged.emplace_back(depth[r][i], rho[r][i]);
        for (std::size_t i = 0; i < fresh[r].size(); ++i) {
          merged.emplace_back(fresh[r][i], fresh_rho[r][i]);
        }
        std::stable_sort(merged.begin(), merged.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        depth[r].resize(merged.size());
        rho[r].resize(merged.size());
        for (std::size_t i = 0; i < merged.size(); ++i) {
          depth[r][i] = merged[i].first;
          rho[r][i] = merged[i].second;
        }
        enforce_increasing(depth[r]);
      }
    }
  }
  Eigen::MatrixXd out(n_rays, options.total());
  for (std::size_t r = 0; r < n_rays; ++r) {
    for (int j = 0; j < options.total(); ++j) out(r, j) = depth[r][j];
  }
  return out;
}

namespace {

template <typename T>
void check_finite(const RenderBatch<T>& b, std::span<const Ray> rays) {
  const auto& c = b.color.value();
  const auto& d = b.depth.value();
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    if (c.row(r).allFinite() && std::isfinite(d(r, 0))) continue;
    std::ostringstream msg;
    msg << "non-finite render output for ray at pixel (" << rays[r].row << ", " << rays[r].col
        << "), time " << rays[r].time;
    throw RenderFault(msg.str());
  }
}

}  // namespace

template <typename T>
RenderBatch<T> render_samples(const SceneFields<T>& fields, std::span<const Ray> rays,
                              const Eigen::MatrixXd& depths, bool differentiable) {
  const Eigen::Index n_rays = static_cast<Eigen::Index>(rays.size());
  const Eigen::Index s = depths.cols();
  if (depths.rows() != n_rays || s < 2) throw ConfigError("render_samples: bad depth matrix");
  const Eigen::Index n = n_rays * s;
  ad::Matrix<T> xo(n, 3), vo(n, 3), t(n, 1), h(n_rays, s);
  for (Eigen::Index r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[r];
    for (Eigen::Index j = 0; j < s; ++j) {
      const Eigen::Index k = r * s + j;
      const Eigen::Vector3d x = ray.origin + depths(r, j) * ray.dir;
      for (int c = 0; c < 3; ++c) {
        xo(k, c) = static_cast<T>(x(c));
        vo(k, c) = static_cast<T>(ray.dir(c));
      }
      t(k, 0) = static_cast<T>(ray.time);
      h(r, j) = static_cast<T>(j + 1 < s ? 0.5 * (depths(r, j) + depths(r, j + 1)) : depths(r, j));
    }
  }

  RenderBatch<T> out;
  out.depths = depths;
  ad::GradModeGuard record(true);
  ad::Var<T> xo_var = differentiable ? ad::constant<T>(std::move(xo)) : ad::parameter<T>(std::move(xo));
  ad::Var<T> vo_var = ad::constant<T>(std::move(vo));
  auto [xc, jv] = fields.deformation.warp_with_jvp(xo_var, ad::constant<T>(std::move(t)), vo_var);
  if (!xc.requires_grad()) xc = ad::detach(xc, /*requires_grad=*/true);
  const ad::Var<T> sdf_out = fields.sdf.forward(xc);
  const ad::Var<T> rho = SdfField<T>::sdf_of(sdf_out);
  const ad::Var<T> feature = SdfField<T>::feature_of(sdf_out);
  ad::Var<T> normals;
  if (differentiable) {
    normals = ad::grad<T>(rho, {xc}, /*create_graph=*/true)[0];
  } else {
    auto g = ad::grad<T>(rho, {xc, xo_var}, /*create_graph=*/false);
    normals = g[0];
    out.observed_normals = g[1];
  }

  std::optional<ad::NoGradGuard> frozen;
  if (!differentiable) {
    frozen.emplace();
    xc = ad::detach(xc);
    jv = ad::detach(jv);
  }
  const ad::Var<T> vc = ad::normalize_rows(ad::add(vo_var, jv));
  const ad::Var<T> color = fields.radiance.forward(xc, vc, normals, differentiable ? feature : ad::detach(feature));

  out.alpha = ad::unbiased_alpha(ad::reshape(differentiable ? rho : ad::detach(rho), n_rays, s),
                                 fields.inv_deviation());
  out.weights = ad::transmittance_weights(out.alpha);
  const ad::Var<T> wcol = ad::reshape(out.weights, n, 1);
  std::vector<ad::Var<T>> channels;
  for (int c = 0; c < 3; ++c) {
    channels.push_back(
        ad::sum_cols(ad::reshape(ad::mul(ad::slice_cols(color, c, 1), wcol), n_rays, s)));
  }
  out.color = ad::concat_cols(channels);
  out.depth = ad::sum_cols(ad::mul(out.weights, ad::constant<T>(std::move(h))));
  out.acc = ad::sum_cols(out.weights);
  out.sdf = rho;
  out.normals = normals;
  out.canonical_points = xc;
  out.canonical_dirs = vc;
  check_finite(out, rays);
  return out;
}

template <typename T>
std::vector<RayResult> render_rays(const SceneFields<T>& fields, std::span<const Ray> rays,
                                   const SamplingOptions& options, int chunk) {
  SamplingOptions opts = options;
  opts.jitter = false;
  std::vector<RayResult> out(rays.size());
  const std::size_t step = static_cast<std::size_t>(std::max(chunk, 1));
  parallel_for((rays.size() + step - 1) / step, [&](std::size_t part_index) {
    const std::size_t start = part_index * step;
    const auto part = rays.subspan(start, std::min(step, rays.size() - start));
    const Eigen::MatrixXd depths = sample_rays(fields, part, opts, nullptr);
    const RenderBatch<T> b = render_samples(fields, part, depths, /*differentiable=*/false);
    const Eigen::Index s = depths.cols();
    for (std::size_t r = 0; r < part.size(); ++r) {
      RayResult& res = out[start + r];
      for (int c = 0; c < 3; ++c) res.color(c) = b.color.value()(r, c);
      res.depth = b.depth.value()(r, 0);
      res.acc = b.acc.value()(r, 0);
      for (Eigen::Index j = 0; j < s; ++j) {
        const double w = b.weights.value()(r, j);
        for (int c = 0; c < 3; ++c) res.normal(c) += w * b.observed_normals.value()(r * s + j, c);
      }
      if (res.normal.norm() > 0) res.normal.normalize();
    }
  });
  return out;
}

template <typename T>
RayResult render_ray(const SceneFields<T>& fields, const Ray& ray, const SamplingOptions& options) {
  return render_rays(fields, std::span<const Ray>(&ray, 1), options, 1).front();
}

template <typename T>
FrameRender render_frame(const SceneFields<T>& fields, const Frame& frame,
                         const SceneNormalization& norm, const SamplingOptions& options,
                         bool all_pixels) {
  FrameRender fr;
  fr.height = frame.height;
  fr.width = frame.width;
  const std::size_t px = static_cast<std::size_t>(frame.pixel_count());
  fr.color.assign(px * 3, 0.f);
  fr.depth.assign(px, 0.f);
  fr.normal.assign(px * 3, 0.f);
  fr.rendered.assign(px, 0);
  const Eigen::Matrix4d pn = norm.normalized_projection(frame.projection);
  std::vector<Ray> rays;
  for (int r = 0; r < frame.height; ++r) {
    for (int c = 0; c < frame.width; ++c) {
      if (!all_pixels && !frame.mask[frame.index(r, c)]) continue;
      if (auto ray = make_ray(pn, r, c, frame.time)) rays.push_back(*ray);
    }
  }
  const auto results = render_rays(fields, std::span<const Ray>(rays), options);
  for (std::size_t k = 0; k < rays.size(); ++k) {
    const std::size_t i = static_cast<std::size_t>(frame.index(rays[k].row, rays[k].col));
    fr.rendered[i] = 1;
    fr.depth[i] = static_cast<float>(results[k].depth);
    for (int c = 0; c < 3; ++c) {
      fr.color[3 * i + c] = static_cast<float>(results[k].color(c));
      fr.normal[3 * i + c] = static_cast<float>(results[k].normal(c));
    }
  }
  return fr;
}

#define DSURF_RENDER_INSTANTIATE(T)                                                          \
  template Eigen::VectorXd observed_sdf<T>(const SceneFields<T>&, const Eigen::MatrixXd&,    \
                                           const Eigen::VectorXd&);                          \
  template Eigen::MatrixXd sample_rays<T>(const SceneFields<T>&, std::span<const Ray>,       \
                                          const SamplingOptions&, std::mt19937_64*);         \
  template RenderBatch<T> render_samples<T>(const SceneFields<T>&, std::span<const Ray>,     \
                                            const Eigen::MatrixXd&, bool);                   \
  template std::vector<RayResult> render_rays<T>(const SceneFields<T>&, std::span<const Ray>, \
                                                 const SamplingOptions&, int);               \
  template RayResult render_ray<T>(const SceneFields<T>&, const Ray&, const SamplingOptions&); \
  template FrameRender render_frame<T>(const SceneFields<T>&, const Frame&,                  \
                                       const SceneNormalization&, const SamplingOptions&, bool);

DSURF_RENDER_INSTANTIATE(float)
DSURF_RENDER_INSTANTIATE(double)

}  // namespace dsurf
