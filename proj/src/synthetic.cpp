#include "dsurf/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "dsurf/camera.hpp"
#include "dsurf/error.hpp"
#include "dsurf/random.hpp"

namespace dsurf {

namespace {

constexpr int kMaxSteps = 128;
constexpr double kHitEps = 1e-5;
constexpr double kEscape = 20.0;
const Eigen::Vector3d kLight = Eigen::Vector3d(0.3, -0.5, -1.0).normalized();

double deg(double d) { return d * std::numbers::pi / 180.0; }

class SphereScene final : public AnalyticScene {
 public:
  SphereScene(double radius, double amplitude) : radius_(radius), amplitude_(amplitude) {}
  Eigen::Vector3d center(double t) const { return {amplitude_ * (2.0 * t - 1.0), 0.0, 0.0}; }
  double sdf(const Eigen::Vector3d& x, double t) const override {
    return (x - center(t)).norm() - radius_;
  }
  Eigen::Vector3d to_canonical(const Eigen::Vector3d& x, double t) const override {
    return x - center(t);
  }
  double object_radius() const override { return radius_; }
  bool convex_along_rays() const override { return true; }

 private:
  double radius_;
  double amplitude_;
};

// Plane z = 0 (camera at negative z) with a Gaussian bump toward the camera
// whose height follows sin(πt).
class BulgingPlaneScene final : public AnalyticScene {
 public:
  BulgingPlaneScene(double height, double sigma) : height_(height), sigma_(sigma) {}
  double bump(double x, double y, double t) const {
    const double r2 = x * x + y * y;
    return -height_ * std::sin(std::numbers::pi * t) * std::exp(-r2 / (2 * sigma_ * sigma_));
  }
  double sdf(const Eigen::Vector3d& x, double t) const override {
    return bump(x.x(), x.y(), t) - x.z();
  }
  Eigen::Vector3d to_canonical(const Eigen::Vector3d& x, double t) const override {
    return {x.x(), x.y(), x.z() - bump(x.x(), x.y(), t)};
  }
  double lipschitz() const override {
    const double slope = height_ / sigma_ * std::exp(-0.5);
    return std::sqrt(1.0 + slope * slope);
  }
  double object_radius() const override { return 0.5; }

 private:
  double height_;
  double sigma_;
};

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                        const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double s = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + s * ab)).norm();
}

// Cuts a tool-shaped capsule entering from the image border.
void cut_tool(Frame& f, std::mt19937_64& rng) {
  const double w = f.width, h = f.height;
  const double side = uniform01(rng);
  Eigen::Vector2d entry;
  if (side < 0.5) {
    entry = {w * (0.2 + 0.6 * uniform01(rng)), h};  // bottom edge
  } else {
    entry = {side < 0.75 ? 0.0 : w, h * (0.5 + 0.4 * uniform01(rng))};  // left or right
  }
  const Eigen::Vector2d tip(w * (0.3 + 0.4 * uniform01(rng)), h * (0.45 + 0.2 * uniform01(rng)));
  const double radius = 0.06 * w;
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      if (segment_distance({c + 0.5, r + 0.5}, entry, tip) > radius) continue;
      const int i = f.index(r, c);
      f.mask[i] = 0;
      f.depth[i] = 0.f;
      for (int k = 0; k < 3; ++k) f.color[3 * i + k] = 90.f / 255.f;
    }
  }
}

}  // namespace

Eigen::Vector3d AnalyticScene::normal(const Eigen::Vector3d& x, double t) const {
  constexpr double h = 1e-6;
  Eigen::Vector3d g;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d a = x, b = x;
    a(k) += h;
    b(k) -= h;
    g(k) = (sdf(a, t) - sdf(b, t)) / (2 * h);
  }
  return g.normalized();
}

Eigen::Vector3d AnalyticScene::albedo(const Eigen::Vector3d& p) const {
  const double u = std::sin(3.0 * p.x() + 1.0) * std::cos(2.5 * p.y() - 0.5);
  const double v = std::cos(2.0 * p.x() - 3.0 * p.z());
  return {0.75 + 0.15 * u, 0.45 + 0.12 * v, 0.35 + 0.1 * u * v};
}

void SyntheticConfig::validate() const {
  if (preset != "static-sphere" && preset != "translating-sphere" && preset != "bulging-plane") {
    throw ConfigError("unknown synthetic preset '" + preset + "'");
  }
  if (frames < 1) throw ConfigError("synthetic frames must be >= 1");
  if (resolution < 8) throw ConfigError("synthetic resolution must be >= 8");
  if (!(focal_factor > 0) || !(camera_distance > 0) || !(sphere_radius > 0) ||
      !(bulge_sigma > 0) || !(depth_scale_mm > 0)) {
    throw ConfigError("synthetic scene parameters must be positive");
  }
}

nlohmann::json SyntheticConfig::to_json() const {
  return {{"preset", preset},
          {"frames", frames},
          {"resolution", resolution},
          {"focal_factor", focal_factor},
          {"camera_distance", camera_distance},
          {"tool_holes", tool_holes},
          {"seed", seed},
          {"depth_scale_mm", depth_scale_mm},
          {"sphere_radius", sphere_radius},
          {"orbit_degrees", orbit_degrees},
          {"translation_amplitude", translation_amplitude},
          {"bulge_height", bulge_height},
          {"bulge_sigma", bulge_sigma}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.preset = j.value("preset", c.preset);
  c.frames = j.value("frames", c.frames);
  c.resolution = j.value("resolution", c.resolution);
  c.focal_factor = j.value("focal_factor", c.focal_factor);
  c.camera_distance = j.value("camera_distance", c.camera_distance);
  c.tool_holes = j.value("tool_holes", c.tool_holes);
  c.seed = j.value("seed", c.seed);
  c.depth_scale_mm = j.value("depth_scale_mm", c.depth_scale_mm);
  c.sphere_radius = j.value("sphere_radius", c.sphere_radius);
  c.orbit_degrees = j.value("orbit_degrees", c.orbit_degrees);
  c.translation_amplitude = j.value("translation_amplitude", c.translation_amplitude);
  c.bulge_height = j.value("bulge_height", c.bulge_height);
  c.bulge_sigma = j.value("bulge_sigma", c.bulge_sigma);
  c.validate();
  return c;
}

std::unique_ptr<AnalyticScene> make_scene(const SyntheticConfig& cfg) {
  cfg.validate();
  if (cfg.preset == "static-sphere") return std::make_unique<SphereScene>(cfg.sphere_radius, 0.0);
  if (cfg.preset == "translating-sphere") {
    return std::make_unique<SphereScene>(cfg.sphere_radius, cfg.translation_amplitude);
  }
  return std::make_unique<BulgingPlaneScene>(cfg.bulge_height, cfg.bulge_sigma);
}

Eigen::Matrix4d synthetic_projection(const SyntheticConfig& cfg, int frame) {
  const double w = cfg.resolution;
  const double f = cfg.focal_factor * w;
  Eigen::Vector3d eye(0.0, 0.0, -cfg.camera_distance);
  if (cfg.preset == "static-sphere" && cfg.frames > 1) {
    const double a = deg(-cfg.orbit_degrees + 2.0 * cfg.orbit_degrees * frame / (cfg.frames - 1));
    const double e = deg(15.0) * std::sin(2.0 * std::numbers::pi * frame / cfg.frames);
    eye = cfg.camera_distance *
          Eigen::Vector3d(std::sin(a) * std::cos(e), std::sin(e), -std::cos(a) * std::cos(e));
  }
  return make_projection(f, f, 0.5 * w, 0.5 * w, look_at(eye, Eigen::Vector3d::Zero()));
}

Frame render_analytic_frame(const AnalyticScene& scene, const Eigen::Matrix4d& projection,
                            int height, int width, double t, int* unconverged) {
  Frame f;
  f.height = height;
  f.width = width;
  f.projection = projection;
  f.time = t;
  f.color.assign(static_cast<std::size_t>(height) * width * 3, 0.f);
  f.depth.assign(static_cast<std::size_t>(height) * width, 0.f);
  f.mask.assign(static_cast<std::size_t>(height) * width, 0);
  const Eigen::Vector3d o = camera_center(projection);
  const double lip = scene.lipschitz();
  const bool convex = scene.convex_along_rays();
  int failed = 0;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Eigen::Vector3d v = pixel_direction(projection, c + 0.5, r + 0.5);
      // Over-relaxed sphere tracing: steps of ω·d, falling back to a plain
      // step whenever consecutive unbounding spheres stop overlapping.
      // For scenes whose SDF is convex along rays, the secant through the
      // last two samples lies below the SDF beyond them, so its root never
      // passes the first hit; on grazing rays it converges far faster than
      // sphere steps. A growing distance there proves the ray missed.
      double h = 0.0, prev_radius = 0.0, step_len = 0.0, prev_d = -1.0, prev_h = 0.0;
      bool relaxed = true, hit = false, escaped = false;
      for (int step = 0; step < kMaxSteps; ++step) {
        const double d = scene.sdf(o + h * v, t);
        const double radius = std::abs(d) / lip;
        if (convex) {
          if (radius * lip < kHitEps) {
            hit = true;
            break;
          }
          double advance = d / lip;
          if (prev_d > 0.0) {
            if (d > prev_d) {
              escaped = true;
              break;
            }
            const double slope = (d - prev_d) / (h - prev_h);
            if (slope < 0.0) advance = std::max(advance, -d / slope);
          }
          prev_d = d;
          prev_h = h;
          h += advance;
          if (h > kEscape) {
            escaped = true;
            break;
          }
          continue;
        }
        if (relaxed && prev_radius + radius < step_len) {
          relaxed = false;
          h += prev_radius - step_len;
          step_len = prev_radius;
          continue;
        }
        const double omega = relaxed ? 1.9 : 1.0;
        relaxed = true;
        if (radius * lip < kHitEps) {
          hit = true;
          break;
        }
        prev_d = d;
        step_len = omega * d / lip;
        prev_radius = radius;
        h += step_len;
        if (h > kEscape) {
          escaped = true;
          break;
        }
      }
      if (!hit) {
        failed += !escaped;
        continue;
      }
      const Eigen::Vector3d x = o + h * v;
      const Eigen::Vector3d n = scene.normal(x, t);
      const double shade = 0.3 + 0.7 * std::max(0.0, n.dot(-kLight));
      const Eigen::Vector3d col = scene.albedo(scene.to_canonical(x, t)) * shade;
      const int i = f.index(r, c);
      f.mask[i] = 1;
      f.depth[i] = static_cast<float>(h);
      for (int k = 0; k < 3; ++k) {
        // 8-bit quantization so the in-memory frame equals its PNG round trip.
        const double q = std::round(std::clamp(col(k), 0.0, 1.0) * 255.0);
        f.color[3 * i + k] = static_cast<float>(q) / 255.f;
      }
    }
  }
  if (unconverged) *unconverged = failed;
  return f;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  const auto scene = make_scene(cfg);
  Dataset ds;
  ds.depth_scale_mm = cfg.depth_scale_mm;
  ds.provenance = {{"generator", "synthetic"}, {"scene", cfg.to_json()}};
  std::mt19937_64 rng(cfg.seed);
  long long unconverged = 0;
  for (int i = 0; i < cfg.frames; ++i) {
    const double t = static_cast<double>(i + 1) / cfg.frames;
    int failed = 0;
    Frame f = render_analytic_frame(*scene, synthetic_projection(cfg, i), cfg.resolution,
                                    cfg.resolution, t, &failed);
    unconverged += failed;
    if (cfg.tool_holes) cut_tool(f, rng);
    if (f.active_pixel_count() == 0) {
      throw DataError("synthetic frame " + std::to_string(i) + " has no foreground");
    }
    ds.frames.push_back(std::move(f));
  }
  const double total = static_cast<double>(cfg.frames) * cfg.resolution * cfg.resolution;
  if (unconverged > 0.001 * total) {
    throw DataError("sphere tracing did not converge on " + std::to_string(unconverged) +
                    " of " + std::to_string(static_cast<long long>(total)) + " pixels");
  }
  ds.normalization = compute_normalization(ds.frames);
  return ds;
}

Eigen::Vector3d true_displacement(const AnalyticScene& scene, const Eigen::Vector3d& x,
                                  double t) {
  return scene.to_canonical(x, t) - x;
}

double true_warp_magnitude(const SyntheticConfig& cfg) {
  const auto scene = make_scene(cfg);
  // Displacement of a reference point (origin for the sphere, bump apex for
  // the plane) tracked over all frame timestamps.
  std::vector<Eigen::Vector3d> d;
  for (int i = 0; i < cfg.frames; ++i) {
    d.push_back(true_displacement(*scene, Eigen::Vector3d::Zero(),
                                  static_cast<double>(i + 1) / cfg.frames));
  }
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double acc = 0.0;
  for (const auto& v : d) acc += (v - mean).squaredNorm();
  return std::sqrt(acc / static_cast<double>(d.size()));
}

}  // namespace dsurf
