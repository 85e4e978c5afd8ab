#pragma once

#include <memory>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dsurf/dataset.hpp"

namespace dsurf {

/// Analytic time-dependent scene used as ground truth. Positive SDF on the
/// camera side; color is defined in the canonical (undeformed) frame.
class AnalyticScene {
 public:
  virtual ~AnalyticScene() = default;
  virtual double sdf(const Eigen::Vector3d& x, double t) const = 0;
  /// Ground-truth observed→canonical map.
  virtual Eigen::Vector3d to_canonical(const Eigen::Vector3d& x, double t) const = 0;
  /// Upper bound on |∇sdf|; sphere tracing steps by sdf / bound.
  virtual double lipschitz() const { return 1.0; }
  /// True when sdf(o + h·v) is convex in h for every ray.
  virtual bool convex_along_rays() const { return false; }
  /// Radius used for the relative acceptance thresholds (scene units).
  virtual double object_radius() const = 0;

  Eigen::Vector3d normal(const Eigen::Vector3d& x, double t) const;
  Eigen::Vector3d albedo(const Eigen::Vector3d& canonical) const;
};

struct SyntheticConfig {
  std::string preset = "static-sphere";  // static-sphere | translating-sphere | bulging-plane
  int frames = 24;
  int resolution = 64;
  double focal_factor = 1.2;   // focal length in units of image width
  double camera_distance = 2.0;
  bool tool_holes = false;
  std::uint64_t seed = 0;
  double depth_scale_mm = 100.0;
  double sphere_radius = 0.5;
  double orbit_degrees = 30.0;
  double translation_amplitude = 0.15;
  double bulge_height = 0.15;
  double bulge_sigma = 0.3;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticConfig from_json(const nlohmann::json& j);
};

std::unique_ptr<AnalyticScene> make_scene(const SyntheticConfig& cfg);

/// Scene-space projection of frame i.
Eigen::Matrix4d synthetic_projection(const SyntheticConfig& cfg, int frame);

/// Renders color/depth/mask of `scene` at time t by sphere tracing
/// (≤128 steps, ε = 1e-5). `unconverged` receives the number of pixels
/// that neither hit nor escaped.
Frame render_analytic_frame(const AnalyticScene& scene, const Eigen::Matrix4d& projection,
                            int height, int width, double t, int* unconverged = nullptr);

/// Full dataset in memory, normalized, with timestamps i/T. Unconverged
/// (grazing) pixels become background; more than 0.1% of all pixels is a
/// DataError.
Dataset generate_synthetic(const SyntheticConfig& cfg);

/// RMS over frames of the distance between the true warp and its mean
/// (scene units); zero for static scenes.
double true_warp_magnitude(const SyntheticConfig& cfg);

/// Ground-truth displacement x_c − x_o at an observed point (scene units).
Eigen::Vector3d true_displacement(const AnalyticScene& scene, const Eigen::Vector3d& x, double t);

}  // namespace dsurf
