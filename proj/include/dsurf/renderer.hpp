#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dsurf/autodiff.hpp"
#include "dsurf/dataset.hpp"
#include "dsurf/fields.hpp"

namespace dsurf {

/// r(h) = origin + h·dir in normalized scene coordinates, h ∈ [near, far].
struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
  double near = 0.0;
  double far = 1.0;
  int row = 0;
  int col = 0;
  double time = 0.0;
};

/// Ray through the center of pixel (row, col) for a projection that already
/// maps normalized coordinates. Returns nullopt when the ray misses the unit
/// sphere or the sphere lies behind the origin.
std::optional<Ray> make_ray(const Eigen::Matrix4d& normalized_projection, int row, int col,
                            double time);
std::optional<Ray> make_ray(const Frame& frame, const SceneNormalization& norm, int row, int col);

// ---- Scalar reference formulas ----------------------------------------------

/// φ(ρ) = sigmoid(ρ / s).
double phi(double rho, double s);
/// α = max((φ(ρ_i) − φ(ρ_{i+1})) / φ(ρ_i), 0); 0 when φ(ρ_i) < 1e-12.
double alpha(double rho_i, double rho_next, double s);

struct Composite {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0.0;
  double acc = 0.0;
  std::vector<double> weights;
  std::vector<double> transmittance;
};

/// Ĉ = Σ T_i α_i c_i, D̂ = Σ T_i α_i h_i, T_i = Π_{j<i}(1 − α_j).
Composite composite(std::span<const double> alphas, std::span<const Eigen::Vector3d> colors,
                    std::span<const double> depths);

/// α along one ray from per-sample SDF values (last sample gets 0).
std::vector<double> ray_alphas(std::span<const double> rho, double s);

/// Depth that represents section i = [h_i, h_{i+1}] in D̂: its midpoint. The
/// last sample (α = 0) keeps its own depth.
std::vector<double> section_depths(std::span<const double> h);

// ---- Sampling ----------------------------------------------------------------

struct SamplingOptions {
  int n_coarse = 32;
  int n_fine = 32;       // total samples added by importance sampling
  int fine_steps = 4;    // rounds; each adds n_fine / fine_steps
  double base_inv_s = 32.0;  // round k sharpens with inverse deviation base·2^k
  bool jitter = false;   // stratified jitter (training) vs bin midpoints
  int total() const { return n_coarse + n_fine; }
  void validate() const;
};

/// Stratified coarse depths in [near, far], jittered when `rng` is given.
std::vector<double> stratified_depths(const Ray& ray, int n, std::mt19937_64* rng);

/// Inverse-CDF draws of `count` depths from per-interval weights over the
/// sorted `depths` (weights.size() == depths.size() − 1), at u = (j + 0.5)/count.
std::vector<double> sample_pdf(std::span<const double> depths, std::span<const double> weights,
                               int count);

/// Merges and sorts, moving exact or near duplicates apart by 1e-9 so depths
/// stay strictly increasing.
std::vector<double> merge_sorted(std::vector<double> a, const std::vector<double>& b);

/// ρ(x + Ψ_d(x, t)) at observed points, no graph.
template <typename T>
Eigen::VectorXd observed_sdf(const SceneFields<T>& fields, const Eigen::MatrixXd& points,
                             const Eigen::VectorXd& times);

/// Hierarchical sample depths for each ray: [rays × total()] ascending rows.
template <typename T>
Eigen::MatrixXd sample_rays(const SceneFields<T>& fields, std::span<const Ray> rays,
                            const SamplingOptions& options, std::mt19937_64* rng);

// ---- Batched rendering ---------------------------------------------------------

/// Outputs of rendering R rays with S samples each. Per-sample tensors have
/// R·S rows ordered ray-major (row r·S + j).
template <typename T>
struct RenderBatch {
  Eigen::MatrixXd depths;        // [R × S]
  ad::Var<T> color;              // [R × 3]
  ad::Var<T> depth;              // [R × 1]
  ad::Var<T> acc;                // [R × 1]
  ad::Var<T> weights;            // [R × S]
  ad::Var<T> alpha;              // [R × S]
  ad::Var<T> sdf;                // [R·S × 1]
  ad::Var<T> normals;            // [R·S × 3] canonical ∇ρ
  ad::Var<T> canonical_points;   // [R·S × 3]
  ad::Var<T> canonical_dirs;     // [R·S × 3]
  ad::Var<T> observed_normals;   // [R·S × 3], values-only renders
};

/// Renders the given sample depths. With `differentiable` the graph to all
/// parameters is kept (normals are differentiable too); otherwise values only.
template <typename T>
RenderBatch<T> render_samples(const SceneFields<T>& fields, std::span<const Ray> rays,
                              const Eigen::MatrixXd& depths, bool differentiable);

struct RayResult {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0.0;
  double acc = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();  // weight-averaged observed-space normal
};

/// Deterministic (midpoint) hierarchical sampling + rendering, values only.
/// Rays are processed in chunks of `chunk` rays.
template <typename T>
std::vector<RayResult> render_rays(const SceneFields<T>& fields, std::span<const Ray> rays,
                                   const SamplingOptions& options, int chunk = 256);

template <typename T>
RayResult render_ray(const SceneFields<T>& fields, const Ray& ray,
                     const SamplingOptions& options = {});

/// Per-pixel render of a frame (normalized units): rays only for mask-active
/// pixels unless `all_pixels`.
struct FrameRender {
  int height = 0;
  int width = 0;
  std::vector<float> color;   // H·W·3
  std::vector<float> depth;   // H·W, normalized range along the ray, 0 where not rendered
  std::vector<float> normal;  // H·W·3, observed-space unit normals
  std::vector<std::uint8_t> rendered;
};

template <typename T>
FrameRender render_frame(const SceneFields<T>& fields, const Frame& frame,
                         const SceneNormalization& norm, const SamplingOptions& options,
                         bool all_pixels = false);

}  // namespace dsurf
