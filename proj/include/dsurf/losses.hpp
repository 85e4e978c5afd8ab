#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dsurf/autodiff.hpp"
#include "dsurf/fields.hpp"
#include "dsurf/renderer.hpp"

namespace dsurf {

enum LossTerm { kColor = 0, kDepth, kEikonal, kSdf, kVisible, kSmooth, kLossTermCount };

inline constexpr std::array<const char*, kLossTermCount> kLossNames{
    "color", "depth", "eikonal", "sdf", "visible", "smooth"};

struct LossWeights {
  double color = 1.0;
  double depth = 1.0;
  double eikonal = 0.1;
  double sdf = 1.0;
  double visible = 0.1;
  double smooth = 0.1;

  std::array<double, kLossTermCount> values() const {
    return {color, depth, eikonal, sdf, visible, smooth};
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct LossReport {
  std::array<double, kLossTermCount> components{};
  double total = 0.0;
};

/// Weighted sum of already-evaluated components. Throws TrainingFault naming
/// the first non-finite component.
LossReport weighted_total(const std::array<double, kLossTermCount>& components,
                          const LossWeights& weights);

// ---- Individual terms ([1×1] results) ------------------------------------------
// Every set-sum is a mean over its set.

/// Σ_r M(r)·‖pred_r − gt_r‖₁ / #active. Throws DegenerateInput with no active ray.
template <typename T>
ad::Var<T> color_loss(const ad::Var<T>& pred, const Eigen::MatrixXd& gt, const Eigen::VectorXd& mask);

/// As color_loss over rays that are active and have gt > 0.
template <typename T>
ad::Var<T> depth_loss(const ad::Var<T>& pred, const Eigen::VectorXd& gt, const Eigen::VectorXd& mask);

/// mean (‖g‖ − 1)² over rows of `gradients`.
template <typename T>
ad::Var<T> eikonal_loss(const ad::Var<T>& gradients);

/// mean |ρ|.
template <typename T>
ad::Var<T> sdf_surface_loss(const ad::Var<T>& rho);

/// mean max(⟨n, v⟩, 0).
template <typename T>
ad::Var<T> visibility_loss(const ad::Var<T>& normals, const ad::Var<T>& dirs);

/// mean ‖g(p) − g(p + ε)‖₁.
template <typename T>
ad::Var<T> smoothness_loss(const ad::Var<T>& gradients, const ad::Var<T>& shifted_gradients);

// ---- Whole-batch evaluation ---------------------------------------------------

/// Supervision for a set of rays.
struct RayBatch {
  std::vector<Ray> rays;
  Eigen::MatrixXd color;  // [R × 3]
  Eigen::VectorXd depth;  // [R] range along the ray in normalized units, 0 = invalid
  Eigen::VectorXd mask;   // [R] 1 = active
};

/// Per-iteration random inputs of the geometry terms.
struct GeometryDraws {
  Eigen::MatrixXd ball_points;  // Eikonal points, uniform in the unit ball
  Eigen::MatrixXd offsets;      // [R × 3] smoothness ε, uniform in the ball of `radius`
};

GeometryDraws draw_geometry(std::mt19937_64& rng, std::size_t rays, std::size_t ball_points,
                            double radius);

template <typename T>
struct LossEvaluation {
  ad::Var<T> total;
  std::array<ad::Var<T>, kLossTermCount> terms;
  LossReport report;
  RenderBatch<T> render;
};

/// Renders `batch` at the given sample depths and assembles all six terms.
///
/// Surface points D are the back-projected GT depths of active rays. The
/// Eikonal term averages two equally weighted means: over the canonical ray
/// samples and over `draws.ball_points`.
template <typename T>
LossEvaluation<T> evaluate_losses(const SceneFields<T>& fields, const RayBatch& batch,
                                  const Eigen::MatrixXd& depths, const GeometryDraws& draws,
                                  const LossWeights& weights);

}  // namespace dsurf
