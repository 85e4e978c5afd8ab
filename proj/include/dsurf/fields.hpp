#pragma once

#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dsurf/checkpoint.hpp"
#include "dsurf/mlp.hpp"

namespace dsurf {

/// Depth/width/skip/encoding of one coordinate network.
struct NetShape {
  int depth = 8;
  int width = 256;
  std::vector<int> skip_layers{4};
  int freqs = 6;
};

bool operator==(const NetShape& a, const NetShape& b);

struct FieldsConfig {
  NetShape deformation{8, 256, {4}, 6};
  NetShape sdf{8, 256, {4}, 6};
  /// `freqs` of the radiance shape encodes position; direction uses `radiance_dir_freqs`.
  NetShape radiance{8, 256, {4}, 10};
  int radiance_dir_freqs = 4;
  /// Geometry feature size; 0 means "same as the SDF width".
  int feature_size = 0;
  double sdf_init_bias = 0.8;
  double softplus_beta = 100.0;
  double init_deviation = 0.3;

  int features() const { return feature_size > 0 ? feature_size : sdf.width; }
  void validate() const;
  /// Reduced networks used for CPU-scale training runs.
  static FieldsConfig desk();
};

bool operator==(const FieldsConfig& a, const FieldsConfig& b);
void to_json(nlohmann::json& j, const NetShape& s);
void from_json(const nlohmann::json& j, NetShape& s);
void to_json(nlohmann::json& j, const FieldsConfig& c);
void from_json(const nlohmann::json& j, FieldsConfig& c);

/// Observed → canonical warp: x_c = x_o + Ψ_d(x_o, t). Input is (x, t) encoded jointly.
template <typename T>
class DeformationField {
 public:
  DeformationField() = default;
  explicit DeformationField(const NetShape& shape);

  Mlp<T>& net() { return net_; }
  const Mlp<T>& net() const { return net_; }

  /// Default init with a zeroed output layer (identity warp).
  void init(std::mt19937_64& rng);
  /// Zeroes the output layer so that Ψ_d ≡ 0 (identity warp).
  void zero_output();

  ad::Var<T> displacement(const ad::Var<T>& x, const ad::Var<T>& t) const;
  ad::Var<T> warp(const ad::Var<T>& x, const ad::Var<T>& t) const;
  /// (x_c, J·dir) with J = ∂Ψ_d/∂x_o.
  std::pair<ad::Var<T>, ad::Var<T>> warp_with_jvp(const ad::Var<T>& x, const ad::Var<T>& t,
                                                  const ad::Var<T>& dir) const;

 private:
  Mlp<T> net_;
};

/// Canonical geometry Ψ_s(x_c) ↦ (ρ, f); output column 0 is ρ.
template <typename T>
class SdfField {
 public:
  SdfField() = default;
  SdfField(const NetShape& shape, int features, double softplus_beta);

  Mlp<T>& net() { return net_; }
  const Mlp<T>& net() const { return net_; }
  int features() const { return net_.spec().out_dim - 1; }

  /// Geometric initialization: ρ(x) ≈ ‖x‖ − bias, positive outside.
  void init_sphere(std::mt19937_64& rng, double bias);

  ad::Var<T> forward(const ad::Var<T>& x) const;  // [N × (1+F)]
  static ad::Var<T> sdf_of(const ad::Var<T>& out) { return ad::slice_cols(out, 0, 1); }
  static ad::Var<T> feature_of(const ad::Var<T>& out) {
    return ad::slice_cols(out, 1, out.cols() - 1);
  }
  ad::Var<T> sdf(const ad::Var<T>& x) const { return sdf_of(forward(x)); }
  /// ∇ρ at x (unnormalized). With `create_graph` the result stays differentiable.
  ad::Var<T> gradient(const ad::Var<T>& x, bool create_graph) const;

 private:
  void refit_sphere(std::mt19937_64& rng, double bias);
  Mlp<T> net_;
};

/// Ψ_r(x_c, v_c, n_c, f) ↦ c ∈ [0,1]³ (sigmoid output).
template <typename T>
class RadianceField {
 public:
  RadianceField() = default;
  RadianceField(const NetShape& shape, int dir_freqs, int features);

  Mlp<T>& net() { return net_; }
  const Mlp<T>& net() const { return net_; }
  void init(std::mt19937_64& rng) { net_.init_default(rng); }

  ad::Var<T> forward(const ad::Var<T>& x, const ad::Var<T>& view, const ad::Var<T>& normal,
                     const ad::Var<T>& feature) const;

 private:
  Mlp<T> net_;
  int pos_freqs_ = 10;
  int dir_freqs_ = 4;
};

/// The three networks plus the trainable deviation s = exp(θ).
template <typename T>
class SceneFields {
 public:
  SceneFields() = default;
  explicit SceneFields(const FieldsConfig& config);

  const FieldsConfig& config() const { return config_; }
  void initialize(std::uint64_t seed);

  DeformationField<T> deformation;
  SdfField<T> sdf;
  RadianceField<T> radiance;
  ad::Var<T> log_deviation;  // θ, [1×1]

  double deviation() const { return std::exp(static_cast<double>(log_deviation.item())); }
  ad::Var<T> inv_deviation() const { return ad::exp(ad::neg(log_deviation)); }

  /// Deformation, SDF, radiance parameters, then θ. The optimizer and the
  /// checkpoint rely on this order.
  std::vector<ad::Var<T>> parameters() const;
  std::vector<std::string> parameter_names() const;

  /// Deep copy: parameters are not shared with `*this`.
  SceneFields clone() const;

  void save_to(Checkpoint& ck) const;
  static SceneFields load_from(const Checkpoint& ck);

 private:
  FieldsConfig config_;
};

// ---- Single-point operations ----------------------------------------------
// Convenience wrappers over the batched fields, computed in the field's precision.

template <typename T>
Eigen::Vector3d deform(const DeformationField<T>& f, const Eigen::Vector3d& x, double t);
template <typename T>
Eigen::Matrix3d deform_jacobian(const DeformationField<T>& f, const Eigen::Vector3d& x, double t);
/// normalize((I + J) v). Throws DegenerateInput when (I + J) v vanishes.
template <typename T>
Eigen::Vector3d canonical_view_dir(const DeformationField<T>& f, const Eigen::Vector3d& x,
                                   double t, const Eigen::Vector3d& v);
template <typename T>
std::pair<double, Eigen::VectorXd> sdf(const SdfField<T>& f, const Eigen::Vector3d& x);
template <typename T>
Eigen::Vector3d sdf_normal(const SdfField<T>& f, const Eigen::Vector3d& x);
/// Gradient of x ↦ ρ(x + Ψ_d(x, t)) at the observed point.
template <typename T>
Eigen::Vector3d observed_normal(const SceneFields<T>& f, const Eigen::Vector3d& x, double t);
template <typename T>
Eigen::Vector3d radiance(const RadianceField<T>& f, const Eigen::Vector3d& x,
                         const Eigen::Vector3d& view, const Eigen::Vector3d& normal,
                         const Eigen::VectorXd& feature);

}  // namespace dsurf
