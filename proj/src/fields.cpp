#include "dsurf/fields.hpp"

#include <cmath>
#include <numbers>

namespace dsurf {

bool operator==(const NetShape& a, const NetShape& b) {
  return a.depth == b.depth && a.width == b.width && a.skip_layers == b.skip_layers &&
         a.freqs == b.freqs;
}

bool operator==(const FieldsConfig& a, const FieldsConfig& b) {
  return a.deformation == b.deformation && a.sdf == b.sdf && a.radiance == b.radiance &&
         a.radiance_dir_freqs == b.radiance_dir_freqs && a.feature_size == b.feature_size &&
         a.sdf_init_bias == b.sdf_init_bias && a.softplus_beta == b.softplus_beta &&
         a.init_deviation == b.init_deviation;
}

void FieldsConfig::validate() const {
  if (!(init_deviation > 0)) throw ConfigError("fields: init_deviation must be > 0");
  if (feature_size < 0) throw ConfigError("fields: feature_size must be >= 0");
  if (radiance_dir_freqs < 0) throw ConfigError("fields: radiance_dir_freqs must be >= 0");
  for (const NetShape* s : {&deformation, &sdf, &radiance}) {
    MlpSpec spec;
    spec.depth = s->depth;
    spec.width = s->width;
    spec.skip_layers = s->skip_layers;
    spec.encoding_freqs = s->freqs;
    spec.validate();
  }
}

FieldsConfig FieldsConfig::desk() {
  FieldsConfig c;
  c.deformation = {4, 32, {2}, 6};
  c.sdf = {4, 64, {2}, 6};
  c.radiance = {3, 64, {}, 10};
  return c;
}

void to_json(nlohmann::json& j, const NetShape& s) {
  j = {{"depth", s.depth}, {"width", s.width}, {"skip_layers", s.skip_layers}, {"freqs", s.freqs}};
}

void from_json(const nlohmann::json& j, NetShape& s) {
  s.depth = j.value("depth", s.depth);
  s.width = j.value("width", s.width);
  s.skip_layers = j.value("skip_layers", s.skip_layers);
  s.freqs = j.value("freqs", s.freqs);
}

void to_json(nlohmann::json& j, const FieldsConfig& c) {
  j = {{"deformation", c.deformation},
       {"sdf", c.sdf},
       {"radiance", c.radiance},
       {"radiance_dir_freqs", c.radiance_dir_freqs},
       {"feature_size", c.feature_size},
       {"sdf_init_bias", c.sdf_init_bias},
       {"softplus_beta", c.softplus_beta},
       {"init_deviation", c.init_deviation}};
}

void from_json(const nlohmann::json& j, FieldsConfig& c) {
  if (j.contains("deformation")) j.at("deformation").get_to(c.deformation);
  if (j.contains("sdf")) j.at("sdf").get_to(c.sdf);
  if (j.contains("radiance")) j.at("radiance").get_to(c.radiance);
  c.radiance_dir_freqs = j.value("radiance_dir_freqs", c.radiance_dir_freqs);
  c.feature_size = j.value("feature_size", c.feature_size);
  c.sdf_init_bias = j.value("sdf_init_bias", c.sdf_init_bias);
  c.softplus_beta = j.value("softplus_beta", c.softplus_beta);
  c.init_deviation = j.value("init_deviation", c.init_deviation);
}

namespace {

MlpSpec make_spec(const NetShape& s, int in_dim, int out_dim, Activation hidden,
                  Activation output, int freqs) {
  MlpSpec spec;
  spec.depth = s.depth;
  spec.width = s.width;
  spec.skip_layers = s.skip_layers;
  spec.in_dim = in_dim;
  spec.out_dim = out_dim;
  spec.hidden = hidden;
  spec.output = output;
  spec.encoding_freqs = freqs;
  return spec;
}

template <typename T>
void fill_normal(ad::Matrix<T>& m, std::mt19937_64& rng, double mean, double stddev) {
  std::normal_distribution<double> n(mean, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
}

}  // namespace

// ---- Deformation ------------------------------------------------------------

template <typename T>
DeformationField<T>::DeformationField(const NetShape& shape)
    : net_(make_spec(shape, 4, 3, Activation::kRelu, Activation::kNone, shape.freqs)) {}

template <typename T>
void DeformationField<T>::init(std::mt19937_64& rng) {
  net_.init_default(rng);
  zero_output();
}

template <typename T>
void DeformationField<T>::zero_output() {
  const int last = net_.spec().depth - 1;
  net_.weight(last).mutable_value().setZero();
  net_.bias(last).mutable_value().setZero();
}

template <typename T>
ad::Var<T> DeformationField<T>::displacement(const ad::Var<T>& x, const ad::Var<T>& t) const {
  return net_.forward(ad::concat_cols<T>({x, t}));
}

template <typename T>
ad::Var<T> DeformationField<T>::warp(const ad::Var<T>& x, const ad::Var<T>& t) const {
  return ad::add(x, displacement(x, t));
}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> DeformationField<T>::warp_with_jvp(const ad::Var<T>& x,
                                                                      const ad::Var<T>& t,
                                                                      const ad::Var<T>& dir) const {
  ad::Var<T> dt = ad::constant<T>(ad::Matrix<T>::Zero(t.rows(), 1));
  auto [dx, jv] = net_.forward_with_tangent(ad::concat_cols<T>({x, t}), ad::concat_cols<T>({dir, dt}));
  return {ad::add(x, dx), jv};
}

// ---- SDF --------------------------------------------------------------------

template <typename T>
SdfField<T>::SdfField(const NetShape& shape, int features, double softplus_beta) {
  MlpSpec spec =
      make_spec(shape, 3, 1 + features, Activation::kSoftplus, Activation::kNone, shape.freqs);
  spec.softplus_beta = softplus_beta;
  net_ = Mlp<T>(spec);
}

template <typename T>
void SdfField<T>::init_sphere(std::mt19937_64& rng, double bias) {
  const MlpSpec& spec = net_.spec();
  const int enc = spec.encoded_dim();
  for (int l = 0; l < spec.depth; ++l) {
    auto& w = net_.weight(l).mutable_value();
    auto& b = net_.bias(l).mutable_value();
    const int out = spec.layer_out_dim(l);
    if (l == spec.depth - 1) {
      fill_normal(w, rng, std::sqrt(std::numbers::pi) / std::sqrt(double(spec.layer_in_dim(l))),
                  1e-4);
      if (spec.is_skip(l)) w.bottomRows(enc).setZero();
      b.setConstant(static_cast<T>(-bias));
      continue;
    }
    b.setZero();
    if (l > 0 && spec.is_skip(l)) {
      // Concatenation grows the input norm by √2; fold the usual 1/√2 rescale into W.
      fill_normal(w, rng, 0.0, std::sqrt(2.0) / std::sqrt(double(out)) / std::sqrt(2.0));
      // Only the raw xyz part of the re-injected encoding starts active.
      w.bottomRows(enc - 3).setZero();
    } else {
      fill_normal(w, rng, 0.0, std::sqrt(2.0) / std::sqrt(double(out)));
      if (l == 0) w.bottomRows(enc - 3).setZero();
    }
  }
  refit_sphere(rng, bias);
}

// With narrow layers the random first-layer directions make the initial
// surface visibly lumpy. Refit the ρ column of the output layer by ridge
// least squares so ρ ≈ ‖x‖ − bias over the ball of radius 1.5.
template <typename T>
void SdfField<T>::refit_sphere(std::mt19937_64& rng, double bias) {
  constexpr int kPoints = 4096;
  constexpr double kRadius = 1.5;
  const MlpSpec& spec = net_.spec();
  const int last = spec.depth - 1;
  const int hidden = spec.layer_in_dim(last) - (spec.is_skip(last) ? spec.encoded_dim() : 0);

  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  ad::Matrix<T> x(kPoints, 3);
  Eigen::VectorXd target(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    Eigen::Vector3d d(normal(rng), normal(rng), normal(rng));
    const double r = kRadius * std::cbrt(uniform(rng));
    d = r * d.normalized();
    for (int c = 0; c < 3; ++c) x(i, c) = static_cast<T>(d[c]);
    target[i] = r - bias;
  }
  ad::GradModeGuard no_tape(false);
  const ad::Matrix<T> features = net_.last_layer_input(ad::constant<T>(x)).value();
  Eigen::MatrixXd a(kPoints, hidden + 1);
  a.leftCols(hidden) = features.leftCols(hidden).template cast<double>();
  a.col(hidden).setOnes();
  Eigen::MatrixXd normal_eq = a.transpose() * a;
  normal_eq.diagonal().array() += 1e-6 * normal_eq.trace() / (hidden + 1);
  const Eigen::VectorXd coef = normal_eq.ldlt().solve(a.transpose() * target);
  if (!coef.allFinite()) return;  // keep the analytic initialization

  auto& w = net_.weight(last).mutable_value();
  auto& b = net_.bias(last).mutable_value();
  for (int k = 0; k < hidden; ++k) w(k, 0) = static_cast<T>(coef[k]);
  b(0, 0) = static_cast<T>(coef[hidden]);
}

template <typename T>
ad::Var<T> SdfField<T>::forward(const ad::Var<T>& x) const {
  return net_.forward(x);
}

template <typename T>
ad::Var<T> SdfField<T>::gradient(const ad::Var<T>& x, bool create_graph) const {
  ad::Var<T> input = x.requires_grad() ? x : ad::detach(x, /*requires_grad=*/true);
  ad::GradModeGuard record(true);
  ad::Var<T> rho = sdf(input);
  return ad::grad<T>(rho, {input}, create_graph)[0];
}

// ---- Radiance ---------------------------------------------------------------

template <typename T>
RadianceField<T>::RadianceField(const NetShape& shape, int dir_freqs, int features)
    : pos_freqs_(shape.freqs), dir_freqs_(dir_freqs) {
  const int in = 3 * (1 + 2 * shape.freqs) + 3 * (1 + 2 * dir_freqs) + 3 + features;
  net_ = Mlp<T>(make_spec(shape, in, 3, Activation::kRelu, Activation::kSigmoid, 0));
}

template <typename T>
ad::Var<T> RadianceField<T>::forward(const ad::Var<T>& x, const ad::Var<T>& view,
                                     const ad::Var<T>& normal, const ad::Var<T>& feature) const {
  ad::Var<T> in = ad::concat_cols<T>({ad::positional_encode(x, pos_freqs_),
                                      ad::positional_encode(view, dir_freqs_), normal, feature});
  return net_.forward_encoded(in);
}

// ---- Scene ------------------------------------------------------------------

template <typename T>
SceneFields<T>::SceneFields(const FieldsConfig& config)
    : deformation(config.deformation),
      sdf(config.sdf, config.features(), config.softplus_beta),
      radiance(config.radiance, config.radiance_dir_freqs, config.features()),
      config_(config) {
  config_.validate();
  ad::Matrix<T> theta(1, 1);
  theta(0, 0) = static_cast<T>(std::log(config.init_deviation));
  log_deviation = ad::parameter<T>(std::move(theta));
}

template <typename T>
void SceneFields<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  deformation.init(rng);
  sdf.init_sphere(rng, config_.sdf_init_bias);
  radiance.init(rng);
  log_deviation.mutable_value()(0, 0) = static_cast<T>(std::log(config_.init_deviation));
}

template <typename T>
std::vector<ad::Var<T>> SceneFields<T>::parameters() const {
  std::vector<ad::Var<T>> out;
  for (const auto* net : {&deformation.net(), &sdf.net(), &radiance.net()}) {
    for (const auto& p : net->parameters()) out.push_back(p);
  }
  out.push_back(log_deviation);
  return out;
}

template <typename T>
std::vector<std::string> SceneFields<T>::parameter_names() const {
  std::vector<std::string> out;
  const std::pair<const char*, const Mlp<T>*> nets[] = {
      {"deformation", &deformation.net()}, {"sdf", &sdf.net()}, {"radiance", &radiance.net()}};
  for (const auto& [name, net] : nets) {
    for (int l = 0; l < net->spec().depth; ++l) {
      out.push_back(std::string(name) + ".w" + std::to_string(l));
      out.push_back(std::string(name) + ".b" + std::to_string(l));
    }
  }
  out.push_back("deviation.log_s");
  return out;
}

template <typename T>
SceneFields<T> SceneFields<T>::clone() const {
  Checkpoint ck;
  save_to(ck);
  return load_from(ck);
}

template <typename T>
void SceneFields<T>::save_to(Checkpoint& ck) const {
  ck.meta["fields"] = config_;
  const auto params = parameters();
  const auto names = parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) ck.put<T>("param/" + names[i], params[i].value());
}

template <typename T>
SceneFields<T> SceneFields<T>::load_from(const Checkpoint& ck) {
  SceneFields<T> f(ck.meta.at("fields").get<FieldsConfig>());
  auto params = f.parameters();
  const auto names = f.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Matrix<T> m = ck.get<T>("param/" + names[i]);
    if (m.rows() != params[i].rows() || m.cols() != params[i].cols()) {
      throw DataError("checkpoint: shape mismatch for " + names[i]);
    }
    params[i].mutable_value() = std::move(m);
  }
  return f;
}

// ---- Single-point operations ------------------------------------------------

namespace {

template <typename T>
ad::Var<T> row3(const Eigen::Vector3d& v, bool requires_grad = false) {
  ad::Matrix<T> m(1, 3);
  m << static_cast<T>(v.x()), static_cast<T>(v.y()), static_cast<T>(v.z());
  return requires_grad ? ad::parameter<T>(std::move(m)) : ad::constant<T>(std::move(m));
}

template <typename T>
ad::Var<T> scalar_row(double t) {
  return ad::scalar<T>(static_cast<T>(t));
}

template <typename T>
Eigen::Vector3d to_vec3(const ad::Var<T>& v) {
  return Eigen::Vector3d(v.value()(0, 0), v.value()(0, 1), v.value()(0, 2));
}

}  // namespace

template <typename T>
Eigen::Vector3d deform(const DeformationField<T>& f, const Eigen::Vector3d& x, double t) {
  ad::NoGradGuard no_grad;
  return to_vec3(f.warp(row3<T>(x), scalar_row<T>(t)));
}

template <typename T>
Eigen::Matrix3d deform_jacobian(const DeformationField<T>& f, const Eigen::Vector3d& x, double t) {
  ad::NoGradGuard no_grad;
  Eigen::Matrix3d j;
  for (int c = 0; c < 3; ++c) {
    auto [_, jv] = f.warp_with_jvp(row3<T>(x), scalar_row<T>(t), row3<T>(Eigen::Vector3d::Unit(c)));
    j.col(c) = to_vec3(jv);
  }
  return j;
}

template <typename T>
Eigen::Vector3d canonical_view_dir(const DeformationField<T>& f, const Eigen::Vector3d& x,
                                   double t, const Eigen::Vector3d& v) {
  ad::NoGradGuard no_grad;
  auto [_, jv] = f.warp_with_jvp(row3<T>(x), scalar_row<T>(t), row3<T>(v));
  const Eigen::Vector3d w = v + to_vec3(jv);
  if (w.norm() < 1e-8) {
    throw DegenerateInput("canonical view direction vanishes: (I + J) v ≈ 0");
  }
  return w.normalized();
}

template <typename T>
std::pair<double, Eigen::VectorXd> sdf(const SdfField<T>& f, const Eigen::Vector3d& x) {
  ad::NoGradGuard no_grad;
  ad::Var<T> out = f.forward(row3<T>(x));
  Eigen::VectorXd feat(out.cols() - 1);
  for (Eigen::Index i = 1; i < out.cols(); ++i) feat(i - 1) = out.value()(0, i);
  return {static_cast<double>(out.value()(0, 0)), feat};
}

template <typename T>
Eigen::Vector3d sdf_normal(const SdfField<T>& f, const Eigen::Vector3d& x) {
  return to_vec3(f.gradient(row3<T>(x, true), false));
}

template <typename T>
Eigen::Vector3d observed_normal(const SceneFields<T>& f, const Eigen::Vector3d& x, double t) {
  ad::Var<T> xo = row3<T>(x, true);
  ad::GradModeGuard record(true);
  ad::Var<T> rho = f.sdf.sdf(f.deformation.warp(xo, scalar_row<T>(t)));
  return to_vec3(ad::grad<T>(rho, {xo})[0]);
}

template <typename T>
Eigen::Vector3d radiance(const RadianceField<T>& f, const Eigen::Vector3d& x,
                         const Eigen::Vector3d& view, const Eigen::Vector3d& normal,
                         const Eigen::VectorXd& feature) {
  ad::NoGradGuard no_grad;
  ad::Matrix<T> fm(1, feature.size());
  for (Eigen::Index i = 0; i < feature.size(); ++i) fm(0, i) = static_cast<T>(feature(i));
  return to_vec3(f.forward(row3<T>(x), row3<T>(view), row3<T>(normal), ad::constant<T>(fm)));
}

#define DSURF_FIELDS_INSTANTIATE(T)                                                            \
  template class DeformationField<T>;                                                          \
  template class SdfField<T>;                                                                  \
  template class RadianceField<T>;                                                             \
  template class SceneFields<T>;                                                               \
  template Eigen::Vector3d deform<T>(const DeformationField<T>&, const Eigen::Vector3d&, double); \
  template Eigen::Matrix3d deform_jacobian<T>(const DeformationField<T>&, const Eigen::Vector3d&, \
                                              double);                                         \
  template Eigen::Vector3d canonical_view_dir<T>(const DeformationField<T>&,                   \
                                                 const Eigen::Vector3d&, double,               \
                                                 const Eigen::Vector3d&);                      \
  template std::pair<double, Eigen::VectorXd> sdf<T>(const SdfField<T>&, const Eigen::Vector3d&); \
  template Eigen::Vector3d sdf_normal<T>(const SdfField<T>&, const Eigen::Vector3d&);          \
  template Eigen::Vector3d observed_normal<T>(const SceneFields<T>&, const Eigen::Vector3d&,   \
                                              double);                                         \
  template Eigen::Vector3d radiance<T>(const RadianceField<T>&, const Eigen::Vector3d&,        \
                                       const Eigen::Vector3d&, const Eigen::Vector3d&,         \
                                       const Eigen::VectorXd&);

DSURF_FIELDS_INSTANTIATE(float)
DSURF_FIELDS_INSTANTIATE(double)

}  // namespace dsurf
