#include "dsurf/losses.hpp"

#include <cmath>
#include <sstream>

#include "dsurf/error.hpp"
#include "dsurf/random.hpp"

namespace dsurf {

void LossWeights::validate() const {
  const auto v = values();
  for (int k = 0; k < kLossTermCount; ++k) {
    if (!(v[k] >= 0.0) || !std::isfinite(v[k])) {
      throw ConfigError(std::string("loss weight '") + kLossNames[k] + "' must be finite and >= 0");
    }
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"color", w.color},     {"depth", w.depth},     {"eikonal", w.eikonal},
       {"sdf", w.sdf},         {"visible", w.visible}, {"smooth", w.smooth}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.color = j.value("color", w.color);
  w.depth = j.value("depth", w.depth);
  w.eikonal = j.value("eikonal", w.eikonal);
  w.sdf = j.value("sdf", w.sdf);
  w.visible = j.value("visible", w.visible);
  w.smooth = j.value("smooth", w.smooth);
}

namespace {

void require_finite(double value, int term) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite loss component '" << kLossNames[term] << "' (" << value << ")";
    throw TrainingFault(msg.str());
  }
}

template <typename T>
ad::Var<T> const_matrix(const Eigen::MatrixXd& m) {
  return ad::constant<T>(m.cast<T>());
}

template <typename T>
ad::Var<T> masked_l1(const ad::Var<T>& pred, const Eigen::MatrixXd& gt, const Eigen::VectorXd& keep,
                     const char* what) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || keep.size() != gt.rows()) {
    throw ConfigError(std::string(what) + " loss: shape mismatch");
  }
  const double active = keep.sum();
  if (active <= 0.0) throw DegenerateInput(std::string(what) + " loss: no active rays in batch");
  const ad::Var<T> l1 = ad::sum_cols(ad::abs(ad::sub(pred, const_matrix<T>(gt))));
  return ad::scale(ad::sum(ad::mul(l1, const_matrix<T>(keep))), static_cast<T>(1.0 / active));
}

}  // namespace

LossReport weighted_total(const std::array<double, kLossTermCount>& components,
                          const LossWeights& weights) {
  const auto w = weights.values();
  LossReport report;
  report.components = components;
  for (int k = 0; k < kLossTermCount; ++k) {
    require_finite(components[k], k);
    report.total += w[k] * components[k];
  }
  return report;
}

template <typename T>
ad::Var<T> color_loss(const ad::Var<T>& pred, const Eigen::MatrixXd& gt, const Eigen::VectorXd& mask) {
  return masked_l1(pred, gt, mask, "color");
}

template <typename T>
ad::Var<T> depth_loss(const ad::Var<T>& pred, const Eigen::VectorXd& gt, const Eigen::VectorXd& mask) {
  if (mask.size() != gt.size()) throw ConfigError("depth loss: shape mismatch");
  const Eigen::VectorXd keep = (mask.array() > 0.5 && gt.array() > 0.0).cast<double>();
  return masked_l1(pred, Eigen::MatrixXd(gt), keep, "depth");
}

template <typename T>
ad::Var<T> eikonal_loss(const ad::Var<T>& gradients) {
  return ad::mean(ad::square(ad::add_scalar(ad::row_norm(gradients), T(-1))));
}

template <typename T>
ad::Var<T> sdf_surface_loss(const ad::Var<T>& rho) {
  return ad::mean(ad::abs(rho));
}

template <typename T>
ad::Var<T> visibility_loss(const ad::Var<T>& normals, const ad::Var<T>& dirs) {
  return ad::mean(ad::relu(ad::row_dot(normals, dirs)));
}

template <typename T>
ad::Var<T> smoothness_loss(const ad::Var<T>& gradients, const ad::Var<T>& shifted_gradients) {
  return ad::mean(ad::sum_cols(ad::abs(ad::sub(gradients, shifted_gradients))));
}

GeometryDraws draw_geometry(std::mt19937_64& rng, std::size_t rays, std::size_t ball_points,
                            double radius) {
  GeometryDraws d;
  d.ball_points.resize(static_cast<Eigen::Index>(ball_points), 3);
  for (Eigen::Index i = 0; i < d.ball_points.rows(); ++i) {
    d.ball_points.row(i) = uniform_in_ball(rng, 1.0).transpose();
  }
  d.offsets.resize(static_cast<Eigen::Index>(rays), 3);
  for (Eigen::Index i = 0; i < d.offsets.rows(); ++i) {
    d.offsets.row(i) = uniform_in_ball(rng, radius).transpose();
  }
  return d;
}

template <typename T>
LossEvaluation<T> evaluate_losses(const SceneFields<T>& fields, const RayBatch& batch,
                                  const Eigen::MatrixXd& depths, const GeometryDraws& draws,
                                  const LossWeights& weights) {
  const Eigen::Index n_rays = static_cast<Eigen::Index>(batch.rays.size());
  if (batch.color.rows() != n_rays || batch.depth.size() != n_rays || batch.mask.size() != n_rays ||
      draws.offsets.rows() != n_rays) {
    throw ConfigError("evaluate_losses: batch arrays disagree with the ray count");
  }
  ad::GradModeGuard record(true);
  LossEvaluation<T> out;
  out.render = render_samples(fields, std::span<const Ray>(batch.rays), depths, /*differentiable=*/true);
  out.terms[kColor] = color_loss(out.render.color, batch.color, batch.mask);
  out.terms[kDepth] = depth_loss(out.render.depth, batch.depth, batch.mask);

  out.terms[kEikonal] = eikonal_loss(out.render.normals);
  if (draws.ball_points.rows() > 0) {
    const ad::Var<T> ball = fields.sdf.gradient(const_matrix<T>(draws.ball_points), /*create_graph=*/true);
    out.terms[kEikonal] = ad::scale(ad::add(out.terms[kEikonal], eikonal_loss(ball)), T(0.5));
  }

  // Surface points: GT depth along each active ray, warped to canonical space.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < n_rays; ++r) {
    if (batch.mask(r) > 0.5 && batch.depth(r) > 0.0) keep.push_back(r);
  }
  const Eigen::Index m = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd po(m, 3), vo(m, 3), eps(m, 3);
  Eigen::VectorXd t(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Ray& ray = batch.rays[keep[i]];
    po.row(i) = (ray.origin + batch.depth(keep[i]) * ray.dir).transpose();
    vo.row(i) = ray.dir.transpose();
    eps.row(i) = draws.offsets.row(keep[i]);
    t(i) = ray.time;
  }
  const ad::Var<T> vo_var = const_matrix<T>(vo);
  auto [pc, jv] = fields.deformation.warp_with_jvp(const_matrix<T>(po), const_matrix<T>(t), vo_var);
  if (!pc.requires_grad()) pc = ad::detach(pc, /*requires_grad=*/true);
  const ad::Var<T> rho = fields.sdf.sdf(pc);
  const ad::Var<T> normals = ad::grad<T>(rho, {pc}, /*create_graph=*/true)[0];
  const ad::Var<T> vc = ad::normalize_rows(ad::add(vo_var, jv));
  const ad::Var<T> shifted = fields.sdf.gradient(ad::add(pc, const_matrix<T>(eps)), /*create_graph=*/true);
  out.terms[kSdf] = sdf_surface_loss(rho);
  out.terms[kVisible] = visibility_loss(normals, vc);
  out.terms[kSmooth] = smoothness_loss(normals, shifted);

  std::array<double, kLossTermCount> values{};
  for (int k = 0; k < kLossTermCount; ++k) values[k] = static_cast<double>(out.terms[k].item());
  out.report = weighted_total(values, weights);
  const auto w = weights.values();
  out.total = ad::scale(out.terms[0], static_cast<T>(w[0]));
  for (int k = 1; k < kLossTermCount; ++k) {
    out.total = ad::add(out.total, ad::scale(out.terms[k], static_cast<T>(w[k])));
  }
  return out;
}

#define DSURF_INSTANTIATE(T)                                                                       \
  template ad::Var<T> color_loss(const ad::Var<T>&, const Eigen::MatrixXd&, const Eigen::VectorXd&); \
  template ad::Var<T> depth_loss(const ad::Var<T>&, const Eigen::VectorXd&, const Eigen::VectorXd&); \
  template ad::Var<T> eikonal_loss(const ad::Var<T>&);                                             \
  template ad::Var<T> sdf_surface_loss(const ad::Var<T>&);                                         \
  template ad::Var<T> visibility_loss(const ad::Var<T>&, const ad::Var<T>&);                       \
  template ad::Var<T> smoothness_loss(const ad::Var<T>&, const ad::Var<T>&);                       \
  template LossEvaluation<T> evaluate_losses(const SceneFields<T>&, const RayBatch&,               \
                                             const Eigen::MatrixXd&, const GeometryDraws&,         \
                                             const LossWeights&);
DSURF_INSTANTIATE(float)
DSURF_INSTANTIATE(double)
#undef DSURF_INSTANTIATE

}  // namespace dsurf
