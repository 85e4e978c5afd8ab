#include "dsurf/adam.hpp"

#include <cmath>

namespace dsurf {

template <typename T>
Adam<T>::Adam(std::vector<ad::Var<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(ad::Matrix<T>::Zero(p.rows(), p.cols()));
    v_.push_back(ad::Matrix<T>::Zero(p.rows(), p.cols()));
  }
}

template <typename T>
void Adam<T>::step(const std::vector<ad::Matrix<T>>& grads, double lr) {
  if (grads.size() != params_.size()) throw ConfigError("adam: gradient count mismatch");
  ++step_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(config_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = grads[i];
    if (g.rows() != m_[i].rows() || g.cols() != m_[i].cols()) {
      throw ConfigError("adam: gradient shape mismatch for parameter " + std::to_string(i));
    }
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseAbs2();
    if (lr == 0.0) continue;
    auto& p = params_[i].mutable_value();
    p.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_c2 + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dsurf
