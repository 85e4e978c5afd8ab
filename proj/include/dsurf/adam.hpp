#pragma once

#include <cstdint>
#include <vector>

#include "dsurf/autodiff.hpp"

namespace dsurf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter leaves.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<ad::Var<T>> params, AdamConfig config = {});

  /// One update. `grads[i]` must match the shape of parameter i.
  void step(const std::vector<ad::Matrix<T>>& grads, double lr);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::vector<ad::Matrix<T>>& first_moments() { return m_; }
  std::vector<ad::Matrix<T>>& second_moments() { return v_; }
  const std::vector<ad::Matrix<T>>& first_moments() const { return m_; }
  const std::vector<ad::Matrix<T>>& second_moments() const { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  std::vector<ad::Var<T>> params_;
  std::vector<ad::Matrix<T>> m_;
  std::vector<ad::Matrix<T>> v_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

}  // namespace dsurf
