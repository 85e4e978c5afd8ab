#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dsurf/error.hpp"

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix; batches are stored as rows, features as
// columns. Backward rules are themselves written in terms of recorded ops, so
// gradients computed with `create_graph = true` can be differentiated again
// (needed for losses that contain the input gradient of a network).

namespace dsurf::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Var;

template <typename T>
struct Node {
  using BackwardFn = std::function<std::vector<Var<T>>(
      const Var<T>& self, const Var<T>& grad, const std::vector<bool>& needed)>;

  Matrix<T> value;
  std::vector<Var<T>> inputs;
  BackwardFn backward;
  const char* op = "leaf";
  bool requires_grad = false;
  // False for fused ops whose backward is evaluated numerically; such nodes
  // cannot sit on a path that is differentiated twice.
  bool backward_differentiable = true;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  T item() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Global switch for graph recording (per thread). Off inside NoGradGuard.
bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

template <typename T>
Var<T> constant(Matrix<T> value);
template <typename T>
Var<T> parameter(Matrix<T> value);  // leaf with requires_grad
template <typename T>
Var<T> scalar(T value);
template <typename T>
Var<T> detach(const Var<T>& x, bool requires_grad = false);

/// Gradients of sum(seed ⊙ output) with respect to each entry of `wrt`.
/// An undefined seed means all-ones. Inputs unreachable from `output` get a
/// zero gradient of matching shape.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt,
                         bool create_graph = false, const Var<T>& seed = {});

// ---- Linear algebra -------------------------------------------------------
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);  // a·bᵀ
template <typename T> Var<T> matmul_tn(const Var<T>& a, const Var<T>& b);  // aᵀ·b
/// x·W + b with W of shape [in × out] and b of shape [1 × out].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// ---- Elementwise binary (equal shapes) ------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

// ---- Broadcasting ----------------------------------------------------------
template <typename T> Var<T> add_row(const Var<T>& x, const Var<T>& row);   // [N×M] + [1×M]
template <typename T> Var<T> mul_col(const Var<T>& x, const Var<T>& col);   // [N×M] ⊙ [N×1]
template <typename T> Var<T> mul_scalar(const Var<T>& x, const Var<T>& s);  // [N×M] · [1×1]
template <typename T> Var<T> broadcast_rows(const Var<T>& row, Eigen::Index n);
template <typename T> Var<T> broadcast_cols(const Var<T>& col, Eigen::Index m);

// ---- Scalar constants ------------------------------------------------------
template <typename T> Var<T> scale(const Var<T>& x, T c);
template <typename T> Var<T> add_scalar(const Var<T>& x, T c);
template <typename T> Var<T> neg(const Var<T>& x);

// ---- Reductions -----------------------------------------------------------
template <typename T> Var<T> sum(const Var<T>& x);       // [1×1]
template <typename T> Var<T> mean(const Var<T>& x);      // [1×1]
template <typename T> Var<T> sum_rows(const Var<T>& x);  // [1×M]
template <typename T> Var<T> sum_cols(const Var<T>& x);  // [N×1]

// ---- Unary ----------------------------------------------------------------
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x, T beta);
template <typename T> Var<T> sigmoid(const Var<T>& x, T beta = T(1));
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> sin(const Var<T>& x);
template <typename T> Var<T> cos(const Var<T>& x);
template <typename T> Var<T> sqrt(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);

// ---- Shape ----------------------------------------------------------------
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(const Var<T>& x, Eigen::Index start, Eigen::Index count);
template <typename T> Var<T> pad_cols(const Var<T>& x, Eigen::Index start, Eigen::Index total);
template <typename T> Var<T> reshape(const Var<T>& x, Eigen::Index rows, Eigen::Index cols);

// ---- Composites -----------------------------------------------------------
template <typename T> Var<T> row_norm(const Var<T>& x);            // [N×1] Euclidean norms
template <typename T> Var<T> row_dot(const Var<T>& a, const Var<T>& b);  // [N×1]

// ---- Volume rendering (first-order backward only) -------------------------
/// α_i = max(1 − φ(ρ_{i+1})/φ(ρ_i), 0) along each row, φ(ρ) = sigmoid(ρ·inv_s).
/// The last column has no successor and is 0. α_i = 0 where φ(ρ_i) < 1e-12.
template <typename T> Var<T> unbiased_alpha(const Var<T>& rho, const Var<T>& inv_s);
/// w_i = α_i · Π_{j<i}(1 − α_j) along each row.
template <typename T> Var<T> transmittance_weights(const Var<T>& alpha);

/// True when every entry of every matrix is finite.
/// Rows scaled to unit Euclidean norm.
template <typename T>
Var<T> normalize_rows(const Var<T>& x) {
  return div(x, broadcast_cols(row_norm(x), x.cols()));
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

}  // namespace dsurf::ad
