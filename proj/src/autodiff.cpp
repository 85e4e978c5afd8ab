#include "dsurf/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace dsurf::ad {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) {
  g_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

template <typename T>
T Var<T>::item() const {
  if (node_->value.size() != 1) {
    throw ConfigError("item() on a non-scalar value of shape " +
                      std::to_string(rows()) + "x" + std::to_string(cols()));
  }
  return node_->value(0, 0);
}

namespace {

template <typename T>
Var<T> record(const char* op, Matrix<T> value, std::vector<Var<T>> inputs,
              typename Node<T>::BackwardFn backward, bool differentiable = true) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool tracked = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        tracked = true;
        break;
      }
    }
  }
  if (tracked) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->requires_grad = true;
    node->backward_differentiable = differentiable;
  }
  return Var<T>(std::move(node));
}

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

template <typename T>
Var<T> recip_safe(const Var<T>& x);

template <typename T>
Matrix<T> recip_safe_value(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return v == T(0) ? T(0) : T(1) / v; });
}

template <typename T>
Var<T> recip_safe(const Var<T>& x) {
  return record<T>("recip_safe", recip_safe_value<T>(x.value()), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     // d(1/x) = -1/x² = -(1/x)²
                     return std::vector<Var<T>>{neg(mul(g, square(self)))};
                   });
}

}  // namespace

template <typename T>
Var<T> constant(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> parameter(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "parameter";
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> scalar(T value) {
  Matrix<T> m(1, 1);
  m(0, 0) = value;
  return constant<T>(std::move(m));
}

template <typename T>
Var<T> detach(const Var<T>& x, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = x.value();
  node->op = requires_grad ? "input" : "constant";
  node->requires_grad = requires_grad;
  return Var<T>(std::move(node));
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt,
                         bool create_graph, const Var<T>& seed) {
  std::vector<Var<T>> result(wrt.size());
  auto zeros_like = [](const Var<T>& v) {
    return constant<T>(Matrix<T>::Zero(v.rows(), v.cols()));
  };
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) result[i] = zeros_like(wrt[i]);
    return result;
  }

  std::unordered_set<const Node<T>*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  // Post-order DFS: every node appears after all of its recorded inputs.
  std::vector<Var<T>> order;
  std::unordered_map<const Node<T>*, bool> needed;
  std::unordered_set<const Node<T>*> visited;
  std::vector<std::pair<Var<T>, std::size_t>> stack;
  stack.emplace_back(output, 0);
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& top = stack.back();
    Node<T>* node = top.first.node();
    if (top.second < node->inputs.size()) {
      Var<T> child = node->inputs[top.second++];
      if (child.requires_grad() && visited.insert(child.node()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    bool is_needed = targets.count(node) > 0;
    for (const auto& in : node->inputs) {
      auto it = needed.find(in.node());
      if (it != needed.end() && it->second) {
        is_needed = true;
        break;
      }
    }
    needed[node] = is_needed;
    order.push_back(std::move(top.first));
    stack.pop_back();
  }

  GradModeGuard mode(create_graph);
  std::unordered_map<const Node<T>*, Var<T>> grads;
  if (seed.defined()) {
    check_same_shape("grad seed", seed, output);
    grads[output.node()] = seed;
  } else {
    grads[output.node()] = constant<T>(Matrix<T>::Ones(output.rows(), output.cols()));
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->node();
    if (!needed[node] || node->inputs.empty()) continue;
    auto git = grads.find(node);
    if (git == grads.end()) continue;
    std::vector<bool> need(node->inputs.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      need[i] = in.requires_grad() && needed[in.node()];
      any = any || need[i];
    }
    if (!any) continue;
    if (create_graph && !node->backward_differentiable) {
      throw ConfigError(std::string("op '") + node->op +
                        "' does not support higher-order differentiation");
    }
    Var<T> upstream = git->second;
    if (!targets.count(node)) grads.erase(git);
    std::vector<Var<T>> input_grads = node->backward(*it, upstream, need);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!need[i] || !input_grads[i].defined()) continue;
      const Node<T>* in = node->inputs[i].node();
      auto slot = grads.find(in);
      if (slot == grads.end()) {
        grads.emplace(in, std::move(input_grads[i]));
      } else {
        slot->second = add(slot->second, input_grads[i]);
      }
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto g = grads.find(wrt[i].node());
    result[i] = g == grads.end() ? zeros_like(wrt[i]) : g->second;
  }
  return result;
}

// ---- Linear algebra -------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions differ");
  Matrix<T> v = a.value() * b.value();
  return record<T>("matmul", std::move(v), {a, b},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = matmul_nt(g, in[1]);
                     if (need[1]) out[1] = matmul_tn(in[0], g);
                     return out;
                   });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) throw ConfigError("matmul_nt: inner dimensions differ");
  Matrix<T> v = a.value() * b.value().transpose();
  return record<T>("matmul_nt", std::move(v), {a, b},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = matmul(g, in[1]);
                     if (need[1]) out[1] = matmul_tn(g, in[0]);
                     return out;
                   });
}

template <typename T>
Var<T> matmul_tn(const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows()) throw ConfigError("matmul_tn: inner dimensions differ");
  Matrix<T> v = a.value().transpose() * b.value();
  return record<T>("matmul_tn", std::move(v), {a, b},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = matmul_nt(in[1], g);
                     if (need[1]) out[1] = matmul(in[0], g);
                     return out;
                   });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ConfigError("linear: expected x[N×" + std::to_string(w.rows()) + "], got x[N×" +
                      std::to_string(x.cols()) + "]");
  }
  Matrix<T> v = x.value() * w.value();
  v.rowwise() += b.value().row(0);
  return record<T>("linear", std::move(v), {x, w, b},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(3);
                     if (need[0]) out[0] = matmul_nt(g, in[1]);
                     if (need[1]) out[1] = matmul_tn(in[0], g);
                     if (need[2]) out[2] = sum_rows(g);
                     return out;
                   });
}

// ---- Elementwise binary ---------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape("add", a, b);
  Matrix<T> v = a.value() + b.value();
  return record<T>("add", std::move(v), {a, b},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>& need) {
                     return std::vector<Var<T>>{need[0] ? g : Var<T>{}, need[1] ? g : Var<T>{}};
                   });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape("sub", a, b);
  Matrix<T> v = a.value() - b.value();
  return record<T>("sub", std::move(v), {a, b},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>& need) {
                     return std::vector<Var<T>>{need[0] ? g : Var<T>{},
                                                need[1] ? neg(g) : Var<T>{}};
                   });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape("mul", a, b);
  Matrix<T> v = a.value().cwiseProduct(b.value());
  return record<T>("mul", std::move(v), {a, b},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = mul(g, in[1]);
                     if (need[1]) out[1] = mul(g, in[0]);
                     return out;
                   });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape("div", a, b);
  Matrix<T> v = a.value().cwiseQuotient(b.value());
  return record<T>("div", std::move(v), {a, b},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = div(g, in[1]);
                     if (need[1]) out[1] = neg(div(mul(g, self), in[1]));
                     return out;
                   });
}

// ---- Broadcasting ---------------------------------------------------------

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw ConfigError("add_row: shape mismatch");
  Matrix<T> v = x.value();
  v.rowwise() += row.value().row(0);
  return record<T>("add_row", std::move(v), {x, row},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>& need) {
                     return std::vector<Var<T>>{need[0] ? g : Var<T>{},
                                                need[1] ? sum_rows(g) : Var<T>{}};
                   });
}

template <typename T>
Var<T> mul_col(const Var<T>& x, const Var<T>& col) {
  if (col.cols() != 1 || col.rows() != x.rows()) throw ConfigError("mul_col: shape mismatch");
  Matrix<T> v = x.value().array().colwise() * col.value().col(0).array();
  return record<T>("mul_col", std::move(v), {x, col},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = mul_col(g, in[1]);
                     if (need[1]) out[1] = sum_cols(mul(g, in[0]));
                     return out;
                   });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ConfigError("mul_scalar: expected a 1x1 factor");
  Matrix<T> v = x.value() * s.value()(0, 0);
  return record<T>("mul_scalar", std::move(v), {x, s},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(2);
                     if (need[0]) out[0] = mul_scalar(g, in[1]);
                     if (need[1]) out[1] = sum(mul(g, in[0]));
                     return out;
                   });
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& row, Eigen::Index n) {
  if (row.rows() != 1) throw ConfigError("broadcast_rows: expected a single row");
  Matrix<T> v = row.value().replicate(n, 1);
  return record<T>("broadcast_rows", std::move(v), {row},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{sum_rows(g)};
                   });
}

template <typename T>
Var<T> broadcast_cols(const Var<T>& col, Eigen::Index m) {
  if (col.cols() != 1) throw ConfigError("broadcast_cols: expected a single column");
  Matrix<T> v = col.value().replicate(1, m);
  return record<T>("broadcast_cols", std::move(v), {col},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{sum_cols(g)};
                   });
}

// ---- Scalar constants -----------------------------------------------------

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  Matrix<T> v = x.value() * c;
  return record<T>("scale", std::move(v), {x},
                   [c](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{scale(g, c)};
                   });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  Matrix<T> v = x.value().array() + c;
  return record<T>("add_scalar", std::move(v), {x},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{g};
                   });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  Matrix<T> v = -x.value();
  return record<T>("neg", std::move(v), {x},
                   [](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{neg(g)};
                   });
}

// ---- Reductions -----------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
  Matrix<T> v(1, 1);
  v(0, 0) = x.value().sum();
  const Eigen::Index n = x.rows(), m = x.cols();
  return record<T>("sum", std::move(v), {x},
                   [n, m](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{broadcast_rows(broadcast_cols(g, m), n)};
                   });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.value().size() == 0) throw DegenerateInput("mean of an empty matrix");
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> sum_rows(const Var<T>& x) {
  Matrix<T> v = x.value().colwise().sum();
  const Eigen::Index n = x.rows();
  return record<T>("sum_rows", std::move(v), {x},
                   [n](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{broadcast_rows(g, n)};
                   });
}

template <typename T>
Var<T> sum_cols(const Var<T>& x) {
  Matrix<T> v = x.value().rowwise().sum();
  const Eigen::Index m = x.cols();
  return record<T>("sum_cols", std::move(v), {x},
                   [m](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{broadcast_cols(g, m)};
                   });
}

// ---- Unary ----------------------------------------------------------------

template <typename T>
Var<T> relu(const Var<T>& x) {
  Matrix<T> v = x.value().cwiseMax(T(0));
  return record<T>("relu", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     // The step mask has zero derivative almost everywhere.
                     Matrix<T> mask = self.node()->inputs[0].value().unaryExpr(
                         [](T z) { return z > T(0) ? T(1) : T(0); });
                     return std::vector<Var<T>>{mul(g, constant<T>(std::move(mask)))};
                   });
}

template <typename T>
Var<T> softplus(const Var<T>& x, T beta) {
  // log(1 + e^{βz})/β = max(βz, 0)/β + log1p(e^{−|βz|})/β, stable for any z.
  const auto bz = x.value().array() * beta;
  Matrix<T> v = (bz.max(T(0)) + (-bz.abs()).exp().log1p()) / beta;
  return record<T>("softplus", std::move(v), {x},
                   [beta](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{mul(g, sigmoid(self.node()->inputs[0], beta))};
                   });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x, T beta) {
  // e^{−βz} may overflow to +inf, which still yields the correct limit 0.
  Matrix<T> v = ((x.value().array() * (-beta)).exp() + T(1)).inverse();
  return record<T>("sigmoid", std::move(v), {x},
                   [beta](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     Var<T> ds = scale(mul(self, add_scalar(neg(self), T(1))), beta);
                     return std::vector<Var<T>>{mul(g, ds)};
                   });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  Matrix<T> v = x.value().array().exp();
  return record<T>("exp", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{mul(g, self)};
                   });
}

template <typename T>
Var<T> sin(const Var<T>& x) {
  Matrix<T> v = x.value().array().sin();
  return record<T>("sin", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{mul(g, cos(self.node()->inputs[0]))};
                   });
}

template <typename T>
Var<T> cos(const Var<T>& x) {
  Matrix<T> v = x.value().array().cos();
  return record<T>("cos", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{neg(mul(g, sin(self.node()->inputs[0])))};
                   });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  Matrix<T> v = x.value().array().sqrt();
  return record<T>("sqrt", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     // Derivative taken as 0 where the root is 0.
                     return std::vector<Var<T>>{mul(g, scale(recip_safe(self), T(0.5)))};
                   });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  Matrix<T> v = x.value().cwiseAbs();
  return record<T>("abs", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     Matrix<T> sign = self.node()->inputs[0].value().unaryExpr(
                         [](T z) { return z > T(0) ? T(1) : (z < T(0) ? T(-1) : T(0)); });
                     return std::vector<Var<T>>{mul(g, constant<T>(std::move(sign)))};
                   });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  Matrix<T> v = x.value().array().square();
  return record<T>("square", std::move(v), {x},
                   [](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{mul(g, scale(self.node()->inputs[0], T(2)))};
                   });
}

// ---- Shape ----------------------------------------------------------------

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const Eigen::Index n = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ConfigError("concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix<T> v(n, total);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return record<T>("concat_cols", std::move(v), parts,
                   [offsets](const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
                     const auto& in = self.node()->inputs;
                     std::vector<Var<T>> out(in.size());
                     for (std::size_t i = 0; i < in.size(); ++i) {
                       if (need[i]) out[i] = slice_cols(g, offsets[i], in[i].cols());
                     }
                     return out;
                   });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ConfigError("slice_cols: range out of bounds");
  }
  Matrix<T> v = x.value().middleCols(start, count);
  const Eigen::Index total = x.cols();
  return record<T>("slice_cols", std::move(v), {x},
                   [start, total](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{pad_cols(g, start, total)};
                   });
}

template <typename T>
Var<T> pad_cols(const Var<T>& x, Eigen::Index start, Eigen::Index total) {
  if (start < 0 || start + x.cols() > total) throw ConfigError("pad_cols: range out of bounds");
  Matrix<T> v = Matrix<T>::Zero(x.rows(), total);
  v.middleCols(start, x.cols()) = x.value();
  const Eigen::Index count = x.cols();
  return record<T>("pad_cols", std::move(v), {x},
                   [start, count](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{slice_cols(g, start, count)};
                   });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw ConfigError("reshape: element count differs");
  Matrix<T> v = Eigen::Map<const Matrix<T>>(x.value().data(), rows, cols);
  const Eigen::Index r0 = x.rows(), c0 = x.cols();
  return record<T>("reshape", std::move(v), {x},
                   [r0, c0](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                     return std::vector<Var<T>>{reshape(g, r0, c0)};
                   });
}

// ---- Composites -----------------------------------------------------------

template <typename T>
Var<T> row_norm(const Var<T>& x) {
  return sqrt(sum_cols(square(x)));
}

template <typename T>
Var<T> row_dot(const Var<T>& a, const Var<T>& b) {
  return sum_cols(mul(a, b));
}

// ---- Volume rendering -----------------------------------------------------

namespace {

template <typename T>
T log_sigmoid(T x) {
  return x >= T(0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Var<T> unbiased_alpha(const Var<T>& rho, const Var<T>& inv_s) {
  if (inv_s.rows() != 1 || inv_s.cols() != 1) {
    throw ConfigError("unbiased_alpha: inverse deviation must be 1x1");
  }
  const T k = inv_s.value()(0, 0);
  const Eigen::Index n = rho.rows(), m = rho.cols();
  Matrix<T> alpha = Matrix<T>::Zero(n, m);
  // Local derivatives dα_i/dx_i and dα_i/dx_{i+1}, x = ρ·inv_s. Zero when clamped.
  Matrix<T> d_cur = Matrix<T>::Zero(n, m);
  Matrix<T> d_next = Matrix<T>::Zero(n, m);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index i = 0; i + 1 < m; ++i) {
      const T x0 = rho.value()(r, i) * k;
      const T x1 = rho.value()(r, i + 1) * k;
      const T phi0 = sigmoid_value(x0);
      if (phi0 < T(1e-12)) continue;
      const T ratio = std::exp(log_sigmoid(x1) - log_sigmoid(x0));
      const T a = T(1) - ratio;
      if (a > T(0)) {
        alpha(r, i) = a;
        d_cur(r, i) = ratio * (T(1) - phi0);
        d_next(r, i) = -ratio * (T(1) - sigmoid_value(x1));
      }
    }
  }
  return record<T>(
      "unbiased_alpha", std::move(alpha), {rho, inv_s},
      [d_cur = std::move(d_cur), d_next = std::move(d_next), k](
          const Var<T>& self, const Var<T>& g, const std::vector<bool>& need) {
        const Matrix<T>& gv = g.value();
        const Matrix<T>& rv = self.node()->inputs[0].value();
        Matrix<T> gx = gv.cwiseProduct(d_cur);
        gx.rightCols(gx.cols() - 1) +=
            gv.leftCols(gv.cols() - 1).cwiseProduct(d_next.leftCols(d_next.cols() - 1));
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = constant<T>(gx * k);
        if (need[1]) {
          Matrix<T> s(1, 1);
          s(0, 0) = gx.cwiseProduct(rv).sum();
          out[1] = constant<T>(std::move(s));
        }
        return out;
      },
      /*differentiable=*/false);
}

template <typename T>
Var<T> transmittance_weights(const Var<T>& alpha) {
  const Eigen::Index n = alpha.rows(), m = alpha.cols();
  const Matrix<T>& a = alpha.value();
  Matrix<T> trans(n, m);
  Matrix<T> w(n, m);
  for (Eigen::Index r = 0; r < n; ++r) {
    T t = T(1);
    for (Eigen::Index i = 0; i < m; ++i) {
      trans(r, i) = t;
      w(r, i) = a(r, i) * t;
      t *= T(1) - a(r, i);
    }
  }
  return record<T>(
      "transmittance_weights", std::move(w), {alpha},
      [trans = std::move(trans)](const Var<T>& self, const Var<T>& g, const std::vector<bool>&) {
        const Matrix<T>& a = self.node()->inputs[0].value();
        const Matrix<T>& gv = g.value();
        const Eigen::Index n = a.rows(), m = a.cols();
        Matrix<T> ga(n, m);
        for (Eigen::Index r = 0; r < n; ++r) {
          // q = Σ_{i>k} g_i α_i Π_{k<j<i}(1 − α_j), accumulated from the back.
          T q = T(0);
          for (Eigen::Index k = m - 1; k >= 0; --k) {
            ga(r, k) = trans(r, k) * (gv(r, k) - q);
            q = gv(r, k) * a(r, k) + (T(1) - a(r, k)) * q;
          }
        }
        return std::vector<Var<T>>{constant<T>(std::move(ga))};
      },
      /*differentiable=*/false);
}

// ---- Instantiation --------------------------------------------------------

#define DSURF_AD_INSTANTIATE(T)                                                            \
  template class Var<T>;                                                                   \
  template Var<T> constant<T>(Matrix<T>);                                                  \
  template Var<T> parameter<T>(Matrix<T>);                                                 \
  template Var<T> scalar<T>(T);                                                            \
  template Var<T> detach<T>(const Var<T>&, bool);                                          \
  template std::vector<Var<T>> grad<T>(const Var<T>&, const std::vector<Var<T>>&, bool,    \
                                       const Var<T>&);                                     \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> matmul_tn<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> mul_col<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> mul_scalar<T>(const Var<T>&, const Var<T>&);                             \
  template Var<T> broadcast_rows<T>(const Var<T>&, Eigen::Index);                          \
  template Var<T> broadcast_cols<T>(const Var<T>&, Eigen::Index);                          \
  template Var<T> scale<T>(const Var<T>&, T);                                              \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                         \
  template Var<T> neg<T>(const Var<T>&);                                                   \
  template Var<T> sum<T>(const Var<T>&);                                                   \
  template Var<T> mean<T>(const Var<T>&);                                                  \
  template Var<T> sum_rows<T>(const Var<T>&);                                              \
  template Var<T> sum_cols<T>(const Var<T>&);                                              \
  template Var<T> relu<T>(const Var<T>&);                                                  \
  template Var<T> softplus<T>(const Var<T>&, T);                                           \
  template Var<T> sigmoid<T>(const Var<T>&, T);                                            \
  template Var<T> exp<T>(const Var<T>&);                                                   \
  template Var<T> sin<T>(const Var<T>&);                                                   \
  template Var<T> cos<T>(const Var<T>&);                                                   \
  template Var<T> sqrt<T>(const Var<T>&);                                                  \
  template Var<T> abs<T>(const Var<T>&);                                                   \
  template Var<T> square<T>(const Var<T>&);                                                \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                              \
  template Var<T> slice_cols<T>(const Var<T>&, Eigen::Index, Eigen::Index);                \
  template Var<T> pad_cols<T>(const Var<T>&, Eigen::Index, Eigen::Index);                  \
  template Var<T> reshape<T>(const Var<T>&, Eigen::Index, Eigen::Index);                   \
  template Var<T> row_norm<T>(const Var<T>&);                                              \
  template Var<T> row_dot<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> unbiased_alpha<T>(const Var<T>&, const Var<T>&);                         \
  template Var<T> transmittance_weights<T>(const Var<T>&);

DSURF_AD_INSTANTIATE(float)
DSURF_AD_INSTANTIATE(double)

}  // namespace dsurf::ad
