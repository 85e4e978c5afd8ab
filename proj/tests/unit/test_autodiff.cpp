#include <gtest/gtest.h>

#include <random>

#include "dsurf/autodiff.hpp"
#include "dsurf/mlp.hpp"
#include "fd_oracle.hpp"

namespace dsurf {
namespace {

using ad::Var;
using testing::fd_gradient;
using testing::MatD;
using testing::rel_error;
using V = Var<double>;

MatD random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1,
                   double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Checks d/dinputs of sum(seed ⊙ op(inputs)) against finite differences.
void check_op(const std::function<V(const std::vector<V>&)>& op, std::vector<MatD> values,
              std::mt19937_64& rng, double tol = 1e-6) {
  std::vector<V> leaves;
  for (auto& v : values) leaves.push_back(ad::parameter<double>(v));
  V out = op(leaves);
  const MatD seed = random_matrix(rng, out.rows(), out.cols());
  V loss = ad::sum(ad::mul(out, ad::constant<double>(seed)));
  auto grads = ad::grad<double>(loss, leaves);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    MatD& m = leaves[i].mutable_value();
    auto f = [&] {
      ad::NoGradGuard ng;
      return op(leaves).value().cwiseProduct(seed).sum();
    };
    const MatD fd = fd_gradient(f, m);
    EXPECT_LT(rel_error(grads[i].value(), fd), tol) << "input " << i << " of " << out.op();
  }
}

TEST(Autodiff, ElementwiseAndBroadcastOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto r = [&](Eigen::Index a, Eigen::Index b) { return random_matrix(rng, a, b); };
  auto pos = [&](Eigen::Index a, Eigen::Index b) { return random_matrix(rng, a, b, 0.5, 2.0); };
  check_op([](auto& v) { return ad::matmul(v[0], v[1]); }, {r(4, 3), r(3, 5)}, rng);
  check_op([](auto& v) { return ad::matmul_nt(v[0], v[1]); }, {r(4, 3), r(5, 3)}, rng);
  check_op([](auto& v) { return ad::matmul_tn(v[0], v[1]); }, {r(4, 3), r(4, 5)}, rng);
  check_op([](auto& v) { return ad::linear(v[0], v[1], v[2]); }, {r(4, 3), r(3, 2), r(1, 2)}, rng);
  check_op([](auto& v) { return ad::add(v[0], v[1]); }, {r(3, 2), r(3, 2)}, rng);
  check_op([](auto& v) { return ad::sub(v[0], v[1]); }, {r(3, 2), r(3, 2)}, rng);
  check_op([](auto& v) { return ad::mul(v[0], v[1]); }, {r(3, 2), r(3, 2)}, rng);
  check_op([](auto& v) { return ad::div(v[0], v[1]); }, {r(3, 2), pos(3, 2)}, rng);
  check_op([](auto& v) { return ad::add_row(v[0], v[1]); }, {r(3, 2), r(1, 2)}, rng);
  check_op([](auto& v) { return ad::mul_col(v[0], v[1]); }, {r(3, 2), r(3, 1)}, rng);
  check_op([](auto& v) { return ad::mul_scalar(v[0], v[1]); }, {r(3, 2), r(1, 1)}, rng);
  check_op([](auto& v) { return ad::broadcast_rows(v[0], 4); }, {r(1, 3)}, rng);
  check_op([](auto& v) { return ad::broadcast_cols(v[0], 4); }, {r(3, 1)}, rng);
  check_op([](auto& v) { return ad::sum_rows(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::sum_cols(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::mean(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::softplus(v[0], 100.0); }, {r(3, 4)}, rng, 1e-5);
  check_op([](auto& v) { return ad::sigmoid(v[0], 2.0); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::exp(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::sin(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::cos(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::sqrt(v[0]); }, {pos(3, 4)}, rng);
  check_op([](auto& v) { return ad::square(v[0]); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::abs(v[0]); }, {pos(3, 4)}, rng);
  check_op([](auto& v) { return ad::relu(v[0]); }, {pos(3, 4)}, rng);
  check_op([](auto& v) { return ad::concat_cols<double>({v[0], v[1]}); }, {r(3, 2), r(3, 4)}, rng);
  check_op([](auto& v) { return ad::slice_cols(v[0], 1, 2); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::pad_cols(v[0], 1, 5); }, {r(3, 2)}, rng);
  check_op([](auto& v) { return ad::reshape(v[0], 2, 6); }, {r(3, 4)}, rng);
  check_op([](auto& v) { return ad::row_norm(v[0]); }, {r(3, 4)}, rng);
}

TEST(Autodiff, RenderingOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  // Monotone decreasing SDF rows keep every α strictly inside (0, 1).
  MatD rho(3, 6);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 6; ++c) rho(r, c) = 0.4 - 0.13 * c - 0.05 * r;
  }
  MatD inv_s(1, 1);
  inv_s << 3.3;
  check_op([](auto& v) { return ad::unbiased_alpha(v[0], v[1]); }, {rho, inv_s}, rng);
  MatD alpha = random_matrix(rng, 3, 6, 0.05, 0.9);
  check_op([](auto& v) { return ad::transmittance_weights(v[0]); }, {alpha}, rng);
  // Exact at α = 1 (no division by 1 − α in the backward rule).
  alpha(1, 2) = 1.0;
  check_op([](auto& v) { return ad::transmittance_weights(v[0]); }, {alpha}, rng);
}

TEST(Autodiff, QuadraticFormGradient) {
  std::mt19937_64 rng(3);
  const MatD w = random_matrix(rng, 3, 2);
  const MatD x = random_matrix(rng, 2, 1);
  V wv = ad::parameter<double>(w);
  V loss = ad::sum(ad::square(ad::matmul(wv, ad::constant<double>(x))));
  const MatD expected = 2.0 * (w * x) * x.transpose();
  EXPECT_LT(rel_error(ad::grad<double>(loss, {wv})[0].value(), expected), 1e-14);
}

TEST(Autodiff, IndependentParameterHasZeroGradient) {
  V a = ad::parameter<double>(MatD::Constant(2, 2, 1.5));
  V b = ad::parameter<double>(MatD::Constant(2, 2, 0.5));
  auto g = ad::grad<double>(ad::sum(ad::square(a)), {a, b});
  EXPECT_EQ(g[1].value(), MatD::Zero(2, 2));
}

TEST(Autodiff, InputGradientOfLinearAndRadialFields) {
  const MatD n = (MatD(1, 3) << 0.6, 0.0, 0.8).finished();
  V x = ad::parameter<double>((MatD(1, 3) << 0.3, -1.2, 4.0).finished());
  auto g = ad::grad<double>(ad::row_dot(x, ad::constant<double>(n)), {x});
  EXPECT_LT(rel_error(g[0].value(), n), 1e-15);

  V y = ad::parameter<double>((MatD(1, 3) << 0.0, 0.0, 2.0).finished());
  auto gr = ad::grad<double>(ad::row_norm(y), {y});
  EXPECT_LT(rel_error(gr[0].value(), (MatD(1, 3) << 0, 0, 1).finished()), 1e-15);
}

MlpSpec tiny_softplus_spec() {
  MlpSpec spec;
  spec.depth = 3;
  spec.width = 6;
  spec.skip_layers = {2};
  spec.in_dim = 3;
  spec.out_dim = 1;
  spec.hidden = Activation::kSoftplus;
  spec.softplus_beta = 5.0;
  spec.encoding_freqs = 1;
  return spec;
}

TEST(Autodiff, InputGradientOfRandomNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Mlp<double> net(tiny_softplus_spec());
  net.init_default(rng);
  MatD x = random_matrix(rng, 1, 3, -0.5, 0.5);
  V xv = ad::parameter<double>(x);
  const MatD g = ad::grad<double>(net.forward(xv), {xv})[0].value();
  auto f = [&] { return net(std::span<const double>(x.data(), 3))[0]; };
  EXPECT_LT(rel_error(g, fd_gradient(f, x)), 1e-6);
}

TEST(Autodiff, NestedEikonalParameterGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  MlpSpec spec = tiny_softplus_spec();
  spec.skip_layers.clear();
  spec.depth = 2;
  Mlp<double> net(spec);
  net.init_default(rng);
  const MatD pts = random_matrix(rng, 5, 3, -0.8, 0.8);

  auto eikonal = [&](bool create_graph) {
    V x = ad::parameter<double>(pts);
    ad::GradModeGuard rec(true);
    V grad_x = ad::grad<double>(net.forward(x), {x}, create_graph)[0];
    return ad::mean(ad::square(ad::add_scalar(ad::row_norm(grad_x), -1.0)));
  };
  V loss = eikonal(true);
  auto grads = ad::grad<double>(loss, net.parameters());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    MatD& m = net.parameters()[i].mutable_value();
    const MatD fd = fd_gradient([&] { return eikonal(false).item(); }, m);
    EXPECT_LT(rel_error(grads[i].value(), fd), 1e-4) << "parameter " << i;
  }
}

TEST(Autodiff, SecondOrderThroughFirstOrderOnlyOpThrows) {
  V rho = ad::parameter<double>((MatD(1, 3) << 0.2, 0.0, -0.2).finished());
  V a = ad::unbiased_alpha(rho, ad::scalar<double>(3.0));
  EXPECT_THROW(ad::grad<double>(ad::sum(a), {rho}, /*create_graph=*/true), ConfigError);
}

TEST(Autodiff, NoGradModeRecordsNothing) {
  V a = ad::parameter<double>(MatD::Ones(2, 2));
  ad::NoGradGuard ng;
  EXPECT_FALSE(ad::square(a).requires_grad());
}

TEST(Autodiff, ShapeMismatchIsConfigError) {
  V a = ad::constant<double>(MatD::Ones(2, 3));
  V b = ad::constant<double>(MatD::Ones(3, 2));
  EXPECT_THROW(ad::add(a, b), ConfigError);
  EXPECT_THROW(ad::matmul(a, a), ConfigError);
}

}  // namespace
}  // namespace dsurf
