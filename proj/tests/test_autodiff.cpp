#include "ctrlns/autodiff.hpp"
#include "ctrlns/jet.hpp"
#include "ctrlns/nn.hpp"
#include "ctrlns/rng.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

using namespace ctrlns;
using ad::Matrix;
using ad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Checks d/dx sum(W .* f(x)) against central differences for one input.
void check_unary(const std::function<Var(const Var&)>& f, Matrix x0, Rng& rng, double tol = 1e-6) {
  Var x = Var::parameter(x0);
  Var y = f(x);
  const Matrix wy = random_matrix(y.rows(), y.cols(), rng);
  ad::backward(ad::sum(ad::hadamard(y, Var::constant(wy))));
  const Matrix g = x.grad();
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Matrix xp = x0, xm = x0;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fp = f(Var::constant(xp)).value().cwiseProduct(wy).sum();
    const double fm = f(Var::constant(xm)).value().cwiseProduct(wy).sum();
    EXPECT_NEAR(g.data()[i], (fp - fm) / (2 * h), tol * std::max(1.0, std::abs(g.data()[i]))) << "entry " << i;
  }
}

}  // namespace

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  Rng rng(1);
  check_unary([](const Var& a) { return ad::exp(a); }, random_matrix(3, 4, rng), rng);
  check_unary([](const Var& a) { return ad::tanh(a); }, random_matrix(3, 4, rng), rng);
  check_unary([](const Var& a) { return ad::square(a); }, random_matrix(3, 4, rng), rng);
  check_unary([](const Var& a) { return ad::leaky_relu(a, 0.2); }, random_matrix(3, 4, rng), rng);
  check_unary([](const Var& a) { return ad::log(ad::exp(a) + 1.0); }, random_matrix(2, 3, rng), rng);
  check_unary([](const Var& a) { return ad::log_abs_floor(a, 1e-3); }, random_matrix(2, 5, rng), rng, 1e-5);
  check_unary([](const Var& a) { return -a * 3.0 + 2.0; }, random_matrix(2, 2, rng), rng);
}

TEST(Autodiff, StructuralOpsMatchFiniteDifferences) {
  Rng rng(2);
  const Matrix w = random_matrix(5, 4, rng);
  const Matrix row = random_matrix(1, 4, rng);
  const Matrix col = random_matrix(3, 1, rng);
  const Matrix left = random_matrix(2, 4, rng);
  const Matrix wide = random_matrix(3, 2, rng);
  check_unary([&](const Var& a) { return ad::matmul(a, Var::constant(w)); }, random_matrix(3, 5, rng), rng);
  check_unary([&](const Var& a) { return ad::matmul_nt(a, Var::constant(w)); }, random_matrix(3, 4, rng), rng);
  check_unary([&](const Var& a) { return ad::matmul_nt(Var::constant(left), a); },
              random_matrix(5, 4, rng), rng);
  check_unary([&](const Var& a) { return ad::add_row(a, Var::constant(row)); }, random_matrix(3, 4, rng), rng);
  check_unary([&](const Var& b) { return ad::add_row(Var::constant(w), b); }, random_matrix(1, 4, rng), rng);
  check_unary([&](const Var& a) { return ad::mul_col(a, Var::constant(col)); }, random_matrix(3, 4, rng), rng);
  check_unary([&](const Var& s) { return ad::mul_col(Var::constant(wide), s); },
              random_matrix(3, 1, rng), rng);
  check_unary([](const Var& v) { return ad::repeat_rows(v, 4); }, random_matrix(1, 3, rng), rng);
  check_unary([](const Var& a) { return ad::col_as_row(a, 1); }, random_matrix(4, 3, rng), rng);
  check_unary([](const Var& a) { return ad::row_sum(a); }, random_matrix(4, 3, rng), rng);
  check_unary([](const Var& a) { return ad::mean(a); }, random_matrix(4, 3, rng), rng);
  check_unary([](const Var& a) { return ad::cols(a, 1, 2); }, random_matrix(4, 3, rng), rng);
  check_unary([](const Var& a) { return ad::rows(a, 2, 2); }, random_matrix(4, 3, rng), rng);
  check_unary([](const Var& a) { return ad::hconcat({a, ad::square(a), ad::cols(a, 0, 1)}); },
              random_matrix(3, 2, rng), rng);
  check_unary([](const Var& a) { return ad::softmax_rows(a); }, random_matrix(3, 4, rng), rng);
}

TEST(Autodiff, SharedSubexpressionsAccumulate) {
  Var x = Var::parameter(Matrix::Constant(1, 1, 1.5));
  Var y = ad::hadamard(x, x) + x;
  ad::backward(ad::sum(y));
  EXPECT_NEAR(x.grad()(0, 0), 2 * 1.5 + 1, 1e-12);
}

TEST(Autodiff, StopGradientAndStraightThrough) {
  Var x = Var::parameter(Matrix::Constant(1, 2, 0.5));
  ad::backward(ad::sum(ad::square(ad::stop_gradient(x)) + x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 1.0);

  Var s = Var::parameter(Matrix::Constant(1, 3, 0.2));
  Matrix hard = Matrix::Zero(1, 3);
  hard(0, 1) = 1.0;
  Var st = ad::straight_through(hard, s);
  EXPECT_EQ(st.value(), hard);
  ad::backward(ad::sum(st * 2.0));
  EXPECT_DOUBLE_EQ(s.grad()(0, 2), 2.0);
}

TEST(Autodiff, BackwardRejectsNonScalarRoot) {
  Var x = Var::parameter(Matrix::Ones(2, 2));
  EXPECT_ANY_THROW(ad::backward(x));
}

TEST(Jet, DerivativesOfCompositeMatchClosedForm) {
  const double x0 = 0.3;
  const Jet x = Jet::variable(x0, 4);
  const Jet y = exp(x) * sin(x);
  // d^k/dx^k e^x sin x = 2^{k/2} e^x sin(x + k pi/4)
  for (int k = 0; k <= 4; ++k) {
    const double expect = std::pow(2.0, k / 2.0) * std::exp(x0) * std::sin(x0 + k * std::numbers::pi / 4);
    EXPECT_NEAR(y.derivative(static_cast<std::size_t>(k)), expect, 1e-10) << k;
  }
}

TEST(Jet, TanhLogAndQuotient) {
  const double x0 = 0.7;
  const Jet x = Jet::variable(x0, 3);
  const Jet t = tanh(x);
  const double s = 1.0 / std::cosh(x0);
  EXPECT_NEAR(t.derivative(1), s * s, 1e-12);
  EXPECT_NEAR(t.derivative(2), -2 * std::tanh(x0) * s * s, 1e-12);
  const Jet l = log(x);
  EXPECT_NEAR(l.derivative(3), 2.0 / (x0 * x0 * x0), 1e-10);
  const Jet q = Jet(1.0, 3) / x;
  EXPECT_NEAR(q.derivative(2), 2.0 / (x0 * x0 * x0), 1e-10);
}

TEST(Jet, PolynomialDerivativesVanishAboveDegree) {
  const Jet x = Jet::variable(1.3, 5);
  const Jet p = x * x * x * 2.0 + x;
  EXPECT_NEAR(p.derivative(3), 12.0, 1e-12);
  EXPECT_EQ(p.derivative(4), 0.0);
  EXPECT_EQ(p.derivative(5), 0.0);
}

TEST(Jet, ClampAndLeakyAreLocallyLinear) {
  const Jet inside = clamp(Jet::variable(0.2, 2), -1.0, 1.0);
  EXPECT_EQ(inside.derivative(1), 1.0);
  const Jet outside = clamp(Jet::variable(2.0, 2), -1.0, 1.0);
  EXPECT_EQ(outside.value(), 1.0);
  EXPECT_EQ(outside.derivative(1), 0.0);
  EXPECT_EQ(leaky_relu(Jet::variable(-1.0, 1), 0.2).derivative(1), 0.2);
}

TEST(Nn, MlpForwardMatchesTemplateEval) {
  Rng rng(3);
  nn::ParamStore store;
  nn::Mlp net(store, "net", 3, {5, 4}, 2, rng, 0.2);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix y = net.forward(Var::constant(x)).value();
  for (Eigen::Index r = 0; r < 4; ++r) {
    const std::vector<double> in{x(r, 0), x(r, 1), x(r, 2)};
    const auto out = net.eval<double>(std::span<const double>(in));
    EXPECT_NEAR(out[0], y(r, 0), 1e-12);
    EXPECT_NEAR(out[1], y(r, 1), 1e-12);
  }
}

TEST(Nn, TangentMatchesFiniteDifference) {
  Rng rng(4);
  nn::ParamStore store;
  nn::Mlp net(store, "net", 3, {6}, 1, rng, 0.2);
  const Matrix x = random_matrix(5, 3, rng);
  auto [y, dy] = net.forward_with_tangent(Var::constant(x), 1);
  const double h = 1e-6;
  Matrix xp = x, xm = x;
  xp.col(1).array() += h;
  xm.col(1).array() -= h;
  const Matrix fd = (net.forward(Var::constant(xp)).value() - net.forward(Var::constant(xm)).value()) / (2 * h);
  for (Eigen::Index r = 0; r < 5; ++r) EXPECT_NEAR(dy.value()(r, 0), fd(r, 0), 1e-6);
  (void)y;
}

TEST(Nn, ParamStoreFlattenAssignRoundTrip) {
  Rng rng(5);
  nn::ParamStore store;
  nn::Mlp net(store, "a", 2, {3}, 2, rng, 0.2);
  const Eigen::VectorXd flat = store.flatten();
  EXPECT_EQ(static_cast<std::size_t>(flat.size()), store.scalar_count());
  store.assign(flat * 2.0);
  EXPECT_TRUE(store.flatten().isApprox(flat * 2.0));
  EXPECT_ANY_THROW(store.add("a.l0.weight", Matrix::Zero(1, 1)));
}

TEST(Nn, AdamWMinimizesQuadratic) {
  nn::ParamStore store;
  Var p = store.add("p", Matrix::Constant(1, 3, 5.0));
  nn::AdamWConfig cfg;
  cfg.learning_rate = 0.05;
  nn::AdamW opt(store, cfg);
  for (int i = 0; i < 2000; ++i) {
    store.zero_grad();
    ad::backward(ad::sum(ad::square(p + -1.0)));
    opt.step();
  }
  EXPECT_NEAR(p.value()(0, 0), 1.0, 1e-3);
}
