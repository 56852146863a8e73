#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "diano/fdm.hpp"
#include "diano/grad_check.hpp"

using namespace diano;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD(std::move(shape), std::move(v));
}

/// Dense Gaussian elimination with partial pivoting.
std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * x[j];
    x[i] = s / a[i * n + i];
  }
  return x;
}

struct Sampled {
  TD f;
  std::vector<double> df, d2f;
  double h;
};

/// f(x) = sin(2 pi x) + 0.5 cos(3 pi x) on [0, 1] with n points.
Sampled sample(std::size_t n) {
  Sampled s;
  s.h = 1.0 / double(n - 1);
  std::vector<double> f(n);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s.h * double(i);
    f[i] = std::sin(2 * pi * x) + 0.5 * std::cos(3 * pi * x);
    s.df.push_back(2 * pi * std::cos(2 * pi * x) - 1.5 * pi * std::sin(3 * pi * x));
    s.d2f.push_back(-4 * pi * pi * std::sin(2 * pi * x) - 4.5 * pi * pi * std::cos(3 * pi * x));
  }
  s.f = TD(Shape{n}, f);
  return s;
}

/// Max error over the interior region where the nominal stencil applies;
/// for the compact scheme, over the central half.
double interior_error(const TD& got, const std::vector<double>& want, Scheme s) {
  const std::size_t n = want.size();
  const std::size_t lo = s == Scheme::compact ? n / 4 : 3;
  const std::size_t hi = s == Scheme::compact ? n - n / 4 : n - 3;
  double e = 0;
  for (std::size_t i = lo; i < hi; ++i) e = std::max(e, std::abs(got[i] - want[i]));
  return e;
}

void expect_grad_ok(const GradCheckReport& r) {
  EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_error;
}

}  // namespace

TEST(Thomas, MatchesDenseSolve) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t n = 8;
  std::vector<double> a(n), b(n), c(n), r(n), dense(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = i ? u(rng) : 0.0;
    c[i] = i + 1 < n ? u(rng) : 0.0;
    b[i] = 4.0 + u(rng);
    r[i] = u(rng);
    dense[i * n + i] = b[i];
    if (i) dense[i * n + i - 1] = a[i];
    if (i + 1 < n) dense[i * n + i + 1] = c[i];
  }
  auto x = thomas_solve<double>(a, b, c, r);
  auto want = dense_solve(dense, r);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(x[i], want[i], 1e-12);
}

class SchemeOrder : public ::testing::TestWithParam<std::pair<Scheme, int>> {};

TEST_P(SchemeOrder, EmpiricalOrderNearNominal) {
  const auto [scheme, bias] = GetParam();
  std::vector<double> err;
  for (std::size_t n : {33, 65, 129, 257}) {
    auto s = sample(n);
    err.push_back(interior_error(ddx(s.f, 0, s.h, scheme, bias), s.df, scheme));
  }
  for (std::size_t k = 0; k + 1 < err.size(); ++k) {
    // Spacing halves exactly between (n-1) = 32, 64, 128, 256.
    const double order = std::log2(err[k] / err[k + 1]);
    EXPECT_NEAR(order, scheme_order(scheme), 0.4) << scheme_name(scheme) << " refinement " << k;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Schemes, SchemeOrder,
    ::testing::Values(std::pair{Scheme::upwind3, 1}, std::pair{Scheme::upwind3, -1},
                      std::pair{Scheme::central2, 1}, std::pair{Scheme::central4, 1},
                      std::pair{Scheme::compact, 1}));

TEST(Fdm, SecondDerivativeOrder) {
  std::vector<double> err;
  for (std::size_t n : {33, 65, 129, 257}) {
    auto s = sample(n);
    auto d = d2dx(s.f, 0, s.h);
    double e = 0;
    for (std::size_t i = 0; i < n; ++i) e = std::max(e, std::abs(d[i] - s.d2f[i]));
    err.push_back(e);
  }
  for (std::size_t k = 0; k + 1 < err.size(); ++k) EXPECT_NEAR(std::log2(err[k] / err[k + 1]), 2.0, 0.4);
}

TEST(Fdm, BoundaryRowsAreSecondOrderGlobally) {
  std::vector<double> err;
  for (std::size_t n : {65, 129, 257}) {
    auto s = sample(n);
    auto d = ddx(s.f, 0, s.h, Scheme::upwind3);
    double e = 0;
    for (std::size_t i = 0; i < n; ++i) e = std::max(e, std::abs(d[i] - s.df[i]));
    err.push_back(e);
  }
  EXPECT_GT(std::log2(err[1] / err[2]), 1.6);
}

TEST(Fdm, LinearFunctionDifferentiatedExactly) {
  std::vector<double> v(10);
  for (std::size_t i = 0; i < 10; ++i) v[i] = 3.0 * 0.1 * double(i) - 1.0;
  TD f(Shape{10}, v);
  for (auto s : {Scheme::upwind3, Scheme::central2, Scheme::central4, Scheme::compact}) {
    for (int bias : {1, -1}) {
      auto d = ddx(f, 0, 0.1, s, bias);
      for (double x : d.values()) EXPECT_NEAR(x, 3.0, 1e-12) << scheme_name(s);
    }
  }
  const auto d2 = d2dx(f, 0, 0.1);
  for (double x : d2.values()) EXPECT_NEAR(x, 0.0, 1e-10);
}

TEST(Fdm, AxisSelectionOnTwoDimensionalField) {
  // f(x, y) = x^2 + 2 y: derivative along axis 1 (y) is 2 everywhere.
  const std::size_t n0 = 5, n1 = 7;
  std::vector<double> v(n0 * n1);
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t j = 0; j < n1; ++j) v[i * n1 + j] = double(i * i) * 0.01 + 2.0 * 0.1 * double(j);
  TD f(Shape{1, 1, n0, n1}, v);
  const auto d = ddx(f, 3, 0.1, Scheme::central4);
  for (double x : d.values()) EXPECT_NEAR(x, 2.0, 1e-12);
}

TEST(Fdm, Superposition) {
  auto a = random_tensor({2, 12}, 1), b = random_tensor({2, 12}, 2);
  for (auto s : {Scheme::upwind3, Scheme::compact}) {
    auto lhs = ddx(add(a, scale(b, 3.0)), 1, 0.2, s);
    auto rhs = add(ddx(a, 1, 0.2, s), scale(ddx(b, 1, 0.2, s), 3.0));
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(Fdm, TooFewPointsRejected) {
  EXPECT_THROW(ddx(TD::ones({2}), 0, 0.1, Scheme::central2), ShapeError);
}

TEST(FdmGrad, AllOperators) {
  auto x = random_tensor({2, 9, 7}, 4);
  for (auto s : {Scheme::upwind3, Scheme::central2, Scheme::central4, Scheme::compact}) {
    for (int bias : {1, -1}) {
      expect_grad_ok(grad_check(
          [&](const TD& f) {
            return add(sum(square(ddx(f, 1, 0.3, s, bias))), sum(square(ddx(f, 2, 0.2, s, bias))));
          },
          x));
    }
  }
  expect_grad_ok(grad_check([](const TD& f) { return sum(square(d2dx(f, 1, 0.25))); }, x));
}

TEST(Rk4, ExponentialDecayStep) {
  std::function<TD(const TD&)> f = [](const TD& y) { return neg(y); };
  auto y1 = rk4_step(f, TD::scalar(1.0), 0.1);
  EXPECT_NEAR(y1.item(), 0.9048375, 1e-7);
  EXPECT_NEAR(y1.item(), std::exp(-0.1), 1e-7);
}

TEST(Rk4, ZeroStepKeepsState) {
  std::function<TD(const TD&)> f = [](const TD& y) { return square(y); };
  auto y = random_tensor({4}, 5);
  EXPECT_EQ(rk4_step(f, y, 0.0).to_vector(), y.to_vector());
}

TEST(Rk4, MatchesQuarticTaylorOfMatrixExponential) {
  // y' = A y with A = [[0, 1], [-2, -0.3]]; RK4 gives (I + hA + ... + (hA)^4/24) y.
  const double h = 0.2;
  TD a(Shape{2, 2}, {0, 1, -2, -0.3});
  std::function<TD(const TD&)> f = [&](const TD& y) { return matmul(a, y); };
  TD y0(Shape{2, 1}, {1.0, 0.5});
  auto got = rk4_step(f, y0, h);
  TD term = y0, acc = y0;
  double fact = 1;
  for (int k = 1; k <= 4; ++k) {
    term = scale(matmul(a, term), h);
    fact *= k;
    acc = add(acc, scale(term, 1.0 / fact));
  }
  EXPECT_LT(max_abs_diff(got, acc), 1e-14);
}

TEST(Rk4, GradientThroughStep) {
  std::function<TD(const TD&)> f = [](const TD& y) { return sub(sin(y), scale(y, 0.5)); };
  expect_grad_ok(grad_check([&](const TD& y) { return sum(square(rk4_step(f, y, 0.3))); },
                            random_tensor({5}, 6)));
}

TEST(Jacobi, ZeroStaysZero) {
  auto p = TD::zeros({1, 1, 5, 5});
  auto mask = TD::ones({5, 5});
  auto q = jacobi_sweep(p, p, mask, {0.1, 0.1});
  EXPECT_EQ(max_abs(q), 0.0);
  EXPECT_EQ(laplace_residual(q, p, mask, {0.1, 0.1}), 0.0);
}

TEST(Jacobi, OneDimensionalHarmonicIsLinearInterpolant) {
  // Nine interior unknowns between boundary values a at x=0 and b at x=1;
  // the Dirichlet data enters through the right-hand side.
  const std::size_t n = 9;
  const double h = 0.1, a = 1.0, b = 3.0;
  std::vector<double> rhs(n, 0.0);
  rhs[0] = -a / (h * h);
  rhs[n - 1] = -b / (h * h);
  TD r(Shape{n}, rhs), mask = TD::ones({n}), p = TD::zeros({n});
  for (int it = 0; it < 2000; ++it) p = jacobi_sweep(p, r, mask, {h});
  EXPECT_LT(laplace_residual(p, r, mask, {h}), 1e-6);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], a + (b - a) * h * double(i + 1), 1e-6);
}

TEST(Jacobi, ResidualNonIncreasing) {
  const std::size_t n = 17;
  auto rhs = random_tensor({n, n}, 7);
  auto mask = TD::ones({n, n});
  std::vector<double> h{1.0 / 16, 1.0 / 16};
  TD p = TD::zeros({n, n});
  double prev = laplace_residual(p, rhs, mask, h);
  for (int it = 0; it < 200; ++it) {
    p = jacobi_sweep(p, rhs, mask, h);
    const double r = laplace_residual(p, rhs, mask, h);
    EXPECT_LE(r, prev * (1 + 1e-12)) << "sweep " << it;
    prev = r;
  }
}

TEST(Jacobi, MaskedPointsHeldAtZero) {
  auto mask = TD(Shape{3, 3}, {1, 1, 1, 1, 0, 1, 1, 1, 1});
  auto p = jacobi_sweep(random_tensor({3, 3}, 8), random_tensor({3, 3}, 9), mask, {0.5, 0.5});
  EXPECT_EQ(p[4], 0.0);
}

TEST(Jacobi, AllZeroMaskRejected) {
  EXPECT_THROW(jacobi_sweep(TD::zeros({3}), TD::zeros({3}), TD::zeros({3}), {0.5}), Error);
}

TEST(JacobiGrad, ThroughSeveralSweeps) {
  auto mask = TD(Shape{4, 5}, {1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1});
  expect_grad_ok(grad_check(
      [&](const std::vector<TD>& v) {
        TD p = v[0];
        for (int i = 0; i < 4; ++i) p = jacobi_sweep(p, v[1], mask, {0.3, 0.2});
        return sum(square(p));
      },
      {random_tensor({2, 4, 5}, 10), random_tensor({2, 4, 5}, 11)}));
}
