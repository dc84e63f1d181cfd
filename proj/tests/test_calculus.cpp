#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pipno/calculus.hpp"
#include "pipno/errors.hpp"
#include "support.hpp"

using namespace pipno;
using calculus::GridSpec;
using ad::DiffArray;

namespace {

constexpr double kPi = std::numbers::pi;

DiffArray line(std::size_t n, double (*f)(double)) {
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = f(static_cast<double>(j) / static_cast<double>(n));
  return DiffArray({1, n, 1}, v);
}

double err_against(const DiffArray& got, std::size_t n, double (*f)(double)) {
  double m = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    m = std::max(m, std::abs(got.values()[j] - f(static_cast<double>(j) / static_cast<double>(n))));
  }
  return m;
}

}  // namespace

TEST_CASE("fourier derivative") {
  const std::size_t n = 128;
  const GridSpec grid{{n}, 1, 1.0};
  const auto s = line(n, [](double x) { return std::sin(2 * kPi * x); });
  CHECK(err_against(calculus::fourier_derivative(s, grid, 1, 1), n,
                    [](double x) { return 2 * kPi * std::cos(2 * kPi * x); }) < 1e-9);
  CHECK(err_against(calculus::fourier_derivative(s, grid, 1, 2), n,
                    [](double x) { return -4 * kPi * kPi * std::sin(2 * kPi * x); }) < 1e-7);
  const auto c = line(n, [](double) { return 3.7; });
  CHECK(testing::max_abs(calculus::fourier_derivative(c, grid, 1, 1).values()) < 1e-12);
  CHECK_THROWS_AS(calculus::fourier_derivative(s, grid, 2, 1), ShapeError);

  SUBCASE("linearity and repeated first derivative") {
    rng::Stream rng(11, 0);
    const GridSpec g2{{16, 12}, 5, 1.0};
    auto f = testing::random_array(g2.field_shape(2), ad::DType::Real, rng);
    auto h = testing::random_array(g2.field_shape(2), ad::DType::Real, rng);
    const auto lhs = calculus::fourier_derivative(ad::add(ad::scale(f, 2.0), ad::scale(h, -0.5)), g2, 2, 1);
    const auto rhs = ad::add(ad::scale(calculus::fourier_derivative(f, g2, 2, 1), 2.0),
                             ad::scale(calculus::fourier_derivative(h, g2, 2, 1), -0.5));
    CHECK(testing::max_abs_diff(lhs.values(), rhs.values()) < 1e-12);
    // Remove the Nyquist content, then D2 = D1 D1.
    const auto smooth = calculus::fourier_derivative(calculus::fourier_derivative(f, g2, 1, 1), g2, 2, 1);
    const auto twice = calculus::fourier_derivative(calculus::fourier_derivative(smooth, g2, 1, 1), g2, 1, 1);
    const auto direct = calculus::fourier_derivative(smooth, g2, 1, 2);
    CHECK(testing::max_abs_diff(twice.values(), direct.values()) < 1e-9 * testing::max_abs(direct.values()));
  }
  SUBCASE("adjoint test") {
    rng::Stream rng(12, 0);
    const GridSpec g2{{8, 6}, 4, 1.0};
    for (int order : {1, 2}) {
      for (int t = 0; t < 100; ++t) {
        const auto x = testing::random_array(g2.field_shape(1), ad::DType::Real, rng);
        CHECK(testing::adjoint_mismatch(
                  [&](const DiffArray& a) { return calculus::fourier_derivative(a, g2, 2, order); }, x, rng) <
              1e-10);
        CHECK(testing::adjoint_mismatch(
                  [&](const DiffArray& a) { return calculus::time_derivative(a, 3, 0.1); }, x, rng) < 1e-10);
      }
    }
  }
}

TEST_CASE("finite differences") {
  const std::size_t n = 128;
  const double h = 1.0 / n;
  const auto s = line(n, [](double x) { return std::sin(2 * kPi * x); });
  auto cosd = [](double x) { return 2 * kPi * std::cos(2 * kPi * x); };
  const double fwd = err_against(calculus::finite_difference_derivative(s, 1, calculus::FdScheme::Forward, true, h), n, cosd);
  CHECK(fwd >= 0.10);
  CHECK(fwd <= 0.20);
  CHECK(err_against(calculus::finite_difference_derivative(s, 1, calculus::FdScheme::Central, true, h), n, cosd) < 5e-3);
  const auto ramp = line(n, [](double x) { return 3.0 * x - 1.0; });
  const auto d = calculus::finite_difference_derivative(ramp, 1, calculus::FdScheme::Central, false, h);
  for (double v : d.values()) CHECK(std::abs(v - 3.0) < 1e-12);
}

TEST_CASE("time derivative") {
  auto frames = [](std::size_t f, double dt, double (*fn)(double)) {
    std::vector<double> v(f);
    for (std::size_t j = 0; j < f; ++j) v[j] = fn(static_cast<double>(j) * dt);
    return DiffArray({1, 1, f}, v);
  };
  const double dt = 0.05;
  const auto d1 = calculus::time_derivative(frames(9, dt, [](double t) { return t; }), 2, dt);
  for (double v : d1.values()) CHECK(std::abs(v - 1.0) < 1e-12);
  const auto d2 = calculus::time_derivative(frames(9, dt, [](double t) { return t * t; }), 2, dt);
  for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(d2.values()[j] - 2.0 * j * dt) < 1e-10);
  const double dts = 1.0 / 99.0;
  const auto ds = calculus::time_derivative(frames(100, dts, [](double t) { return std::sin(t); }), 2, dts);
  double worst = 0.0;
  for (std::size_t j = 0; j < 100; ++j) worst = std::max(worst, std::abs(ds.values()[j] - std::cos(j * dts)));
  CHECK(worst < 1e-4);
  CHECK_THROWS_AS(calculus::time_derivative(DiffArray::zeros({1, 1, 2}), 2, 0.1), ShapeError);
}

TEST_CASE("convergence study") {
  const auto rows = calculus::convergence_study({32, 64, 128, 256, 512, 1024});
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) CHECK(r.fourier_max_err < 1e-9);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].forward_euler_max_err < rows[i - 1].forward_euler_max_err);
  const double slope = calculus::loglog_slope(rows);
  CHECK(slope >= -1.2);
  CHECK(slope <= -0.8);
  CHECK(rows[2].fourier_max_err * 1e6 <= rows[2].forward_euler_max_err);
}
