#pragma once

// Shared helpers for the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pipno/diffcore/array.hpp"
#include "pipno/diffcore/params.hpp"
#include "pipno/random.hpp"

namespace testing {

using pipno::ad::cplx;
using pipno::ad::DiffArray;
using pipno::ad::DType;
using pipno::ad::Shape;

inline DiffArray random_array(const Shape& shape, DType dtype, pipno::rng::Stream& rng) {
  const std::size_t n = pipno::ad::numel(shape) * (dtype == DType::Complex ? 2 : 1);
  std::vector<double> raw(n);
  for (auto& v : raw) v = rng.normal();
  return DiffArray::from_raw(shape, dtype, std::move(raw));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double rms(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return a.empty() ? 0.0 : std::sqrt(s / static_cast<double>(a.size()));
}

/// Relative mismatch of <A x, y> against <x, A^T y> for a linear map `f`.
inline double adjoint_mismatch(const std::function<DiffArray(const DiffArray&)>& f,
                               const DiffArray& x, pipno::rng::Stream& rng) {
  const DiffArray ax = f(x);
  const DiffArray y = random_array(ax.shape(), ax.dtype(), rng);
  const std::vector<double> yraw(y.raw().begin(), y.raw().end());
  const auto aty = pipno::ad::vjp(f, x, yraw);
  const double lhs = dot(ax.raw(), y.raw());
  const double rhs = dot(x.raw(), aty);
  return std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
}

/// Central difference of a scalar function of one raw coordinate.
inline double central_difference(const std::function<double(double)>& f, double x0, double h) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

}  // namespace testing
