#include "pipno/grf.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "pipno/diffcore/fft.hpp"
#include "pipno/errors.hpp"
#include "pipno/random.hpp"

namespace pipno::grf {
namespace {

using cplx = std::complex<double>;

ad::Shape grid_shape(const GrfSpec& spec) {
  return ad::Shape(static_cast<std::size_t>(spec.dims), spec.n_per_axis);
}

void transform(std::vector<cplx>& data, const ad::Shape& shape, fft::Direction dir) {
  std::vector<cplx> tmp(data.size());
  for (std::size_t a = 0; a < shape.size(); ++a) {
    fft::c2c(data.data(), tmp.data(), fft::layout_of(shape, a), dir);
    data.swap(tmp);
  }
}

}  // namespace

void validate(const GrfSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw ConfigError("grf: sigma must be non-negative");
  if (!(spec.length_scale > 0.0)) throw ConfigError("grf: length scale must be positive");
  if (spec.n_per_axis < 8) throw ConfigError("grf: at least 8 points per axis required");
  if (spec.dims != 1 && spec.dims != 2) throw ConfigError("grf: dims must be 1 or 2");
  if (!std::isinf(spec.nu) || spec.nu < 0) {
    throw ConfigError("grf: only the nu = inf (squared-exponential) kernel is supported");
  }
}

double kernel(const GrfSpec& spec, double r) {
  return spec.sigma * spec.sigma * std::exp(-r * r / (2.0 * spec.length_scale * spec.length_scale));
}

std::vector<double> kernel_row(const GrfSpec& spec) {
  validate(spec);
  const std::size_t n = spec.n_per_axis;
  const double l = spec.length_scale;
  // Periodized Gaussian: sum over the images x + m, scaled so g(0) = 1. Its
  // Fourier coefficients are samples of the (positive) spectral density.
  const long images = static_cast<long>(std::ceil(10.0 * l)) + 1;
  std::vector<double> g(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double x = static_cast<double>(j) / static_cast<double>(n);
    double s = 0.0;
    for (long m = -images; m <= images; ++m) {
      const double r = x + static_cast<double>(m);
      s += std::exp(-r * r / (2.0 * l * l));
    }
    g[j] = s;
  }
  const double g0 = g[0];
  for (auto& v : g) v /= g0;
  const double var = spec.sigma * spec.sigma;
  std::vector<double> row;
  if (spec.dims == 1) {
    row.resize(n);
    for (std::size_t j = 0; j < n; ++j) row[j] = var * g[j];
  } else {
    row.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) row[i * n + j] = var * g[i] * g[j];
    }
  }
  return row;
}

std::vector<double> kernel_eigenvalues(const GrfSpec& spec) {
  const auto row = kernel_row(spec);
  std::vector<cplx> data(row.begin(), row.end());
  transform(data, grid_shape(spec), fft::Direction::Forward);
  std::vector<double> lambda(data.size());
  double clipped = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    lambda[i] = std::max(0.0, data[i].real());
    clipped += lambda[i];
    total += data[i].real();
  }
  // Clipping only removes rounding noise; rescale so the diagonal stays sigma^2.
  if (clipped > 0.0 && clipped != total) {
    const double factor = total / clipped;
    for (auto& v : lambda) v *= factor;
  }
  return lambda;
}

std::vector<double> sample_one(const GrfSpec& spec, const std::vector<double>& eigenvalues,
                               std::uint64_t index, double* max_imag) {
  const ad::Shape shape = grid_shape(spec);
  const std::size_t n = ad::numel(shape);
  if (eigenvalues.size() != n) throw ShapeError("grf: spectrum does not match the grid");
  rng::Stream stream(spec.seed, index);
  std::vector<cplx> data(n);
  for (auto& v : data) v = stream.normal();
  transform(data, shape, fft::Direction::Forward);
  for (std::size_t i = 0; i < n; ++i) data[i] *= std::sqrt(eigenvalues[i]);
  transform(data, shape, fft::Direction::Backward);
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> field(n);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    field[i] = data[i].real() * inv;
    worst = std::max(worst, std::abs(data[i].imag() * inv));
  }
  if (max_imag != nullptr) *max_imag = worst;
  return field;
}

std::vector<std::vector<double>> sample(const GrfSpec& spec, std::size_t count, std::uint64_t first) {
  const auto lambda = kernel_eigenvalues(spec);
  std::vector<std::vector<double>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(sample_one(spec, lambda, first + k));
  return out;
}

}  // namespace pipno::grf
