#include "pipno/calculus.hpp"

#include <cmath>
#include <numbers>

#include "pipno/diffcore/fft.hpp"
#include "pipno/errors.hpp"

namespace pipno::calculus {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<std::size_t> spatial_axes(const GridSpec& grid) {
  std::vector<std::size_t> axes;
  for (std::size_t a = 0; a < grid.dims(); ++a) axes.push_back(GridSpec::array_axis(a));
  return axes;
}

double max_abs_error(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

ad::Shape GridSpec::field_shape(std::size_t channels) const {
  ad::Shape s{channels};
  s.insert(s.end(), spatial.begin(), spatial.end());
  s.push_back(frames);
  return s;
}

std::size_t GridSpec::points() const {
  std::size_t n = frames;
  for (auto e : spatial) n *= e;
  return n;
}

std::vector<double> coordinates(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t j = 0; j < n; ++j) x[j] = static_cast<double>(j) / static_cast<double>(n);
  return x;
}

std::vector<double> frame_times(const GridSpec& grid) {
  std::vector<double> t(grid.frames);
  for (std::size_t j = 0; j < grid.frames; ++j) t[j] = static_cast<double>(j) * grid.dt();
  return t;
}

void check_field(const DiffArray& field, const GridSpec& grid) {
  const auto& s = field.shape();
  bool ok = s.size() == grid.dims() + 2 && s.back() == grid.frames;
  for (std::size_t a = 0; ok && a < grid.dims(); ++a) ok = s[a + 1] == grid.spatial[a];
  if (!ok) {
    throw ShapeError("field " + ad::to_string(s) + " does not match grid " +
                     ad::to_string(grid.field_shape(s.empty() ? 0 : s[0])));
  }
}

Spectrum spatial_spectrum(const DiffArray& field, const GridSpec& grid) {
  check_field(field, grid);
  return {ad::fft_forward(ad::to_complex(field), {spatial_axes(grid), false}), grid};
}

DiffArray apply_symbol(const Spectrum& s, const std::vector<ad::cplx>& symbol) {
  const auto axes = spatial_axes(s.grid);
  const DiffArray scaled = ad::spectral_scale(s.hat, symbol, axes);
  return ad::real_part(ad::fft_inverse(scaled, {axes, false}));
}

std::vector<ad::cplx> derivative_symbol(const GridSpec& grid, const std::vector<int>& orders) {
  if (orders.size() != grid.dims()) throw ShapeError("derivative orders must cover every spatial axis");
  std::size_t total = 1;
  for (auto n : grid.spatial) total *= n;
  std::vector<ad::cplx> symbol(total, 1.0);
  std::size_t inner = total;
  for (std::size_t a = 0; a < grid.dims(); ++a) {
    const std::size_t n = grid.spatial[a];
    inner /= n;
    if (orders[a] == 0) continue;
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t idx = (i / inner) % n;
      const bool nyquist = n % 2 == 0 && idx == n / 2;
      if (nyquist && orders[a] % 2 == 1) {
        symbol[i] = 0.0;
        continue;
      }
      const ad::cplx ik(0.0, kTwoPi * static_cast<double>(fft::wavenumber(idx, n)));
      symbol[i] *= std::pow(ik, orders[a]);
    }
  }
  return symbol;
}

std::vector<ad::cplx> laplacian_symbol(const GridSpec& grid) {
  std::vector<ad::cplx> out;
  for (std::size_t a = 0; a < grid.dims(); ++a) {
    std::vector<int> orders(grid.dims(), 0);
    orders[a] = 2;
    const auto part = derivative_symbol(grid, orders);
    if (out.empty()) {
      out = part;
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += part[i];
    }
  }
  return out;
}

DiffArray fourier_derivative(const DiffArray& field, const GridSpec& grid, std::size_t axis, int order) {
  if (axis < 1 || axis > grid.dims()) {
    throw ShapeError("fourier_derivative: axis " + std::to_string(axis) + " is not a periodic axis");
  }
  if (order != 1 && order != 2) throw ConfigError("fourier_derivative: order must be 1 or 2");
  std::vector<int> orders(grid.dims(), 0);
  orders[axis - 1] = order;
  return apply_symbol(spatial_spectrum(field, grid), derivative_symbol(grid, orders));
}

ad::Stencil fd_stencil(std::size_t n, FdScheme scheme, bool wrap, double h) {
  if (n < 3) throw ShapeError("finite differences need at least 3 points");
  ad::Stencil s{n, std::vector<std::vector<std::pair<std::size_t, double>>>(n)};
  const double ih = 1.0 / h;
  for (std::size_t j = 0; j < n; ++j) {
    auto& row = s.rows[j];
    if (scheme == FdScheme::Forward) {
      if (j + 1 < n) {
        row = {{j, -ih}, {j + 1, ih}};
      } else if (wrap) {
        row = {{j, -ih}, {0, ih}};
      } else {
        row = {{j - 1, -ih}, {j, ih}};
      }
    } else {
      if (j > 0 && j + 1 < n) {
        row = {{j - 1, -0.5 * ih}, {j + 1, 0.5 * ih}};
      } else if (wrap) {
        row = {{(j + n - 1) % n, -0.5 * ih}, {(j + 1) % n, 0.5 * ih}};
      } else if (j == 0) {
        row = {{0, -1.5 * ih}, {1, 2.0 * ih}, {2, -0.5 * ih}};
      } else {
        row = {{n - 3, 0.5 * ih}, {n - 2, -2.0 * ih}, {n - 1, 1.5 * ih}};
      }
    }
  }
  return s;
}

ad::Stencil time_stencil(std::size_t n, double dt) {
  if (n < 3) throw ShapeError("time_derivative: at least 3 frames required, got " + std::to_string(n));
  return fd_stencil(n, FdScheme::Central, false, dt);
}

DiffArray finite_difference_derivative(const DiffArray& field, std::size_t axis, FdScheme scheme,
                                       bool wrap, double h) {
  return ad::axis_stencil(field, axis, fd_stencil(field.extent(axis), scheme, wrap, h));
}

DiffArray time_derivative(const DiffArray& field, std::size_t axis, double dt) {
  return ad::axis_stencil(field, axis, time_stencil(field.extent(axis), dt));
}

double study_function(double x) {
  return std::sin(kTwoPi * x) + 0.5 * std::cos(4.0 * kTwoPi * x);
}

double study_derivative(double x) {
  return kTwoPi * std::cos(kTwoPi * x) - 2.0 * kTwoPi * std::sin(4.0 * kTwoPi * x);
}

std::vector<ConvergenceRow> convergence_study(const std::vector<std::size_t>& n_values) {
  std::vector<ConvergenceRow> rows;
  for (auto n : n_values) {
    const auto x = coordinates(n);
    std::vector<double> f(n), exact(n);
    for (std::size_t j = 0; j < n; ++j) {
      f[j] = study_function(x[j]);
      exact[j] = study_derivative(x[j]);
    }
    const DiffArray field({1, n, 1}, f);
    const GridSpec grid{{n}, 1, 1.0};
    const auto fe = finite_difference_derivative(field, 1, FdScheme::Forward, true, 1.0 / static_cast<double>(n));
    const auto sp = fourier_derivative(field, grid, 1, 1);
    const std::vector<double> fe_v(fe.values().begin(), fe.values().end());
    const std::vector<double> sp_v(sp.values().begin(), sp.values().end());
    rows.push_back({n, max_abs_error(fe_v, exact), max_abs_error(sp_v, exact)});
  }
  return rows;
}

double loglog_slope(const std::vector<ConvergenceRow>& rows) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double lx = std::log(static_cast<double>(r.n));
    const double ly = std::log(r.forward_euler_max_err);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace pipno::calculus
