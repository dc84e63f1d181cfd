#pragma once

#include <cstddef>
#include <vector>

#include "pipno/diffcore/array.hpp"
#include "pipno/diffcore/ops.hpp"

namespace pipno::calculus {

using ad::DiffArray;

/// Periodic unit-length spatial axes plus a frame axis.
///
/// Fields handled here use the layout [channels, spatial..., frames].
/// x_j = j/n on every spatial axis, t_j = j*T/F on the frame axis.
struct GridSpec {
  std::vector<std::size_t> spatial;
  std::size_t frames = 0;
  double horizon = 1.0;

  std::size_t dims() const noexcept { return spatial.size(); }
  double dt() const { return horizon / static_cast<double>(frames); }
  double h(std::size_t axis) const { return 1.0 / static_cast<double>(spatial.at(axis)); }
  /// Array axis of spatial axis `axis` in the field layout.
  static std::size_t array_axis(std::size_t axis) noexcept { return axis + 1; }
  std::size_t time_axis() const noexcept { return spatial.size() + 1; }
  /// Field shape with `channels` leading channels.
  ad::Shape field_shape(std::size_t channels) const;
  std::size_t points() const;
};

/// x_j = j/n for j = 0..n-1.
std::vector<double> coordinates(std::size_t n);
/// t_j = j*T/F for j = 0..F-1.
std::vector<double> frame_times(const GridSpec& grid);

void check_field(const DiffArray& field, const GridSpec& grid);

/// Spatial spectrum of a field, shared by several derivative evaluations.
struct Spectrum {
  DiffArray hat;
  GridSpec grid;
};

Spectrum spatial_spectrum(const DiffArray& field, const GridSpec& grid);

/// Multiplies the spectrum by `symbol` (one value per spatial wavenumber,
/// row-major over the spatial axes) and returns to a real field.
DiffArray apply_symbol(const Spectrum& s, const std::vector<ad::cplx>& symbol);

/// Symbol of prod_a (i 2 pi k_a)^orders[a]; odd orders zero the Nyquist index.
std::vector<ad::cplx> derivative_symbol(const GridSpec& grid, const std::vector<int>& orders);
/// Symbol of the Laplacian, -4 pi^2 |k|^2.
std::vector<ad::cplx> laplacian_symbol(const GridSpec& grid);

/// d^order/dx_axis^order by Fourier differentiation. `axis` is the array axis
/// in the field layout and must be spatial; order is 1 or 2.
DiffArray fourier_derivative(const DiffArray& field, const GridSpec& grid, std::size_t axis, int order);

enum class FdScheme { Forward, Central };

ad::Stencil fd_stencil(std::size_t n, FdScheme scheme, bool wrap, double h);
/// Central differences inside, second-order one-sided 3-point ends.
ad::Stencil time_stencil(std::size_t n, double dt);

DiffArray finite_difference_derivative(const DiffArray& field, std::size_t axis, FdScheme scheme,
                                       bool wrap, double h);
/// Derivative along `axis` of frames spaced `dt` apart; needs at least 3 frames.
DiffArray time_derivative(const DiffArray& field, std::size_t axis, double dt);

struct ConvergenceRow {
  std::size_t n;
  double forward_euler_max_err;
  double fourier_max_err;
};

/// Study function f(x) = sin(2 pi x) + 0.5 cos(8 pi x).
double study_function(double x);
double study_derivative(double x);

std::vector<ConvergenceRow> convergence_study(const std::vector<std::size_t>& n_values);

/// Least-squares slope of log(forward-Euler error) against log(n).
double loglog_slope(const std::vector<ConvergenceRow>& rows);

}  // namespace pipno::calculus
