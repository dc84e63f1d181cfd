#pragma once

#include <complex>
#include <cstddef>

#include "pipno/diffcore/array.hpp"

/// Strided 1-D transforms over one axis of a row-major buffer, backed by FFTW.
///
/// All transforms are unnormalized. Plans are created with FFTW_ESTIMATE and
/// FFTW_UNALIGNED, cached per layout, and are safe to execute concurrently.
namespace pipno::fft {

using ad::cplx;

/// A buffer viewed as [outer, n, inner] around the transform axis.
struct AxisLayout {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisLayout layout_of(const ad::Shape& shape, std::size_t axis);

enum class Direction : int { Forward = -1, Backward = +1 };

/// Complex-to-complex along the axis; `in` and `out` may alias.
void c2c(const cplx* in, cplx* out, AxisLayout layout, Direction dir);

/// Real-to-half-complex along the axis. Output layout is [outer, n/2+1, inner].
void r2c(const double* in, cplx* out, AxisLayout layout);

/// Half-complex-to-real along the axis (layout.n is the real length). The
/// imaginary parts of the zero and Nyquist bins are ignored.
void c2r(const cplx* in, double* out, AxisLayout layout);

/// Symmetric integer wavenumbers for an n-point periodic axis: 0..n/2-1, -n/2..-1.
/// For even n the Nyquist index n/2 maps to -n/2.
long wavenumber(std::size_t index, std::size_t n);

}  // namespace pipno::fft
