#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "pipno/diffcore/array.hpp"

/// Differentiable primitives. Each one computes its forward value eagerly and,
/// when any input is tracked, records its exact adjoint on the inputs' tape.
namespace pipno::ad {

/// Pointwise affine map over the trailing channel axis: x[..., in] -> [..., out].
DiffArray channel_linear(const DiffArray& x, const DiffArray& w, const DiffArray& b);

/// x * Phi(x) with the exact Gaussian CDF.
DiffArray gelu(const DiffArray& x);
/// Which math library evaluates the GeLU kernel ("libmvec-avx2", "libmvec-sse2" or "libm").
std::string_view gelu_backend();

DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
/// Elementwise product of two real arrays of equal shape.
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray scale(const DiffArray& x, double factor);
DiffArray add_scalar(const DiffArray& x, double value);

DiffArray to_complex(const DiffArray& x);
DiffArray real_part(const DiffArray& x);

/// Axes to transform. When `half` is set the input must be real and the last
/// listed axis becomes a half spectrum of n/2+1 bins.
struct FftAxes {
  std::vector<std::size_t> axes;
  bool half = false;
};

/// Unnormalized forward DFT over the listed axes.
DiffArray fft_forward(const DiffArray& x, const FftAxes& spec);

/// Inverse DFT scaled by 1/n per axis. With `spec.half`, `real_length` is the
/// length of the real output along the half-spectrum axis.
DiffArray fft_inverse(const DiffArray& x, const FftAxes& spec,
                      std::optional<std::size_t> real_length = std::nullopt);

/// Per-mode channel mixing: xhat[modes..., in] x r[modes..., in, out] -> [modes..., out].
DiffArray spectral_multiply(const DiffArray& xhat, const DiffArray& r);

/// Multiplies a complex array by a constant factor defined over `axes` and
/// broadcast over every other axis. `factor` has the extents of `axes`, in order.
DiffArray spectral_scale(const DiffArray& x, std::span<const cplx> factor,
                         std::span<const std::size_t> axes);

/// Low-mode corner block of a spectrum. Full axes keep indices [0, m) and
/// [n-m, n); a half-spectrum axis keeps [0, m).
struct ModeBlock {
  std::vector<std::size_t> axes;
  std::vector<std::size_t> modes;
  std::optional<std::size_t> half_axis;
};

DiffArray mode_truncate(const DiffArray& x, const ModeBlock& block);
/// Zero-pads a truncated block back to `full_extents` along the block axes.
DiffArray mode_pad(const DiffArray& x, const ModeBlock& block,
                   std::span<const std::size_t> full_extents);

/// Sparse n x n matrix applied along one axis: row i holds (column, weight) pairs.
struct Stencil {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

DiffArray axis_stencil(const DiffArray& x, std::size_t axis, const Stencil& stencil);

/// Removes `axis` by taking a single index along it.
DiffArray select(const DiffArray& x, std::size_t axis, std::size_t index);
/// Inserts a new axis at `axis` holding the inputs in order.
DiffArray stack(std::span<const DiffArray> xs, std::size_t axis);
DiffArray concat(std::span<const DiffArray> xs, std::size_t axis);
DiffArray permute(const DiffArray& x, std::span<const std::size_t> perm);
DiffArray reshape(const DiffArray& x, Shape shape);

enum class Reduction { Sum, Mean, MeanOfSquares };

/// Real scalar reduction over every element.
DiffArray reduce(const DiffArray& x, Reduction kind);

inline DiffArray sum(const DiffArray& x) { return reduce(x, Reduction::Sum); }
inline DiffArray mean(const DiffArray& x) { return reduce(x, Reduction::Mean); }
inline DiffArray mean_square(const DiffArray& x) { return reduce(x, Reduction::MeanOfSquares); }

}  // namespace pipno::ad
