#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace pipno::grf {

/// Periodic Gaussian random field on the unit square/segment with a
/// squared-exponential covariance k(r) = sigma^2 exp(-r^2 / (2 l^2)).
struct GrfSpec {
  double sigma = 1.0;
  double length_scale = 0.1;
  /// Matern smoothness; only infinity (squared exponential) is supported.
  double nu = std::numeric_limits<double>::infinity();
  int dims = 1;
  std::size_t n_per_axis = 128;
  std::uint64_t seed = 0;
};

void validate(const GrfSpec& spec);

/// Squared-exponential covariance at distance r (no periodization).
double kernel(const GrfSpec& spec, double r);

/// First row of the (block-)circulant covariance, row-major over the grid:
/// the kernel summed over periodic images and normalized to sigma^2 at r = 0.
std::vector<double> kernel_row(const GrfSpec& spec);

/// DFT of the kernel row. Negative values are clipped to zero and the rest
/// rescaled so that sum(lambda)/N = sigma^2 still holds.
std::vector<double> kernel_eigenvalues(const GrfSpec& spec);

/// Draws the field with stream id `index`. The field is
/// C^{1/2} w = IFFT(sqrt(lambda) * FFT(w)) for real white noise w, so every grid
/// value has variance sigma^2 and (seed, index) fixes the result.
/// `max_imag`, when given, receives the largest imaginary residue discarded.
std::vector<double> sample_one(const GrfSpec& spec, const std::vector<double>& eigenvalues,
                               std::uint64_t index, double* max_imag = nullptr);

/// Fields for indices first .. first+count-1.
std::vector<std::vector<double>> sample(const GrfSpec& spec, std::size_t count,
                                        std::uint64_t first = 0);

}  // namespace pipno::grf
