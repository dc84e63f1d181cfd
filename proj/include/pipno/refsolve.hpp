#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pipno/diffcore/array.hpp"
#include "pipno/pdezoo.hpp"

namespace pipno::refsolve {

using State = std::vector<double>;
/// Writes dy/dt for state y into `out` (same size, pre-allocated).
using Rhs = std::function<void(const State& y, State& out)>;

/// Classical RK4. Returns 1 + steps/frame_stride frames: y0 and every
/// frame_stride-th state after it. Throws NumericError naming the step on blow-up.
std::vector<State> rk4_integrate(const Rhs& rhs, State y0, double dt, std::size_t steps,
                                 std::size_t frame_stride);

struct SolverConfig {
  double dt = 1e-4;
  /// Spacing of stored frames; must be an integer multiple of dt.
  double frame_dt = 0.01;
  std::size_t frames = 100;
  /// 2/3-rule dealiasing of the Navier-Stokes nonlinear term.
  bool dealias = true;
};

/// Printed step size and the system's frame grid (frame_dt = T/F, F frames).
SolverConfig default_config(const pde::PdeSystem& system);

std::size_t frame_stride(const SolverConfig& config);

/// Reference frames [channels, spatial..., frames] on the system's training
/// grid, starting from the first-channel field a0 (auxiliary channels at rest).
ad::DiffArray solve_reference(const pde::PdeSystem& system, std::span<const double> a0,
                              const SolverConfig& config);

/// Pseudo-spectral forward-Euler vorticity step on an n x n periodic grid.
class SpectralNs {
 public:
  SpectralNs(std::size_t n, double viscosity, double dt, bool dealias, double forcing = 0.0);
  /// omega_hat is the unnormalized 2D DFT of the vorticity, row-major [kx][ky].
  void step(std::vector<std::complex<double>>& omega_hat) const;
  std::size_t n() const noexcept { return n_; }

 private:
  std::size_t n_;
  double viscosity_;
  double dt_;
  double forcing_;
  std::vector<double> k2_;       // |2 pi k|^2
  std::vector<double> kx_, ky_;  // 2 pi k, zero at odd-order Nyquist
  std::vector<double> mask_;
};

std::vector<std::complex<double>> spectral_ns_step(const std::vector<std::complex<double>>& omega_hat,
                                                   const SpectralNs& solver);

/// Forward and inverse 2D transforms used by the spectral solver.
std::vector<std::complex<double>> fft2(std::span<const double> field, std::size_t n);
std::vector<double> ifft2_real(const std::vector<std::complex<double>>& hat, std::size_t n);

}  // namespace pipno::refsolve
