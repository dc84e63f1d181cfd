#include "pipno/refsolve.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pipno/diffcore/fft.hpp"
#include "pipno/errors.hpp"

namespace pipno::refsolve {
namespace {

using cplx = std::complex<double>;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool all_finite(const State& y) {
  return std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); });
}

/// Periodic central differences on a 1D line of n points or an n x n grid
/// stored row-major as [x][y].
struct Periodic {
  std::size_t n;
  std::size_t dims;
  double h;

  std::size_t size() const { return dims == 1 ? n : n * n; }

  // First derivative along axis 0 (x) or 1 (y).
  void d1(const double* f, double* out, std::size_t axis) const {
    const double c = 0.5 / h;
    if (dims == 1) {
      for (std::size_t i = 0; i < n; ++i) out[i] = c * (f[(i + 1) % n] - f[(i + n - 1) % n]);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (axis == 0) {
          out[i * n + j] = c * (f[((i + 1) % n) * n + j] - f[((i + n - 1) % n) * n + j]);
        } else {
          out[i * n + j] = c * (f[i * n + (j + 1) % n] - f[i * n + (j + n - 1) % n]);
        }
      }
    }
  }

  void laplacian(const double* f, double* out) const {
    const double c = 1.0 / (h * h);
    if (dims == 1) {
      for (std::size_t i = 0; i < n; ++i) out[i] = c * (f[(i + 1) % n] - 2.0 * f[i] + f[(i + n - 1) % n]);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ip = ((i + 1) % n) * n, im = ((i + n - 1) % n) * n;
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t jp = (j + 1) % n, jm = (j + n - 1) % n;
        out[i * n + j] = c * (f[ip + j] + f[im + j] + f[i * n + jp] + f[i * n + jm] - 4.0 * f[i * n + j]);
      }
    }
  }

  // Second derivative along x only (1D use).
  void d2(const double* f, double* out) const { laplacian(f, out); }
};

void check_stability(const pde::PdeSystem& s, const SolverConfig& c, double h) {
  const double r = c.dt / (h * h);
  switch (s.id) {
    case pde::SystemId::Consolidation1d:
    case pde::SystemId::Consolidation2d:
      if (s.coeff.cv * r > 0.2) throw ConfigError("consolidation step violates C_v dt/dx^2 <= 0.2");
      break;
    case pde::SystemId::Schrodinger1d:
      if (0.5 * s.coeff.hbar / s.coeff.mass * r > 0.1) throw ConfigError("Schrodinger step violates dt/(2 dx^2) <= 0.1");
      break;
    default:
      break;
  }
}

/// Reorders frame-major states [F][C*P] into [C, P, F].
ad::DiffArray to_field(const std::vector<State>& frames, std::size_t channels, const calculus::GridSpec& grid) {
  const std::size_t f = frames.size();
  const std::size_t cp = frames.front().size();
  std::vector<double> out(cp * f);
  for (std::size_t j = 0; j < f; ++j) {
    for (std::size_t i = 0; i < cp; ++i) out[i * f + j] = frames[j][i];
  }
  calculus::GridSpec g = grid;
  g.frames = f;
  return ad::DiffArray(g.field_shape(channels), std::move(out));
}

std::vector<State> solve_navier_stokes(const pde::PdeSystem& s, std::span<const double> a0, const SolverConfig& c,
                                       std::size_t stride) {
  const std::size_t n = s.train_grid.spatial[0];
  const SpectralNs solver(n, s.coeff.viscosity, c.dt, c.dealias, s.coeff.forcing);
  auto hat = fft2(a0, n);
  std::vector<State> frames;
  frames.emplace_back(a0.begin(), a0.end());
  for (std::size_t f = 1; f < c.frames; ++f) {
    for (std::size_t k = 0; k < stride; ++k) solver.step(hat);
    State w = ifft2_real(hat, n);
    if (!all_finite(w)) {
      throw NumericError("Navier-Stokes solver blew up before step " + std::to_string(f * stride));
    }
    frames.push_back(std::move(w));
  }
  return frames;
}

}  // namespace

std::vector<State> rk4_integrate(const Rhs& rhs, State y0, double dt, std::size_t steps, std::size_t frame_stride) {
  if (frame_stride == 0 || steps % frame_stride != 0) {
    throw ConfigError("rk4_integrate: frame stride must divide the step count");
  }
  const std::size_t m = y0.size();
  std::vector<State> frames;
  frames.push_back(y0);
  State y = std::move(y0), k1(m), k2(m), k3(m), k4(m), tmp(m);
  for (std::size_t step = 1; step <= steps; ++step) {
    rhs(y, k1);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * dt * k1[i];
    rhs(tmp, k2);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * dt * k2[i];
    rhs(tmp, k3);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + dt * k3[i];
    rhs(tmp, k4);
    for (std::size_t i = 0; i < m; ++i) y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!all_finite(y)) throw NumericError("RK4 state became non-finite at step " + std::to_string(step));
    if (step % frame_stride == 0) frames.push_back(y);
  }
  return frames;
}

SolverConfig default_config(const pde::PdeSystem& system) {
  SolverConfig c;
  c.dt = system.solver_dt;
  c.frames = system.train_grid.frames;
  c.frame_dt = system.train_grid.dt();
  c.dealias = true;
  return c;
}

std::size_t frame_stride(const SolverConfig& config) {
  const double ratio = config.frame_dt / config.dt;
  const double stride = std::round(ratio);
  if (stride < 1.0 || std::abs(ratio - stride) > 1e-9 * ratio) {
    throw ConfigError("frame spacing " + std::to_string(config.frame_dt) + " is not a multiple of dt " +
                      std::to_string(config.dt));
  }
  return static_cast<std::size_t>(stride);
}

ad::DiffArray solve_reference(const pde::PdeSystem& s, std::span<const double> a0, const SolverConfig& c) {
  const auto& grid = s.train_grid;
  const std::size_t n = grid.spatial[0];
  const Periodic op{n, grid.dims(), 1.0 / static_cast<double>(n)};
  const std::size_t p = op.size();
  if (a0.size() != p) {
    throw ShapeError("initial field has " + std::to_string(a0.size()) + " values, " + s.name + " grid needs " +
                     std::to_string(p));
  }
  if (c.frames == 0) throw ConfigError("at least one frame is required");
  check_stability(s, c, op.h);
  const std::size_t stride = frame_stride(c);
  const std::size_t steps = (c.frames - 1) * stride;
  const auto& k = s.coeff;

  if (s.id == pde::SystemId::NavierStokes2d) {
    return to_field(solve_navier_stokes(s, a0, c, stride), 1, grid);
  }

  State y0(s.out_channels * p, 0.0);
  std::copy(a0.begin(), a0.end(), y0.begin());
  Rhs rhs;
  std::vector<double> s1(p), s2(p), s3(p), s4(p);
  switch (s.id) {
    case pde::SystemId::Consolidation1d:
    case pde::SystemId::Consolidation2d:
      rhs = [&](const State& y, State& out) {
        op.laplacian(y.data(), out.data());
        for (auto& v : out) v *= k.cv;
      };
      break;
    case pde::SystemId::AllenCahn:
      rhs = [&](const State& y, State& out) {
        op.d2(y.data(), out.data());
        for (std::size_t i = 0; i < p; ++i) out[i] = k.epsilon * out[i] + y[i] - y[i] * y[i] * y[i];
      };
      break;
    case pde::SystemId::Maxwell1d:
      // State (E, H): H_t = -E_x / mu, E_t = -H_x / eps.
      rhs = [&](const State& y, State& out) {
        op.d1(y.data() + p, out.data(), 0);
        op.d1(y.data(), out.data() + p, 0);
        for (std::size_t i = 0; i < p; ++i) {
          out[i] *= -1.0 / k.epsilon;
          out[p + i] *= -1.0 / k.mu;
        }
      };
      break;
    case pde::SystemId::Schrodinger1d:
      // u_t = -(hbar/2m) v_xx - |psi|^2 v / hbar, v_t = (hbar/2m) u_xx + |psi|^2 u / hbar.
      rhs = [&](const State& y, State& out) {
        const double* u = y.data();
        const double* v = y.data() + p;
        op.d2(v, out.data());
        op.d2(u, out.data() + p);
        const double a = 0.5 * k.hbar / k.mass;
        for (std::size_t i = 0; i < p; ++i) {
          const double dens = u[i] * u[i] + v[i] * v[i];
          out[i] = -a * out[i] - dens * v[i] / k.hbar;
          out[p + i] = a * out[p + i] + dens * u[i] / k.hbar;
        }
      };
      break;
    case pde::SystemId::ShallowWater2d: {
      const double min_eta = *std::min_element(a0.begin(), a0.end());
      if (min_eta <= 0.05) {
        throw ConfigError("shallow-water initial depth must stay above 0.05 (min " + std::to_string(min_eta) + ")");
      }
      // Conservative state (eta, eta u, eta v); initial velocities are zero.
      rhs = [&](const State& y, State& out) {
        const double* h = y.data();
        const double* qu = y.data() + p;
        const double* qv = y.data() + 2 * p;
        double* oh = out.data();
        double* ou = out.data() + p;
        double* ov = out.data() + 2 * p;
        for (std::size_t i = 0; i < p; ++i) {
          if (!(h[i] > 0.0)) throw NumericError("shallow-water depth lost positivity");
        }
        // Mass.
        op.d1(qu, s1.data(), 0);
        op.d1(qv, s2.data(), 1);
        for (std::size_t i = 0; i < p; ++i) oh[i] = -(s1[i] + s2[i]);
        // Momentum fluxes; s3 holds eta u v, s4 the velocity for diffusion.
        for (std::size_t i = 0; i < p; ++i) {
          s1[i] = qu[i] * qu[i] / h[i] + 0.5 * k.gravity * h[i] * h[i];
          s3[i] = qu[i] * qv[i] / h[i];
        }
        op.d1(s1.data(), s2.data(), 0);
        op.d1(s3.data(), s1.data(), 1);
        for (std::size_t i = 0; i < p; ++i) {
          ou[i] = -(s2[i] + s1[i]);
          s4[i] = qu[i] / h[i];
        }
        op.laplacian(s4.data(), s2.data());
        for (std::size_t i = 0; i < p; ++i) ou[i] += k.viscosity * s2[i];

        op.d1(s3.data(), s2.data(), 0);
        for (std::size_t i = 0; i < p; ++i) s1[i] = qv[i] * qv[i] / h[i] + 0.5 * k.gravity * h[i] * h[i];
        op.d1(s1.data(), s3.data(), 1);
        for (std::size_t i = 0; i < p; ++i) {
          ov[i] = -(s2[i] + s3[i]);
          s4[i] = qv[i] / h[i];
        }
        op.laplacian(s4.data(), s2.data());
        for (std::size_t i = 0; i < p; ++i) ov[i] += k.viscosity * s2[i];
      };
      break;
    }
    default:
      throw ConfigError("no reference solver for " + s.name);
  }

  auto frames = rk4_integrate(rhs, std::move(y0), c.dt, steps, stride);
  if (s.id == pde::SystemId::ShallowWater2d) {
    for (std::size_t f = 1; f < frames.size(); ++f) {
      auto& y = frames[f];
      for (std::size_t i = 0; i < p; ++i) {
        y[p + i] /= y[i];
        y[2 * p + i] /= y[i];
      }
    }
  }
  return to_field(frames, s.out_channels, grid);
}

SpectralNs::SpectralNs(std::size_t n, double viscosity, double dt, bool dealias, double forcing)
    : n_(n), viscosity_(viscosity), dt_(dt), forcing_(forcing), k2_(n * n), kx_(n * n), ky_(n * n), mask_(n * n, 1.0) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const long ki = fft::wavenumber(i, n);
      const long kj = fft::wavenumber(j, n);
      const std::size_t idx = i * n + j;
      k2_[idx] = kTwoPi * kTwoPi * static_cast<double>(ki * ki + kj * kj);
      const bool nyq_i = n % 2 == 0 && i == n / 2;
      const bool nyq_j = n % 2 == 0 && j == n / 2;
      kx_[idx] = nyq_i ? 0.0 : kTwoPi * static_cast<double>(ki);
      ky_[idx] = nyq_j ? 0.0 : kTwoPi * static_cast<double>(kj);
      if (dealias && (3 * std::abs(ki) >= static_cast<long>(n) || 3 * std::abs(kj) >= static_cast<long>(n))) {
        mask_[idx] = 0.0;
      }
    }
  }
}

void SpectralNs::step(std::vector<cplx>& w) const {
  const std::size_t m = n_ * n_;
  if (w.size() != m) throw ShapeError("spectral state does not match the grid");
  const cplx i1(0.0, 1.0);
  std::vector<cplx> uh(m), vh(m), wxh(m), wyh(m);
  for (std::size_t q = 0; q < m; ++q) {
    const cplx psi = k2_[q] > 0.0 ? w[q] / k2_[q] : cplx(0.0);
    uh[q] = i1 * ky_[q] * psi;
    vh[q] = -i1 * kx_[q] * psi;
    wxh[q] = i1 * kx_[q] * w[q];
    wyh[q] = i1 * ky_[q] * w[q];
  }
  const auto u = ifft2_real(uh, n_);
  const auto v = ifft2_real(vh, n_);
  const auto wx = ifft2_real(wxh, n_);
  const auto wy = ifft2_real(wyh, n_);
  std::vector<double> nl(m);
  for (std::size_t q = 0; q < m; ++q) nl[q] = u[q] * wx[q] + v[q] * wy[q];
  auto nh = fft2(nl, n_);
  nh[0] = 0.0;  // the mean of u . grad(omega) vanishes exactly on the torus
  const double fmean = forcing_ * static_cast<double>(m);
  for (std::size_t q = 0; q < m; ++q) {
    const cplx rhs = -mask_[q] * nh[q] - viscosity_ * k2_[q] * w[q] + (q == 0 ? cplx(fmean) : cplx(0.0));
    w[q] += dt_ * rhs;
  }
}

std::vector<cplx> spectral_ns_step(const std::vector<cplx>& omega_hat, const SpectralNs& solver) {
  auto next = omega_hat;
  solver.step(next);
  return next;
}

std::vector<cplx> fft2(std::span<const double> field, std::size_t n) {
  if (field.size() != n * n) throw ShapeError("fft2: field does not match the grid");
  std::vector<cplx> a(field.begin(), field.end()), b(n * n);
  const ad::Shape s{n, n};
  fft::c2c(a.data(), b.data(), fft::layout_of(s, 0), fft::Direction::Forward);
  fft::c2c(b.data(), a.data(), fft::layout_of(s, 1), fft::Direction::Forward);
  return a;
}

std::vector<double> ifft2_real(const std::vector<cplx>& hat, std::size_t n) {
  std::vector<cplx> a(n * n), b(n * n);
  const ad::Shape s{n, n};
  fft::c2c(hat.data(), a.data(), fft::layout_of(s, 0), fft::Direction::Backward);
  fft::c2c(a.data(), b.data(), fft::layout_of(s, 1), fft::Direction::Backward);
  std::vector<double> out(n * n);
  const double inv = 1.0 / static_cast<double>(n * n);
  for (std::size_t q = 0; q < n * n; ++q) out[q] = b[q].real() * inv;
  return out;
}

}  // namespace pipno::refsolve
