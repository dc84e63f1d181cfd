#include "pipno/pdezoo.hpp"

#include <cmath>
#include <numbers>

#include "pipno/diffcore/ops.hpp"
#include "pipno/errors.hpp"

namespace pipno::pde {
namespace {

using namespace ad;

GridSpec grid_of(std::vector<std::size_t> spatial, std::size_t frames, double horizon) {
  return GridSpec{std::move(spatial), frames, horizon};
}

grf::GrfSpec grf_of(double sigma, double l, int dims, std::size_t n) {
  grf::GrfSpec s;
  s.sigma = sigma;
  s.length_scale = l;
  s.dims = dims;
  s.n_per_axis = n;
  return s;
}

/// Channel c as a single-channel field [1, spatial..., frames].
DiffArray channel(const DiffArray& pred, std::size_t c) {
  Shape s = pred.shape();
  s[0] = 1;
  return reshape(select(pred, 0, c), s);
}

/// Spatial derivative helper over one shared spectrum.
class Deriv {
 public:
  Deriv(const DiffArray& f, const GridSpec& g) : spec_(calculus::spatial_spectrum(f, g)) {}
  DiffArray d(std::size_t axis, int order) const {
    std::vector<int> orders(spec_.grid.dims(), 0);
    orders[axis] = order;
    return calculus::apply_symbol(spec_, calculus::derivative_symbol(spec_.grid, orders));
  }
  DiffArray lap() const { return calculus::apply_symbol(spec_, calculus::laplacian_symbol(spec_.grid)); }

 private:
  calculus::Spectrum spec_;
};

DiffArray dx(const DiffArray& f, const GridSpec& g, std::size_t axis) { return Deriv(f, g).d(axis, 1); }

DiffArray dt(const DiffArray& f, const GridSpec& g) { return calculus::time_derivative(f, g.time_axis(), g.dt()); }

DiffArray cube(const DiffArray& u) { return mul(mul(u, u), u); }

DiffArray stack_channels(std::vector<DiffArray> parts) { return concat(parts, 0); }

}  // namespace

std::size_t PdeSystem::residual_channels() const { return out_channels; }

const std::vector<std::string>& system_names() {
  static const std::vector<std::string> names = {"consolidation1d", "consolidation2d", "allen_cahn",
                                                 "maxwell1d",       "schrodinger1d",   "navier_stokes2d",
                                                 "shallow_water2d"};
  return names;
}

PdeSystem make_system(std::string_view name) {
  PdeSystem s;
  s.name = std::string(name);
  s.horizon = 1.0;
  s.ic_offset = 0.0;
  if (name == "consolidation1d") {
    s.id = SystemId::Consolidation1d;
    s.spatial_dims = 1;
    s.channel_names = {"u"};
    s.coeff.cv = 0.01;
    s.train_grid = grid_of({128}, 100, 1.0);
    s.grf = grf_of(0.5, 0.1, 1, 128);
    s.solver_dt = 1e-4;
  } else if (name == "consolidation2d") {
    s.id = SystemId::Consolidation2d;
    s.spatial_dims = 2;
    s.channel_names = {"u"};
    s.coeff.cv = 0.01;
    s.train_grid = grid_of({64, 64}, 100, 1.0);
    s.grf = grf_of(0.5, 0.1, 2, 64);
    s.solver_dt = 1e-4;
  } else if (name == "allen_cahn") {
    s.id = SystemId::AllenCahn;
    s.spatial_dims = 1;
    s.channel_names = {"u"};
    s.coeff.epsilon = 1e-4;
    s.horizon = 2.0;
    s.train_grid = grid_of({128}, 200, 2.0);
    s.grf = grf_of(0.4, 0.1, 1, 128);
    s.solver_dt = 1e-5;
  } else if (name == "maxwell1d") {
    s.id = SystemId::Maxwell1d;
    s.spatial_dims = 1;
    s.channel_names = {"E", "H"};
    s.coeff.epsilon = 1.0;
    s.coeff.mu = 1.0;
    s.train_grid = grid_of({128}, 100, 1.0);
    s.grf = grf_of(0.1, 0.1, 1, 128);
    s.solver_dt = 1e-5;
  } else if (name == "schrodinger1d") {
    s.id = SystemId::Schrodinger1d;
    s.spatial_dims = 1;
    s.channel_names = {"u", "v"};
    s.coeff.hbar = 1.0;
    s.coeff.mass = 1.0;
    s.train_grid = grid_of({128}, 100, 1.0);
    s.grf = grf_of(0.5, 0.4, 1, 128);
    s.solver_dt = 1e-5;
  } else if (name == "navier_stokes2d") {
    s.id = SystemId::NavierStokes2d;
    s.spatial_dims = 2;
    s.channel_names = {"omega"};
    s.coeff.viscosity = 0.05;
    s.train_grid = grid_of({64, 64}, 100, 1.0);
    s.grf = grf_of(0.6, 0.2, 2, 64);
    s.solver_dt = 1e-4;
  } else if (name == "shallow_water2d") {
    s.id = SystemId::ShallowWater2d;
    s.spatial_dims = 2;
    s.channel_names = {"eta", "u", "v"};
    s.coeff.gravity = 1.0;
    s.coeff.viscosity = 0.002;
    s.train_grid = grid_of({64, 64}, 100, 1.0);
    s.grf = grf_of(0.2, 0.1, 2, 64);
    s.ic_offset = 1.0;
    s.solver_dt = 1e-4;
  } else {
    throw ConfigError("unknown system '" + std::string(name) + "'");
  }
  s.out_channels = s.channel_names.size();
  s.bc_loss_enabled = s.out_channels > 1;
  return s;
}

PdeSystem with_grid(PdeSystem system, std::vector<std::size_t> spatial, std::size_t frames) {
  if (spatial.size() != system.spatial_dims) throw ConfigError("grid rank does not match the system");
  for (std::size_t a = 1; a < spatial.size(); ++a) {
    if (spatial[a] != spatial[0]) throw ConfigError("2D grids must be square");
  }
  system.grf.n_per_axis = spatial[0];
  system.train_grid = GridSpec{std::move(spatial), frames, system.horizon};
  return system;
}

Velocity velocity_from_vorticity(const DiffArray& omega, const GridSpec& grid) {
  if (grid.dims() != 2) throw ShapeError("velocity_from_vorticity needs a 2D grid");
  const bool bare = omega.rank() == 3;
  const DiffArray w = bare ? reshape(omega, grid.field_shape(1)) : omega;
  const calculus::Spectrum spec = calculus::spatial_spectrum(w, grid);
  const auto lap = calculus::laplacian_symbol(grid);
  const auto dx1 = calculus::derivative_symbol(grid, {1, 0});
  const auto dy1 = calculus::derivative_symbol(grid, {0, 1});
  std::vector<cplx> inv(lap.size()), su(lap.size()), sv(lap.size());
  for (std::size_t i = 0; i < lap.size(); ++i) {
    // psi_hat = omega_hat / (4 pi^2 |k|^2) = -omega_hat / lap; zero-mean gauge.
    inv[i] = lap[i] == cplx(0.0) ? cplx(0.0) : -1.0 / lap[i];
    su[i] = dy1[i] * inv[i];
    sv[i] = -dx1[i] * inv[i];
  }
  Velocity out{calculus::apply_symbol(spec, su), calculus::apply_symbol(spec, sv), calculus::apply_symbol(spec, inv)};
  if (bare) {
    const Shape s = omega.shape();
    out = {reshape(out.u, s), reshape(out.v, s), reshape(out.psi, s)};
  }
  return out;
}

DiffArray residual(const PdeSystem& system, const FieldSet& fields) {
  const GridSpec& g = fields.grid;
  const DiffArray& p = fields.prediction;
  calculus::check_field(p, g);
  if (p.extent(0) != system.out_channels || g.dims() != system.spatial_dims) {
    throw ShapeError("residual: " + ad::to_string(p.shape()) + " does not match the layout of " + system.name);
  }
  const auto& c = system.coeff;
  switch (system.id) {
    case SystemId::Consolidation1d:
    case SystemId::Consolidation2d: {
      const DiffArray u = channel(p, 0);
      return sub(dt(u, g), scale(Deriv(u, g).lap(), c.cv));
    }
    case SystemId::AllenCahn: {
      const DiffArray u = channel(p, 0);
      DiffArray r = sub(dt(u, g), scale(Deriv(u, g).d(0, 2), c.epsilon));
      return add(sub(r, u), cube(u));
    }
    case SystemId::Maxwell1d: {
      const DiffArray e = channel(p, 0);
      const DiffArray h = channel(p, 1);
      return stack_channels({add(scale(dt(h, g), c.mu), dx(e, g, 0)), add(scale(dt(e, g), c.epsilon), dx(h, g, 0))});
    }
    case SystemId::Schrodinger1d: {
      const DiffArray u = channel(p, 0);
      const DiffArray v = channel(p, 1);
      const double k = c.hbar * c.hbar / (2.0 * c.mass);
      const DiffArray dens = add(mul(u, u), mul(v, v));
      const DiffArray r1 = add(sub(scale(Deriv(u, g).d(0, 2), k), scale(dt(v, g), c.hbar)), mul(dens, u));
      const DiffArray r2 = add(add(scale(dt(u, g), c.hbar), scale(Deriv(v, g).d(0, 2), k)), mul(dens, v));
      return stack_channels({r1, r2});
    }
    case SystemId::NavierStokes2d: {
      const DiffArray w = channel(p, 0);
      const Velocity vel = velocity_from_vorticity(w, g);
      const Deriv dw(w, g);
      DiffArray r = add(dt(w, g), add(mul(vel.u, dw.d(0, 1)), mul(vel.v, dw.d(1, 1))));
      r = sub(r, scale(dw.lap(), c.viscosity));
      if (c.forcing != 0.0) r = add_scalar(r, -c.forcing);
      return r;
    }
    case SystemId::ShallowWater2d: {
      const DiffArray eta = channel(p, 0);
      const DiffArray u = channel(p, 1);
      const DiffArray v = channel(p, 2);
      const DiffArray hu = mul(eta, u);
      const DiffArray hv = mul(eta, v);
      const DiffArray huv = mul(hu, v);
      const DiffArray pressure = scale(mul(eta, eta), 0.5 * c.gravity);
      const DiffArray r1 = add(dt(eta, g), add(dx(hu, g, 0), dx(hv, g, 1)));
      const DiffArray r2 = sub(add(dt(hu, g), add(dx(add(mul(hu, u), pressure), g, 0), dx(huv, g, 1))),
                               scale(Deriv(u, g).lap(), c.viscosity));
      const DiffArray r3 = sub(add(dt(hv, g), add(dx(huv, g, 0), dx(add(mul(hv, v), pressure), g, 1))),
                               scale(Deriv(v, g).lap(), c.viscosity));
      return stack_channels({r1, r2, r3});
    }
  }
  throw ConfigError("unhandled system");
}

DiffArray initial_state(const PdeSystem& system, std::span<const double> a0) {
  std::size_t n = 1;
  for (auto e : system.train_grid.spatial) n *= e;
  if (a0.size() != n) {
    throw ShapeError("initial field has " + std::to_string(a0.size()) + " values, grid needs " + std::to_string(n));
  }
  // Auxiliary channels start at rest: Maxwell H = 0, Schrodinger v = 0,
  // shallow-water u = v = 0.
  std::vector<double> state(system.out_channels * n, 0.0);
  std::copy(a0.begin(), a0.end(), state.begin());
  Shape s{system.out_channels};
  s.insert(s.end(), system.train_grid.spatial.begin(), system.train_grid.spatial.end());
  return DiffArray(std::move(s), std::move(state));
}

DiffArray ic_loss(const PdeSystem& system, const FieldSet& fields, std::span<const double> a0) {
  calculus::check_field(fields.prediction, fields.grid);
  PdeSystem on_grid = system;
  on_grid.train_grid = fields.grid;
  const DiffArray frame0 = select(fields.prediction, fields.grid.time_axis(), 0);
  return mean_square(sub(frame0, initial_state(on_grid, a0)));
}

DiffArray bc_loss(const PdeSystem& system, const FieldSet& fields) {
  if (!system.bc_loss_enabled || !fields.boundary_gap) return DiffArray::scalar(0.0);
  return mean_square(*fields.boundary_gap);
}

DiffArray condition_loss(const PdeSystem& system, const FieldSet& fields, std::span<const double> a0) {
  return add(ic_loss(system, fields, a0), bc_loss(system, fields));
}

DiffArray pde_loss(const PdeSystem& system, const FieldSet& fields) {
  return mean_square(residual(system, fields));
}

LossTerms total_loss(const PdeSystem& system, const FieldSet& fields, std::span<const double> a0,
                     const LossWeights& weights) {
  LossTerms t;
  t.ic = ic_loss(system, fields, a0);
  t.bc = bc_loss(system, fields);
  t.pde = pde_loss(system, fields);
  t.total = add(scale(add(t.ic, t.bc), weights.alpha), scale(t.pde, weights.beta));
  return t;
}

}  // namespace pipno::pde
