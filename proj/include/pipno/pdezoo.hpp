#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pipno/calculus.hpp"
#include "pipno/diffcore/array.hpp"
#include "pipno/grf.hpp"

namespace pipno::pde {

using ad::DiffArray;
using calculus::GridSpec;

enum class SystemId {
  Consolidation1d,
  Consolidation2d,
  AllenCahn,
  Maxwell1d,
  Schrodinger1d,
  NavierStokes2d,
  ShallowWater2d,
};

/// Physical constants; unused entries stay zero for a given system.
struct Coefficients {
  double cv = 0.0;         // consolidation coefficient C_v
  double epsilon = 0.0;    // Allen-Cahn interface width, or permittivity (Maxwell)
  double mu = 0.0;         // permeability (Maxwell)
  double rho_f = 0.0;      // free charge density (Maxwell)
  double j_f = 0.0;        // free current density (Maxwell)
  double hbar = 0.0;       // Schrodinger
  double mass = 0.0;       // Schrodinger; potential V = -|psi|^2
  double viscosity = 0.0;  // Navier-Stokes / shallow water
  double forcing = 0.0;    // Navier-Stokes source f
  double gravity = 0.0;    // shallow water g
};

struct PdeSystem {
  SystemId id;
  std::string name;
  std::size_t spatial_dims;
  std::size_t out_channels;
  std::vector<std::string> channel_names;
  Coefficients coeff;
  double horizon;
  GridSpec train_grid;
  grf::GrfSpec grf;
  bool bc_loss_enabled;
  /// Added to GRF samples to form the initial field (shallow-water mean depth).
  double ic_offset = 0.0;
  /// Reference-solver step.
  double solver_dt;

  std::size_t residual_channels() const;
};

const std::vector<std::string>& system_names();
/// Descriptor with the full-scale defaults. Throws ConfigError on an unknown name.
PdeSystem make_system(std::string_view name);
/// Same system on another grid (the horizon is kept).
PdeSystem with_grid(PdeSystem system, std::vector<std::size_t> spatial, std::size_t frames);

/// Model output in the layout [channels, spatial..., frames]. `boundary_gap`
/// holds the periodicity mismatch exposed by the model, if any.
struct FieldSet {
  DiffArray prediction;
  GridSpec grid;
  std::optional<DiffArray> boundary_gap;
};

/// One channel per governing equation, same layout as the prediction.
DiffArray residual(const PdeSystem& system, const FieldSet& fields);

struct Velocity {
  DiffArray u;
  DiffArray v;
  DiffArray psi;
};

/// Stream function and velocities of a periodic vorticity field. Accepts
/// [x, y, frames] or [1, x, y, frames] and returns arrays of the same rank.
Velocity velocity_from_vorticity(const DiffArray& omega, const GridSpec& grid);

/// Full initial state [channels, spatial...] for the first-channel field a0.
DiffArray initial_state(const PdeSystem& system, std::span<const double> a0);

DiffArray ic_loss(const PdeSystem& system, const FieldSet& fields, std::span<const double> a0);
/// Zero unless the system enables it and the fields carry a boundary gap.
DiffArray bc_loss(const PdeSystem& system, const FieldSet& fields);
DiffArray condition_loss(const PdeSystem& system, const FieldSet& fields, std::span<const double> a0);
DiffArray pde_loss(const PdeSystem& system, const FieldSet& fields);

struct LossWeights {
  double alpha = 5.0;
  double beta = 2.0;
};

struct LossTerms {
  DiffArray ic;
  DiffArray bc;
  DiffArray pde;
  DiffArray total;
};

/// alpha * (ic + bc) + beta * pde, with each term kept for reporting.
LossTerms total_loss(const PdeSystem& system, const FieldSet& fields, std::span<const double> a0,
                     const LossWeights& weights = {});

}  // namespace pipno::pde
