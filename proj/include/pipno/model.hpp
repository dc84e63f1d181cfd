#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pipno/diffcore/params.hpp"
#include "pipno/pdezoo.hpp"

namespace pipno::model {

using ad::DiffArray;
using ad::ParamSet;
using calculus::GridSpec;

enum class Mode { Pipno, FourierOnly, MlpOnly };

std::string_view mode_name(Mode mode);
/// "pipno", "fourier_only" or "mlp_only"; ConfigError otherwise.
Mode parse_mode(std::string_view name);

struct ModelConfig {
  std::size_t spatial_dims = 1;
  std::size_t in_channels = 3;
  std::size_t out_channels = 1;
  std::size_t width = 64;
  /// Retained modes on every transform axis (spatial: +-modes, time: [0, modes)).
  std::size_t modes = 36;
  std::size_t blocks = 4;
  /// Hidden widths of the pointwise branch.
  std::vector<std::size_t> mlp_hidden = {64, 64, 64, 128, 128};
  /// xi1 weights the pointwise branch, xi2 the Fourier branch.
  double xi1 = 2.0 / 3.0;
  double xi2 = 1.0 / 3.0;
  Mode mode = Mode::Pipno;

  bool has_fourier() const noexcept { return mode != Mode::MlpOnly; }
  bool has_mlp() const noexcept { return mode != Mode::FourierOnly; }
  /// Branch weights after the mode is applied.
  double mlp_weight() const noexcept;
  double fourier_weight() const noexcept;
};

/// Full-size configuration for a system: width 64, 36 modes (1D) or 12 (2D).
ModelConfig default_config(const pde::PdeSystem& system, Mode mode = Mode::Pipno);
/// Same layout with another width and mode count; hidden widths are width * [1, 1, 1, 2, 2].
ModelConfig scaled_config(const pde::PdeSystem& system, std::size_t width, std::size_t modes,
                          Mode mode = Mode::Pipno);

/// Throws ConfigError when the modes do not fit the grid or weights are negative.
void validate(const ModelConfig& config, const GridSpec& grid);

/// Closed-form parameter count (real scalars; complex weights count twice).
std::size_t parameter_count(const ModelConfig& config);

ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

/// Channels [a0 broadcast over frames, t, x(, y)] in the layout [C, spatial..., frames].
DiffArray build_input(std::span<const double> a0, const GridSpec& grid);

DiffArray forward_fourier_branch(const ModelConfig& config, const ParamSet& params, const DiffArray& input,
                                 const GridSpec& grid);
DiffArray forward_mlp_branch(const ModelConfig& config, const ParamSet& params, const DiffArray& input);

/// Combined prediction plus the periodicity gap of the pointwise branch.
pde::FieldSet forward(const ModelConfig& config, const ParamSet& params, std::span<const double> a0,
                      const GridSpec& grid);

}  // namespace pipno::model
