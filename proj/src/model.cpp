#include "pipno/model.hpp"

#include <cmath>
#include <numeric>

#include "pipno/diffcore/ops.hpp"
#include "pipno/errors.hpp"
#include "pipno/random.hpp"

namespace pipno::model {
namespace {

using namespace ad;

std::string lin(const std::string& prefix, const char* leaf) { return prefix + "/" + leaf; }

std::string block_path(std::size_t b) { return "fourier/block" + std::to_string(b); }
std::string layer_path(std::size_t l) { return "mlp/layer" + std::to_string(l); }

std::vector<std::size_t> mlp_widths(const ModelConfig& c) {
  std::vector<std::size_t> w{c.in_channels};
  w.insert(w.end(), c.mlp_hidden.begin(), c.mlp_hidden.end());
  w.push_back(c.out_channels);
  return w;
}

/// Axes of the retained mode block: spatial axes then time (the half axis).
ModeBlock mode_block(const ModelConfig& c) {
  ModeBlock b;
  for (std::size_t a = 0; a <= c.spatial_dims; ++a) {
    b.axes.push_back(a);
    b.modes.push_back(c.modes);
  }
  b.half_axis = c.spatial_dims;
  return b;
}

Shape spectral_weight_shape(const ModelConfig& c) {
  Shape s;
  for (std::size_t a = 0; a < c.spatial_dims; ++a) s.push_back(2 * c.modes);
  s.push_back(c.modes);
  s.push_back(c.width);
  s.push_back(c.width);
  return s;
}

DiffArray affine(const DiffArray& x, const ParamSet& p, const std::string& prefix) {
  return channel_linear(x, p.at(lin(prefix, "w")), p.at(lin(prefix, "b")));
}

/// [C, spatial..., F] <-> [spatial..., F, C].
std::vector<std::size_t> to_channel_last(std::size_t rank) {
  std::vector<std::size_t> perm(rank);
  std::iota(perm.begin(), perm.end() - 1, 1);
  perm.back() = 0;
  return perm;
}

std::vector<std::size_t> to_channel_first(std::size_t rank) {
  std::vector<std::size_t> perm(rank);
  perm[0] = rank - 1;
  std::iota(perm.begin() + 1, perm.end(), 0);
  return perm;
}

DiffArray mlp_channel_last(const ModelConfig& c, const ParamSet& p, DiffArray v) {
  const std::size_t layers = mlp_widths(c).size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    v = affine(v, p, layer_path(l));
    if (l + 1 < layers) v = gelu(v);
  }
  return v;
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::Pipno:
      return "pipno";
    case Mode::FourierOnly:
      return "fourier_only";
    case Mode::MlpOnly:
      return "mlp_only";
  }
  return "pipno";
}

Mode parse_mode(std::string_view name) {
  if (name == "pipno") return Mode::Pipno;
  if (name == "fourier_only") return Mode::FourierOnly;
  if (name == "mlp_only") return Mode::MlpOnly;
  throw ConfigError("unknown model mode '" + std::string(name) + "'");
}

double ModelConfig::mlp_weight() const noexcept {
  switch (mode) {
    case Mode::FourierOnly:
      return 0.0;
    case Mode::MlpOnly:
      return 1.0;
    default:
      return xi1;
  }
}

double ModelConfig::fourier_weight() const noexcept {
  switch (mode) {
    case Mode::FourierOnly:
      return 1.0;
    case Mode::MlpOnly:
      return 0.0;
    default:
      return xi2;
  }
}

ModelConfig scaled_config(const pde::PdeSystem& system, std::size_t width, std::size_t modes, Mode mode) {
  ModelConfig c;
  c.spatial_dims = system.spatial_dims;
  c.in_channels = system.spatial_dims + 2;
  c.out_channels = system.out_channels;
  c.width = width;
  c.modes = modes;
  c.mlp_hidden = {width, width, width, 2 * width, 2 * width};
  c.mode = mode;
  return c;
}

ModelConfig default_config(const pde::PdeSystem& system, Mode mode) {
  return scaled_config(system, 64, system.spatial_dims == 1 ? 36 : 12, mode);
}

void validate(const ModelConfig& c, const GridSpec& grid) {
  if (grid.dims() != c.spatial_dims) throw ConfigError("model and grid disagree on spatial dimensions");
  if (c.in_channels != c.spatial_dims + 2) throw ConfigError("input channels must be spatial_dims + 2");
  if (c.width == 0 || c.modes == 0 || c.blocks == 0) throw ConfigError("width, modes and blocks must be positive");
  if (!(c.xi1 >= 0.0) || !(c.xi2 >= 0.0)) throw ConfigError("branch weights must be non-negative");
  if (c.has_fourier()) {
    for (std::size_t a = 0; a < grid.dims(); ++a) {
      if (c.modes > grid.spatial[a] / 2) {
        throw ConfigError(std::to_string(c.modes) + " modes exceed the capacity of a " +
                          std::to_string(grid.spatial[a]) + "-point axis");
      }
    }
    if (c.modes > grid.frames / 2) {
      throw ConfigError(std::to_string(c.modes) + " modes exceed the capacity of " + std::to_string(grid.frames) +
                        " frames");
    }
  }
}

std::size_t parameter_count(const ModelConfig& c) {
  std::size_t n = 0;
  if (c.has_fourier()) {
    n += c.in_channels * c.width + c.width;
    n += c.width * c.out_channels + c.out_channels;
    std::size_t block = c.modes;
    for (std::size_t a = 0; a < c.spatial_dims; ++a) block *= 2 * c.modes;
    n += c.blocks * (2 * block * c.width * c.width + c.width * c.width + c.width);
  }
  if (c.has_mlp()) {
    const auto w = mlp_widths(c);
    for (std::size_t i = 0; i + 1 < w.size(); ++i) n += w[i] * w[i + 1] + w[i + 1];
  }
  return n;
}

ParamSet init_params(const ModelConfig& c, std::uint64_t seed) {
  ParamSet p;
  std::uint64_t stream_id = 0;
  auto add_affine = [&](const std::string& prefix, std::size_t fin, std::size_t fout) {
    rng::Stream rng(seed, stream_id++);
    const double bound = std::sqrt(6.0 / static_cast<double>(fin + fout));
    std::vector<double> w(fin * fout);
    for (auto& v : w) v = bound * (2.0 * rng.uniform() - 1.0);
    p.insert(lin(prefix, "w"), DiffArray(Shape{fin, fout}, std::move(w)));
    p.insert(lin(prefix, "b"), DiffArray::zeros(Shape{fout}));
  };
  if (c.has_fourier()) {
    add_affine("fourier/lift", c.in_channels, c.width);
    const Shape rs = spectral_weight_shape(c);
    const double sd = 1.0 / static_cast<double>(c.width * c.width);
    for (std::size_t b = 0; b < c.blocks; ++b) {
      rng::Stream rng(seed, stream_id++);
      std::vector<double> raw(2 * numel(rs));
      for (auto& v : raw) v = sd * rng.normal();
      p.insert(lin(block_path(b), "R"), DiffArray::from_raw(rs, DType::Complex, std::move(raw)));
      add_affine(block_path(b), c.width, c.width);
    }
    add_affine("fourier/project", c.width, c.out_channels);
  }
  if (c.has_mlp()) {
    const auto w = mlp_widths(c);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) add_affine(layer_path(l), w[l], w[l + 1]);
  }
  return p;
}

DiffArray build_input(std::span<const double> a0, const GridSpec& grid) {
  const std::size_t d = grid.dims();
  const std::size_t f = grid.frames;
  const std::size_t pts = grid.points() / f;
  if (a0.size() != pts) {
    throw ShapeError("initial field has " + std::to_string(a0.size()) + " values, grid needs " + std::to_string(pts));
  }
  const auto times = calculus::frame_times(grid);
  std::vector<double> out((d + 2) * pts * f);
  for (std::size_t q = 0; q < pts; ++q) {
    // Row-major spatial index -> coordinates.
    std::size_t rem = q;
    std::vector<double> x(d);
    for (std::size_t a = d; a-- > 0;) {
      x[a] = static_cast<double>(rem % grid.spatial[a]) / static_cast<double>(grid.spatial[a]);
      rem /= grid.spatial[a];
    }
    for (std::size_t j = 0; j < f; ++j) {
      out[q * f + j] = a0[q];
      out[(pts + q) * f + j] = times[j];
      for (std::size_t a = 0; a < d; ++a) out[((2 + a) * pts + q) * f + j] = x[a];
    }
  }
  return DiffArray(grid.field_shape(d + 2), std::move(out));
}

DiffArray forward_fourier_branch(const ModelConfig& c, const ParamSet& p, const DiffArray& input,
                                 const GridSpec& grid) {
  validate(c, grid);
  const std::size_t rank = input.rank();
  DiffArray v = affine(permute(input, to_channel_last(rank)), p, "fourier/lift");
  const ModeBlock block = mode_block(c);
  FftAxes axes;
  axes.axes = block.axes;
  axes.half = true;
  std::vector<std::size_t> spectrum_extents(grid.spatial.begin(), grid.spatial.end());
  spectrum_extents.push_back(grid.frames / 2 + 1);
  for (std::size_t b = 0; b < c.blocks; ++b) {
    DiffArray s = mode_truncate(fft_forward(v, axes), block);
    s = spectral_multiply(s, p.at(lin(block_path(b), "R")));
    s = fft_inverse(mode_pad(s, block, spectrum_extents), axes, grid.frames);
    v = add(s, affine(v, p, block_path(b)));
    if (b + 1 < c.blocks) v = gelu(v);
  }
  v = affine(v, p, "fourier/project");
  return permute(v, to_channel_first(rank));
}

DiffArray forward_mlp_branch(const ModelConfig& c, const ParamSet& p, const DiffArray& input) {
  const std::size_t rank = input.rank();
  return permute(mlp_channel_last(c, p, permute(input, to_channel_last(rank))), to_channel_first(rank));
}

pde::FieldSet forward(const ModelConfig& c, const ParamSet& p, std::span<const double> a0, const GridSpec& grid) {
  validate(c, grid);
  const DiffArray input = build_input(a0, grid);
  pde::FieldSet out{DiffArray(), grid, std::nullopt};
  std::optional<DiffArray> mlp;
  if (c.has_mlp()) mlp = forward_mlp_branch(c, p, input);
  if (c.has_fourier()) {
    const DiffArray fourier = forward_fourier_branch(c, p, input, grid);
    out.prediction = mlp ? add(scale(*mlp, c.mlp_weight()), scale(fourier, c.fourier_weight()))
                         : scale(fourier, c.fourier_weight());
  } else {
    out.prediction = scale(*mlp, c.mlp_weight());
  }
  if (!mlp) return out;

  // Periodicity gap: the pointwise branch at coordinate 1 on each spatial axis,
  // fed with the a0 values of the coordinate-0 face, against its own face at 0.
  std::vector<DiffArray> gaps;
  for (std::size_t a = 0; a < grid.dims(); ++a) {
    const std::size_t axis = GridSpec::array_axis(a);
    DiffArray face = select(input, axis, 0);
    std::vector<double> raw(face.raw().begin(), face.raw().end());
    const std::size_t per_channel = raw.size() / (grid.dims() + 2);
    std::fill(raw.begin() + static_cast<std::ptrdiff_t>((2 + a) * per_channel),
              raw.begin() + static_cast<std::ptrdiff_t>((3 + a) * per_channel), 1.0);
    const DiffArray far_input(face.shape(), std::move(raw));
    const DiffArray far = forward_mlp_branch(c, p, far_input);
    gaps.push_back(scale(sub(far, select(*mlp, axis, 0)), c.mlp_weight()));
  }
  out.boundary_gap = gaps.size() == 1 ? gaps.front() : concat(gaps, 1);
  return out;
}

}  // namespace pipno::model
