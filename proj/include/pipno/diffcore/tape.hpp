#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "pipno/diffcore/array.hpp"

namespace pipno::ad {

enum class Primitive : std::uint8_t {
  Leaf,
  ChannelLinear,
  Gelu,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  ToComplex,
  RealPart,
  FftForward,
  FftInverse,
  SpectralMultiply,
  SpectralScale,
  ModeTruncate,
  ModePad,
  AxisStencil,
  Select,
  Stack,
  Concat,
  Permute,
  Reshape,
  Reduce,
};

std::string_view name_of(Primitive p);

/// Append-only record of primitive applications.
///
/// Node ids are assigned in append order, so every node's inputs have smaller
/// ids than the node itself. A tape must only be used from one thread.
class Tape {
 public:
  /// Adjoint of a primitive: reads the output cotangent and accumulates into
  /// the cotangent slots of its inputs. Slots of untracked inputs are empty.
  using Backward = std::function<void(std::span<const double> out_grad,
                                      std::span<const std::span<double>> in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf (parameter) and returns a tracked copy.
  DiffArray watch(const DiffArray& value);

  /// Records `output` as the result of `op` applied to `inputs`. Returns the
  /// output untouched when no input is tracked on this tape.
  DiffArray record(Primitive op, std::span<const DiffArray> inputs, DiffArray output,
                   Backward backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  Primitive primitive(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Reverse sweep from `root` seeded with `seed`. Visits nodes in reverse
  /// append order, each at most once. Interior cotangents are released once
  /// propagated; the returned vector keeps the root and every reached leaf.
  std::vector<std::vector<double>> sweep(std::size_t root, std::span<const double> seed) const;

  void reset() noexcept { nodes_.clear(); }

 private:
  struct Node {
    Primitive op;
    std::vector<std::size_t> inputs;
    std::size_t grad_len;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Picks the tape shared by the tracked inputs, or nullptr if none is tracked.
/// Throws if tracked inputs live on different tapes.
Tape* common_tape(std::span<const DiffArray> inputs);

}  // namespace pipno::ad
