#include "pipno/diffcore/tape.hpp"

#include "pipno/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pipno::ad {
namespace {

// Tape buffers are large and short-lived. Keep them on the heap instead of
// fresh mmap regions so each training step does not page-fault them in again.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();

}  // namespace

std::string_view name_of(Primitive p) {
  switch (p) {
    case Primitive::Leaf: return "leaf";
    case Primitive::ChannelLinear: return "channel_linear";
    case Primitive::Gelu: return "gelu";
    case Primitive::Add: return "add";
    case Primitive::Sub: return "sub";
    case Primitive::Mul: return "mul";
    case Primitive::Scale: return "scale";
    case Primitive::AddScalar: return "add_scalar";
    case Primitive::ToComplex: return "to_complex";
    case Primitive::RealPart: return "real_part";
    case Primitive::FftForward: return "fft_forward";
    case Primitive::FftInverse: return "fft_inverse";
    case Primitive::SpectralMultiply: return "spectral_multiply";
    case Primitive::SpectralScale: return "spectral_scale";
    case Primitive::ModeTruncate: return "mode_truncate";
    case Primitive::ModePad: return "mode_pad";
    case Primitive::AxisStencil: return "axis_stencil";
    case Primitive::Select: return "select";
    case Primitive::Stack: return "stack";
    case Primitive::Concat: return "concat";
    case Primitive::Permute: return "permute";
    case Primitive::Reshape: return "reshape";
    case Primitive::Reduce: return "reduce";
  }
  return "unknown";
}

Tape* common_tape(std::span<const DiffArray> inputs) {
  Tape* tape = nullptr;
  for (const auto& x : inputs) {
    if (x.tape() == nullptr) continue;
    if (tape != nullptr && tape != x.tape()) {
      throw Error("primitive inputs are recorded on different tapes");
    }
    tape = x.tape();
  }
  return tape;
}

DiffArray Tape::watch(const DiffArray& value) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{Primitive::Leaf, {}, value.raw().size(), nullptr});
  return value.attached(this, id);
}

DiffArray Tape::record(Primitive op, std::span<const DiffArray> inputs, DiffArray output,
                       Backward backward) {
  bool any = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  constexpr std::size_t kUntracked = static_cast<std::size_t>(-1);
  for (const auto& x : inputs) {
    if (x.tape() == this) {
      ids.push_back(*x.node_id());
      any = true;
    } else {
      ids.push_back(kUntracked);
    }
  }
  if (!any) return output.detach();
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{op, std::move(ids), output.raw().size(), std::move(backward)});
  return output.attached(this, id);
}

std::vector<std::vector<double>> Tape::sweep(std::size_t root, std::span<const double> seed) const {
  if (root >= nodes_.size()) throw Error("backward root is not on this tape");
  if (seed.size() != nodes_[root].grad_len) {
    throw ShapeError("backward seed has " + std::to_string(seed.size()) + " entries, node has " +
                     std::to_string(nodes_[root].grad_len));
  }
  constexpr std::size_t kUntracked = static_cast<std::size_t>(-1);
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[root].assign(seed.begin(), seed.end());

  std::vector<std::span<double>> slots;
  for (std::size_t id = root + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads[id].empty() || !node.backward) continue;
    slots.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (in == kUntracked) continue;
      if (grads[in].empty()) grads[in].assign(nodes_[in].grad_len, 0.0);
      slots[k] = grads[in];
    }
    node.backward(grads[id], slots);
    // Intermediate cotangents are dead once propagated; leaves are kept.
    if (id != root) {
      std::vector<double>().swap(grads[id]);
    }
  }
  return grads;
}

}  // namespace pipno::ad
