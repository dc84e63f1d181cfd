#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pipno/diffcore/array.hpp"
#include "pipno/diffcore/tape.hpp"

namespace pipno::ad {

/// Gradient per parameter path, interleaved (re, im) for complex parameters.
using GradientMap = std::map<std::string, std::vector<double>>;

/// Named parameters, ordered by path ("branch/block/weight").
class ParamSet {
 public:
  void insert(const std::string& path, DiffArray value);
  void assign(const std::string& path, DiffArray value);

  const DiffArray& at(const std::string& path) const;
  bool contains(const std::string& path) const { return params_.contains(path); }

  std::size_t tensor_count() const noexcept { return params_.size(); }
  /// Number of real scalars (complex entries count twice).
  std::size_t scalar_count() const;

  /// Copy whose arrays are leaves on `tape`.
  ParamSet watch(Tape& tape) const;
  ParamSet detached() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, DiffArray> params_;
};

/// Reverse-mode gradient of a real scalar loss with respect to every tracked
/// parameter in `params`. Consumes the tape. Parameters the loss does not
/// depend on receive zeros.
GradientMap backward(const DiffArray& loss, const ParamSet& params);

/// Vector-Jacobian product of `f` at `x` against the cotangent `out_grad`
/// (interleaved doubles for complex outputs).
std::vector<double> vjp(const std::function<DiffArray(const DiffArray&)>& f, const DiffArray& x,
                        const std::vector<double>& out_grad);

struct GradCheckOptions {
  double step = 1e-8;
  std::size_t samples_per_tensor = 4;
  std::uint64_t seed = 0;
  /// Richardson-combine the central differences at h and h/2 (fourth order),
  /// so a larger step can be used without truncation error.
  bool extrapolate = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_path;
  std::size_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

/// Compares reverse-mode gradients with central differences on sampled
/// coordinates of every parameter tensor. The relative error of a coordinate is
/// |ad - fd| / max(|ad|, |fd|, 1e-12). Each tensor is probed at its largest-
/// magnitude gradient entry plus `samples_per_tensor` seeded random entries.
GradCheckResult grad_check(const std::function<DiffArray(const ParamSet&)>& loss_fn,
                           const ParamSet& params, const GradCheckOptions& options = {});

}  // namespace pipno::ad
