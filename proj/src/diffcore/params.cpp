#include "pipno/diffcore/params.hpp"

#include <algorithm>
#include <cmath>

#include "pipno/errors.hpp"
#include "pipno/random.hpp"

namespace pipno::ad {

void ParamSet::insert(const std::string& path, DiffArray value) {
  if (!params_.emplace(path, std::move(value)).second) {
    throw ConfigError("duplicate parameter path " + path);
  }
}

void ParamSet::assign(const std::string& path, DiffArray value) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter path " + path);
  if (it->second.shape() != value.shape() || it->second.dtype() != value.dtype()) {
    throw ShapeError("parameter " + path + " expects " + to_string(it->second.shape()) + ", got " +
                     to_string(value.shape()));
  }
  it->second = std::move(value);
}

const DiffArray& ParamSet::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter path " + path);
  return it->second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.raw().size();
  return n;
}

ParamSet ParamSet::watch(Tape& tape) const {
  ParamSet out;
  for (const auto& [path, p] : params_) out.params_.emplace(path, tape.watch(p.detach()));
  return out;
}

ParamSet ParamSet::detached() const {
  ParamSet out;
  for (const auto& [path, p] : params_) out.params_.emplace(path, p.detach());
  return out;
}

GradientMap backward(const DiffArray& loss, const ParamSet& params) {
  if (loss.is_complex() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a real scalar, got " + to_string(loss.shape()));
  }
  GradientMap out;
  Tape* tape = loss.tape();
  std::vector<std::vector<double>> grads;
  if (tape != nullptr) {
    const double seed = 1.0;
    grads = tape->sweep(*loss.node_id(), std::span<const double>(&seed, 1));
  }
  for (const auto& [path, p] : params) {
    std::vector<double> g;
    if (tape != nullptr && p.tape() == tape) g = std::move(grads[*p.node_id()]);
    if (g.empty()) g.assign(p.raw().size(), 0.0);
    out.emplace(path, std::move(g));
  }
  if (tape != nullptr) tape->reset();
  return out;
}

std::vector<double> vjp(const std::function<DiffArray(const DiffArray&)>& f, const DiffArray& x,
                        const std::vector<double>& out_grad) {
  Tape tape;
  const DiffArray leaf = tape.watch(x.detach());
  const DiffArray y = f(leaf);
  if (out_grad.size() != y.raw().size()) {
    throw ShapeError("vjp: cotangent has " + std::to_string(out_grad.size()) + " entries, output has " +
                     std::to_string(y.raw().size()));
  }
  if (y.tape() != &tape) return std::vector<double>(x.raw().size(), 0.0);
  auto grads = tape.sweep(*y.node_id(), out_grad);
  auto g = std::move(grads[*leaf.node_id()]);
  if (g.empty()) g.assign(x.raw().size(), 0.0);
  return g;
}

namespace {

double loss_with(const std::function<DiffArray(const ParamSet&)>& loss_fn, const ParamSet& base,
                 const std::string& path, std::size_t index, double value) {
  ParamSet probe = base;
  const DiffArray& p = base.at(path);
  std::vector<double> raw(p.raw().begin(), p.raw().end());
  raw[index] = value;
  probe.assign(path, DiffArray::from_raw(p.shape(), p.dtype(), std::move(raw)));
  return loss_fn(probe).item();
}

}  // namespace

GradCheckResult grad_check(const std::function<DiffArray(const ParamSet&)>& loss_fn,
                           const ParamSet& params, const GradCheckOptions& options) {
  const ParamSet base = params.detached();
  GradientMap grads;
  {
    Tape tape;
    const ParamSet watched = base.watch(tape);
    grads = backward(loss_fn(watched), watched);
  }
  GradCheckResult result;
  std::uint64_t tensor = 0;
  for (const auto& [path, p] : base) {
    const auto& g = grads.at(path);
    const auto raw = p.raw();
    ++tensor;
    if (raw.empty()) continue;
    std::vector<std::size_t> picks;
    const auto argmax = std::max_element(g.begin(), g.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    });
    picks.push_back(static_cast<std::size_t>(argmax - g.begin()));
    rng::Stream stream(options.seed, tensor);
    for (std::size_t s = 0; s < options.samples_per_tensor; ++s) {
      picks.push_back(static_cast<std::size_t>(stream.below(raw.size())));
    }
    for (auto idx : picks) {
      const double h = options.step * std::max(1.0, std::abs(raw[idx]));
      auto central = [&](double step) {
        const double up = loss_with(loss_fn, base, path, idx, raw[idx] + step);
        const double down = loss_with(loss_fn, base, path, idx, raw[idx] - step);
        return (up - down) / (2.0 * step);
      };
      const double coarse = central(h);
      const double fd = options.extrapolate ? (4.0 * central(0.5 * h) - coarse) / 3.0 : coarse;
      const double ad = g[idx];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-12});
      ++result.coordinates_checked;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_path = path;
        result.worst_index = idx;
        result.worst_autodiff = ad;
        result.worst_numeric = fd;
      }
    }
  }
  return result;
}

}  // namespace pipno::ad
