#include "pipno/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pipno/errors.hpp"
#include "pipno/random.hpp"

namespace pipno::train {
namespace {

// Keeps the shuffle stream apart from the parameter-initialization streams.
constexpr std::uint64_t kShuffleSalt = 0x53485546464c45ULL;

bool finite(double v) { return std::isfinite(v); }

}  // namespace

TrainConfig default_config(const pde::PdeSystem& system) {
  TrainConfig c;
  if (system.spatial_dims == 2) {
    c.epochs = 200;
    c.batch_size = 10;
    c.period = 25;
    c.n_train = 500;
    c.n_test = 50;
  }
  return c;
}

void validate(const TrainConfig& c) {
  if (c.batch_size == 0 || c.period == 0 || c.n_train == 0 || c.n_test == 0) {
    throw ConfigError("batch size, decay period and sample counts must be positive");
  }
  if (!(c.lr0 > 0.0) || !(c.decay > 0.0) || c.decay > 1.0) throw ConfigError("invalid learning-rate schedule");
  if (c.clip_norm && !(*c.clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
}

double lr_at_epoch(const TrainConfig& c, std::size_t epoch) {
  return c.lr0 * std::pow(c.decay, static_cast<double>(epoch / c.period));
}

void adam_step(ad::ParamSet& params, const ad::GradientMap& grads, AdamState& state, double lr,
               const AdamOptions& o) {
  for (const auto& [path, g] : grads) {
    if (!std::all_of(g.begin(), g.end(), finite)) throw NumericError("non-finite gradient for parameter " + path);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (const auto& [path, g] : grads) {
    const auto& p = params.at(path);
    if (g.size() != p.raw().size()) throw ShapeError("gradient for " + path + " has the wrong size");
    auto& m = state.m[path];
    auto& v = state.v[path];
    m.resize(g.size(), 0.0);
    v.resize(g.size(), 0.0);
    std::vector<double> theta(p.raw().begin(), p.raw().end());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
    }
    params.assign(path, ad::DiffArray::from_raw(p.shape(), p.dtype(), std::move(theta)));
  }
}

TrainResult train(const model::ModelConfig& mc, const ad::ParamSet& init, const pde::PdeSystem& system,
                  const InitialConditions& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  model::validate(mc, system.train_grid);
  TrainResult result{init.detached(), {}};
  if (config.epochs == 0) return result;
  const std::size_t n = data.fields.size();
  if (n == 0) throw ConfigError("training set is empty");
  const AdamOptions adam{config.adam_beta1, config.adam_beta2, config.adam_eps};
  AdamState state;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng::Stream shuffle(config.seed ^ kShuffleSalt, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    const double lr = lr_at_epoch(config, epoch);
    EpochLoss record{epoch, lr, 0.0, 0.0, 0.0, 0.0};

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      ad::GradientMap batch;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& a0 = data.fields[order[k]];
        ad::Tape tape;
        const ad::ParamSet watched = result.params.watch(tape);
        const auto fields = model::forward(mc, watched, a0, system.train_grid);
        const auto terms = pde::total_loss(system, fields, a0, config.weights);
        const double total = terms.total.item();
        if (!std::isfinite(total)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / config.batch_size) + ", sample " + std::to_string(order[k]));
        }
        record.total += total;
        record.ic += terms.ic.item();
        record.bc += terms.bc.item();
        record.pde += terms.pde.item();
        auto grads = ad::backward(terms.total, watched);
        for (auto& [path, g] : grads) {
          auto& acc = batch[path];
          if (acc.empty()) acc.assign(g.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * inv_b;
        }
      }
      if (config.clip_norm) {
        double sq = 0.0;
        for (const auto& [_, g] : batch) {
          for (double v : g) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > *config.clip_norm) {
          const double f = *config.clip_norm / norm;
          for (auto& [_, g] : batch) {
            for (double& v : g) v *= f;
          }
        }
      }
      adam_step(result.params, batch, state, lr, adam);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    record.total *= inv_n;
    record.ic *= inv_n;
    record.bc *= inv_n;
    record.pde *= inv_n;
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return result;
}

SampleMetrics sample_metrics(std::span<const double> pred, std::span<const double> ref) {
  if (pred.size() != ref.size() || ref.empty()) throw ShapeError("prediction and reference sizes differ");
  double diff2 = 0.0, ref2 = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = pred[i] - ref[i];
    diff2 += d * d;
    ref2 += ref[i] * ref[i];
    abs_sum += std::abs(d);
  }
  if (ref2 == 0.0) throw NumericError("RL2E is undefined for an all-zero reference");
  const double nf = static_cast<double>(ref.size());
  return {std::sqrt(diff2 / ref2), abs_sum / nf, std::sqrt(diff2 / nf)};
}

MetricsReport aggregate(std::vector<SampleMetrics> samples) {
  MetricsReport r;
  r.samples = std::move(samples);
  if (r.samples.empty()) return r;
  const double n = static_cast<double>(r.samples.size());
  auto stats = [&](double SampleMetrics::*field, double& mean, double& sd) {
    double s = 0.0;
    for (const auto& m : r.samples) s += m.*field;
    mean = s / n;
    double q = 0.0;
    for (const auto& m : r.samples) q += (m.*field - mean) * (m.*field - mean);
    sd = std::sqrt(q / n);
  };
  stats(&SampleMetrics::rl2e, r.rl2e_mean, r.rl2e_std);
  stats(&SampleMetrics::mae, r.mae_mean, r.mae_std);
  stats(&SampleMetrics::rmse, r.rmse_mean, r.rmse_std);
  return r;
}

Predictor model_predictor(const model::ModelConfig& mc, const ad::ParamSet& params, const pde::PdeSystem& system) {
  return [mc, p = params.detached(), system](std::span<const double> a0) {
    return model::forward(mc, p, a0, system.train_grid).prediction;
  };
}

MetricsReport evaluate_metrics(const Predictor& predict, std::span<const std::vector<double>> initial,
                               std::span<const ad::DiffArray> references) {
  if (initial.size() != references.size()) throw ShapeError("every test sample needs a reference");
  std::vector<SampleMetrics> samples;
  samples.reserve(initial.size());
  for (std::size_t i = 0; i < initial.size(); ++i) {
    const ad::DiffArray pred = predict(initial[i]);
    if (pred.shape() != references[i].shape()) {
      throw ShapeError("prediction " + ad::to_string(pred.shape()) + " does not match reference " +
                       ad::to_string(references[i].shape()));
    }
    samples.push_back(sample_metrics(pred.raw(), references[i].raw()));
  }
  return aggregate(std::move(samples));
}

}  // namespace pipno::train
