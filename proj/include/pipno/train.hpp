#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pipno/diffcore/params.hpp"
#include "pipno/model.hpp"
#include "pipno/pdezoo.hpp"

namespace pipno::train {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 20;
  double lr0 = 1e-3;
  double decay = 0.5;
  std::size_t period = 100;
  pde::LossWeights weights{};
  std::size_t n_train = 1000;
  std::size_t n_test = 100;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; off unless set.
  std::optional<double> clip_norm;
};

/// 1D: 500 epochs, batch 20, period 100, 1000:100 samples.
/// 2D: 200 epochs, batch 10, period 25, 500:50 samples.
TrainConfig default_config(const pde::PdeSystem& system);

void validate(const TrainConfig& config);

/// lr0 * decay^floor(epoch / period).
double lr_at_epoch(const TrainConfig& config, std::size_t epoch);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter in `grads`. Throws
/// NumericError naming the parameter on a non-finite gradient.
void adam_step(ad::ParamSet& params, const ad::GradientMap& grads, AdamState& state, double lr,
               const AdamOptions& options = {});

/// Training inputs: initial fields only. There is deliberately no way to pass
/// reference solutions into the training path.
struct InitialConditions {
  std::vector<std::vector<double>> fields;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double ic = 0.0;
  double bc = 0.0;
  double pde = 0.0;
};

struct TrainResult {
  ad::ParamSet params;
  std::vector<EpochLoss> history;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

TrainResult train(const model::ModelConfig& model, const ad::ParamSet& init, const pde::PdeSystem& system,
                  const InitialConditions& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct SampleMetrics {
  double rl2e = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
};

/// Full-field metrics over all channels. Throws NumericError when ||reference|| = 0.
SampleMetrics sample_metrics(std::span<const double> prediction, std::span<const double> reference);

struct MetricsReport {
  std::vector<SampleMetrics> samples;
  double rl2e_mean = 0.0, rl2e_std = 0.0;
  double mae_mean = 0.0, mae_std = 0.0;
  double rmse_mean = 0.0, rmse_std = 0.0;
};

/// Mean and population standard deviation of per-sample metrics.
MetricsReport aggregate(std::vector<SampleMetrics> samples);

/// Produces a prediction [channels, spatial..., frames] for one initial field.
using Predictor = std::function<ad::DiffArray(std::span<const double> a0)>;

Predictor model_predictor(const model::ModelConfig& model, const ad::ParamSet& params, const pde::PdeSystem& system);

/// One test sample at a time. `references[i]` holds the frames for `initial[i]`.
MetricsReport evaluate_metrics(const Predictor& predict, std::span<const std::vector<double>> initial,
                               std::span<const ad::DiffArray> references);

}  // namespace pipno::train
