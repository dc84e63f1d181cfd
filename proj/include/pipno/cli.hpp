#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pipno/diffcore/params.hpp"
#include "pipno/model.hpp"
#include "pipno/pdezoo.hpp"
#include "pipno/train.hpp"

namespace pipno::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Key-value text (configs and manifests): one `key = value` per line, `#`
// starts a comment. Order is kept on write.

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const fs::path& path);
std::string format_key_values(const KeyValues& kv);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Dataset container (PFDS, little-endian):
//   "PFDS" | u32 version | u32 name length | name | u64 n_samples | u64 channels
//   | u64 spatial rank | u64 extents... | u64 frames | u8 has_reference
//   then per sample: f64 initial[prod(extents)]
//                    f64 reference[channels * prod(extents) * frames] if present

struct DatasetHeader {
  std::string system;
  std::uint64_t n_samples = 0;
  std::uint64_t channels = 0;
  std::vector<std::uint64_t> spatial;
  std::uint64_t frames = 0;
  bool has_reference = false;

  std::size_t ic_size() const;
  std::size_t reference_size() const;
};

struct Dataset {
  DatasetHeader header;
  std::vector<std::vector<double>> initial;
  /// Empty unless header.has_reference. Layout [channels, spatial..., frames].
  std::vector<ad::DiffArray> reference;
};

void write_dataset(const fs::path& path, const Dataset& data);
DatasetHeader read_dataset_header(const fs::path& path);
Dataset read_dataset(const fs::path& path);
/// Training-side reader: seeks over reference payloads without reading them.
train::InitialConditions read_initial_conditions(const fs::path& path, DatasetHeader* header = nullptr);

/// Sidecar manifest path: `<dataset>.manifest.txt`.
fs::path dataset_manifest_path(const fs::path& dataset);

// ---------------------------------------------------------------------------
// Checkpoint (PIPN): "PIPN" | u32 version | u64 config length | config text
// | u64 tensor count | per tensor: u32 path length | path | u8 complex
// | u64 rank | u64 extents... | f64 raw values

struct Checkpoint {
  std::string config_text;
  ad::ParamSet params;
};

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

// ---------------------------------------------------------------------------
// Run configuration. Keys mirror the descriptor, model and training fields:
//   system, grid (e.g. "64" or "64,64"), frames, mode, width, modes, blocks,
//   xi1, xi2, epochs, batch_size, lr0, decay, period, alpha, beta, n_train,
//   n_test, seed, clip_norm, adam_beta1, adam_beta2, adam_eps.
// Missing keys take the system defaults; grid and frames default to the
// training dataset's.

struct RunConfig {
  pde::PdeSystem system;
  model::ModelConfig model;
  train::TrainConfig train;
};

/// Resolves `kv` against an optional dataset header. Throws ConfigError on
/// unknown keys, bad values or a grid that disagrees with the dataset.
RunConfig resolve_run_config(const KeyValues& kv, const DatasetHeader* data = nullptr);
/// Canonical text with every key set; resolve_run_config reads it back.
KeyValues run_config_values(const RunConfig& config);

/// "PIPNO", "PIFNO" or "MLP".
std::string model_label(model::Mode mode);

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit code.

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

/// Worker count: PIPNO_THREADS if set, otherwise the hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n) on thread_count() workers. Results must be
/// written per index; the first failure by index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

struct GenOptions {
  std::string system;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  /// First GRF stream index, so train and test sets can share a seed.
  std::uint64_t first = 0;
  fs::path out;
  bool with_reference = false;
  std::vector<std::size_t> grid;
  std::size_t frames = 0;
};

struct TrainOptions {
  fs::path config;
  fs::path data;
  fs::path out;
  bool quiet = false;
};

struct EvalOptions {
  fs::path run;
  fs::path data;
  fs::path report;
};

struct PlotOptions {
  fs::path input;
  fs::path run;
  std::size_t sample = 0;
  std::optional<std::size_t> frame;
  std::size_t channel = 0;
  fs::path out;
  std::string format = "both";
};

void cmd_gen(const GenOptions& o);
void cmd_train(const TrainOptions& o);
void cmd_eval(const EvalOptions& o);
void cmd_diffstudy(const fs::path& out);
void cmd_plot(const PlotOptions& o);

/// Parses argv, dispatches, and maps exceptions to exit codes.
int run(int argc, char** argv);

// Run directory layout.
inline constexpr const char* kCheckpointFile = "checkpoint.pipn";
inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kHistoryFile = "loss_history.csv";

inline constexpr const char* kMetricsHeader = "system,n_test,rl2e_mean,rl2e_std,mae_mean,mae_std,rmse_mean,rmse_std";
inline constexpr const char* kHistoryHeader = "epoch,lr,loss_total,loss_ic,loss_bc,loss_pde";
inline constexpr const char* kDiffstudyHeader = "n,forward_euler_max_err,fourier_max_err";

}  // namespace pipno::cli
