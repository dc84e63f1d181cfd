#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <set>
#include <thread>

#include "pipno/cli.hpp"
#include "pipno/errors.hpp"

namespace pipno::cli {
namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "system", "grid",  "frames", "mode",    "width",   "modes",     "blocks",     "xi1",
      "xi2",    "epochs", "batch_size", "lr0", "decay", "period",    "alpha",      "beta",
      "n_train", "n_test", "seed",  "clip_norm", "adam_beta1", "adam_beta2", "adam_eps"};
  return keys;
}

const std::string* find(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::uint64_t to_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a finite number, got '" + s + "'");
  }
  return v;
}

std::vector<std::size_t> to_extents(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t begin = 0;
  while (begin <= s.size()) {
    const auto comma = std::min(s.find(',', begin), s.size());
    out.push_back(to_uint(key, s.substr(begin, comma - begin)));
    begin = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

RunConfig resolve_run_config(const KeyValues& kv, const DatasetHeader* data) {
  for (const auto& [k, _] : kv) {
    if (!known_keys().contains(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  const auto get = [&](const std::string& key) { return find(kv, key); };

  const std::string* name = get("system");
  if (!name && !data) throw ConfigError("config does not name a system");
  const std::string system_name = name ? *name : data->system;
  if (data && data->system != system_name) {
    throw ConfigError("config system '" + system_name + "' does not match dataset system '" + data->system + "'");
  }
  pde::PdeSystem system = pde::make_system(system_name);

  std::vector<std::size_t> grid = system.train_grid.spatial;
  std::size_t frames = system.train_grid.frames;
  if (data) {
    grid.assign(data->spatial.begin(), data->spatial.end());
    frames = data->frames;
  }
  if (const auto* v = get("grid")) {
    auto g = to_extents("grid", *v);
    if (g.size() == 1 && system.spatial_dims == 2) g.push_back(g.front());
    if (data && g != grid) throw ConfigError("config grid " + join(g) + " does not match dataset grid " + join(grid));
    grid = std::move(g);
  }
  if (const auto* v = get("frames")) {
    const auto f = to_uint("frames", *v);
    if (data && f != frames) {
      throw ConfigError("config frames " + std::to_string(f) + " do not match dataset frames " + std::to_string(frames));
    }
    frames = f;
  }
  if (grid.size() != system.spatial_dims || frames == 0 ||
      std::any_of(grid.begin(), grid.end(), [](std::size_t e) { return e == 0; })) {
    throw ConfigError("grid must have " + std::to_string(system.spatial_dims) + " positive extents and positive frames");
  }
  system = pde::with_grid(std::move(system), grid, frames);

  const model::Mode mode = model::parse_mode(get("mode") ? *get("mode") : "pipno");
  const auto defaults = model::default_config(system, mode);
  const std::size_t width = get("width") ? to_uint("width", *get("width")) : defaults.width;
  const std::size_t modes = get("modes") ? to_uint("modes", *get("modes")) : defaults.modes;
  model::ModelConfig mc = model::scaled_config(system, width, modes, mode);
  if (const auto* v = get("blocks")) mc.blocks = to_uint("blocks", *v);
  if (const auto* v = get("xi1")) mc.xi1 = to_double("xi1", *v);
  if (const auto* v = get("xi2")) mc.xi2 = to_double("xi2", *v);
  model::validate(mc, system.train_grid);

  train::TrainConfig tc = train::default_config(system);
  const auto set_uint = [&](const char* key, std::size_t& field) {
    if (const auto* v = get(key)) field = to_uint(key, *v);
  };
  const auto set_double = [&](const char* key, double& field) {
    if (const auto* v = get(key)) field = to_double(key, *v);
  };
  set_uint("epochs", tc.epochs);
  set_uint("batch_size", tc.batch_size);
  set_uint("period", tc.period);
  set_uint("n_test", tc.n_test);
  set_double("lr0", tc.lr0);
  set_double("decay", tc.decay);
  set_double("alpha", tc.weights.alpha);
  set_double("beta", tc.weights.beta);
  set_double("adam_beta1", tc.adam_beta1);
  set_double("adam_beta2", tc.adam_beta2);
  set_double("adam_eps", tc.adam_eps);
  if (const auto* v = get("seed")) tc.seed = to_uint("seed", *v);
  if (const auto* v = get("clip_norm")) tc.clip_norm = to_double("clip_norm", *v);
  if (data) tc.n_train = data->n_samples;
  if (const auto* v = get("n_train")) {
    const auto n = to_uint("n_train", *v);
    if (data && n > data->n_samples) {
      throw ConfigError("n_train = " + std::to_string(n) + " but the dataset holds " +
                        std::to_string(data->n_samples) + " samples");
    }
    tc.n_train = n;
  }
  train::validate(tc);
  return {std::move(system), mc, tc};
}

KeyValues run_config_values(const RunConfig& c) {
  KeyValues kv{
      {"system", c.system.name},
      {"grid", join(c.system.train_grid.spatial)},
      {"frames", std::to_string(c.system.train_grid.frames)},
      {"mode", std::string(model::mode_name(c.model.mode))},
      {"width", std::to_string(c.model.width)},
      {"modes", std::to_string(c.model.modes)},
      {"blocks", std::to_string(c.model.blocks)},
      {"xi1", format_double(c.model.xi1)},
      {"xi2", format_double(c.model.xi2)},
      {"epochs", std::to_string(c.train.epochs)},
      {"batch_size", std::to_string(c.train.batch_size)},
      {"lr0", format_double(c.train.lr0)},
      {"decay", format_double(c.train.decay)},
      {"period", std::to_string(c.train.period)},
      {"alpha", format_double(c.train.weights.alpha)},
      {"beta", format_double(c.train.weights.beta)},
      {"n_train", std::to_string(c.train.n_train)},
      {"n_test", std::to_string(c.train.n_test)},
      {"seed", std::to_string(c.train.seed)},
      {"adam_beta1", format_double(c.train.adam_beta1)},
      {"adam_beta2", format_double(c.train.adam_beta2)},
      {"adam_eps", format_double(c.train.adam_eps)},
  };
  if (c.train.clip_norm) kv.emplace_back("clip_norm", format_double(*c.train.clip_norm));
  return kv;
}

std::string model_label(model::Mode mode) {
  switch (mode) {
    case model::Mode::Pipno: return "PIPNO";
    case model::Mode::FourierOnly: return "PIFNO";
    case model::Mode::MlpOnly: return "MLP";
  }
  return "?";
}

std::size_t thread_count() {
  if (const char* env = std::getenv("PIPNO_THREADS")) {
    const std::string s(env);
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v == 0) {
      throw ConfigError("PIPNO_THREADS must be a positive integer, got '" + s + "'");
    }
    return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace pipno::cli
