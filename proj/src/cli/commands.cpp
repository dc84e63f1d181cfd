#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "pipno/calculus.hpp"
#include "pipno/cli.hpp"
#include "pipno/diffcore/ops.hpp"
#include "pipno/errors.hpp"
#include "pipno/grf.hpp"
#include "pipno/refsolve.hpp"

namespace pipno::cli {
namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string solver_name(const pde::PdeSystem& s) {
  return s.id == pde::SystemId::NavierStokes2d ? "spectral forward Euler, 2/3-rule dealiasing"
                                               : "RK4, periodic central differences";
}

std::string environment_note() {
  std::string note = "compiler ";
#if defined(__VERSION__)
  note += __VERSION__;
#endif
  note += "; gelu " + std::string(ad::gelu_backend());
  return note;
}

void ensure_parent(const fs::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

/// Row-major matrix for plotting.
struct Panel {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

void write_pgm(const fs::path& path, const Panel& p) {
  const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
  const double range = *hi - *lo;
  std::string bytes(p.values.size(), '\0');
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double t = range > 0.0 ? (p.values[i] - *lo) / range : 0.0;
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
  }
  write_text(path, "P5\n" + std::to_string(p.cols) + " " + std::to_string(p.rows) + "\n255\n" + bytes);
}

void write_matrix_csv(const fs::path& path, const Panel& p) {
  std::string out;
  for (std::size_t r = 0; r < p.rows; ++r) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      if (c) out += ',';
      out += format_double(p.values[r * p.cols + c]);
    }
    out += '\n';
  }
  write_text(path, out);
}

/// One channel of a [C, spatial..., F] field: space-time (rows = frames) in 1D,
/// the frame `frame` in 2D.
Panel field_panel(const ad::DiffArray& field, std::size_t channel, std::optional<std::size_t> frame) {
  const auto& shape = field.shape();
  const auto v = field.values();
  if (channel >= shape[0]) {
    throw ConfigError("channel " + std::to_string(channel) + " out of range (" + std::to_string(shape[0]) + " channels)");
  }
  const std::size_t frames = shape.back();
  if (frame && *frame >= frames) {
    throw ConfigError("frame " + std::to_string(*frame) + " out of range (" + std::to_string(frames) + " frames)");
  }
  Panel p;
  if (shape.size() == 3) {
    const std::size_t n = shape[1];
    p.rows = frames;
    p.cols = n;
    p.values.resize(n * frames);
    for (std::size_t j = 0; j < frames; ++j) {
      for (std::size_t x = 0; x < n; ++x) p.values[j * n + x] = v[(channel * n + x) * frames + j];
    }
    if (frame) {
      p.values.assign(p.values.begin() + static_cast<std::ptrdiff_t>(*frame * n),
                      p.values.begin() + static_cast<std::ptrdiff_t>((*frame + 1) * n));
      p.rows = 1;
    }
  } else {
    if (!frame) throw ConfigError("2D fields need --frame");
    const std::size_t nx = shape[1];
    const std::size_t ny = shape[2];
    p.rows = nx;
    p.cols = ny;
    p.values.resize(nx * ny);
    for (std::size_t i = 0; i < nx * ny; ++i) p.values[i] = v[(channel * nx * ny + i) * frames + *frame];
  }
  return p;
}

void emit(const PlotOptions& o, const std::string& name, const Panel& p) {
  fs::path base = o.out;
  base += "_" + name;
  if (o.format == "pgm" || o.format == "both") write_pgm(fs::path(base).replace_extension().string() + ".pgm", p);
  if (o.format == "csv" || o.format == "both") write_matrix_csv(fs::path(base).string() + ".csv", p);
}

struct LoadedRun {
  RunConfig config;
  ad::ParamSet params;
};

LoadedRun load_run(const fs::path& run) {
  Checkpoint ckpt = read_checkpoint(run / kCheckpointFile);
  return {resolve_run_config(parse_key_values(ckpt.config_text)), std::move(ckpt.params)};
}

void check_dataset_matches(const DatasetHeader& h, const pde::PdeSystem& s) {
  const std::vector<std::size_t> grid(h.spatial.begin(), h.spatial.end());
  if (h.system != s.name || grid != s.train_grid.spatial || h.frames != s.train_grid.frames) {
    throw ConfigError("dataset (" + h.system + " on " + join(grid) + " x " + std::to_string(h.frames) +
                      ") does not match the run (" + s.name + " on " + join(s.train_grid.spatial) + " x " +
                      std::to_string(s.train_grid.frames) + ")");
  }
}

}  // namespace

void cmd_gen(const GenOptions& o) {
  pde::PdeSystem system = pde::make_system(o.system);
  if (!o.grid.empty() || o.frames != 0) {
    std::vector<std::size_t> grid = o.grid.empty() ? system.train_grid.spatial : o.grid;
    if (grid.size() == 1 && system.spatial_dims == 2) grid.push_back(grid.front());
    system = pde::with_grid(std::move(system), grid, o.frames != 0 ? o.frames : system.train_grid.frames);
  }
  grf::GrfSpec spec = system.grf;
  spec.seed = o.seed;
  const auto eigenvalues = grf::kernel_eigenvalues(spec);
  const auto solver = refsolve::default_config(system);

  Dataset d;
  d.header.system = system.name;
  d.header.n_samples = o.n;
  d.header.channels = system.out_channels;
  d.header.spatial.assign(system.train_grid.spatial.begin(), system.train_grid.spatial.end());
  d.header.frames = system.train_grid.frames;
  d.header.has_reference = o.with_reference;
  d.initial.resize(o.n);
  if (o.with_reference) d.reference.resize(o.n);
  parallel_for(o.n, [&](std::size_t i) {
    auto a0 = grf::sample_one(spec, eigenvalues, o.first + i);
    for (auto& v : a0) v += system.ic_offset;
    if (o.with_reference) d.reference[i] = refsolve::solve_reference(system, a0, solver);
    d.initial[i] = std::move(a0);
  });
  ensure_parent(o.out);
  write_dataset(o.out, d);

  KeyValues m{
      {"format", "PFDS 1"},
      {"system", system.name},
      {"n_samples", std::to_string(o.n)},
      {"channels", std::to_string(system.out_channels)},
      {"grid", join(system.train_grid.spatial)},
      {"frames", std::to_string(system.train_grid.frames)},
      {"horizon", format_double(system.horizon)},
      {"with_reference", o.with_reference ? "true" : "false"},
      {"grf_sigma", format_double(spec.sigma)},
      {"grf_length_scale", format_double(spec.length_scale)},
      {"grf_nu", "inf"},
      {"grf_seed", std::to_string(o.seed)},
      {"grf_first_index", std::to_string(o.first)},
      {"ic_offset", format_double(system.ic_offset)},
      {"generator", "philox4x32-10, stream (seed, index), box-muller normals"},
      {"solver", o.with_reference ? solver_name(system) : "none"},
      {"solver_dt", format_double(solver.dt)},
      {"frame_dt", format_double(solver.frame_dt)},
      {"dealias", solver.dealias ? "true" : "false"},
      {"sha256", sha256_file(o.out)},
      {"created_by", "pipno gen --system " + o.system + " --n " + std::to_string(o.n) + " --seed " +
                         std::to_string(o.seed) + " --first " + std::to_string(o.first) +
                         (o.with_reference ? " --with-reference" : "")},
      {"environment", environment_note()},
  };
  write_text(dataset_manifest_path(o.out), format_key_values(m));
}

void cmd_train(const TrainOptions& o) {
  DatasetHeader header;
  train::InitialConditions ics = read_initial_conditions(o.data, &header);
  const RunConfig rc = resolve_run_config(read_key_values(o.config), &header);
  ics.fields.resize(rc.train.n_train);
  fs::create_directories(o.out);

  std::vector<train::EpochLoss> rows;
  const auto write_history = [&] {
    std::string csv = std::string(kHistoryHeader) + "\n";
    for (const auto& e : rows) {
      csv += std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.total) + "," +
             format_double(e.ic) + "," + format_double(e.bc) + "," + format_double(e.pde) + "\n";
    }
    write_text(o.out / kHistoryFile, csv);
  };

  const ad::ParamSet init = model::init_params(rc.model, rc.train.seed);
  train::TrainResult result;
  try {
    result = train::train(rc.model, init, rc.system, ics, rc.train, [&](const train::EpochLoss& e) {
      rows.push_back(e);
      if (!o.quiet) {
        std::fprintf(stderr, "epoch %zu lr %.3g loss %.6e (ic %.3e bc %.3e pde %.3e)\n", e.epoch, e.lr, e.total,
                     e.ic, e.bc, e.pde);
      }
    });
  } catch (const NumericError&) {
    write_history();
    throw;
  }
  write_history();
  write_checkpoint(o.out / kCheckpointFile, {format_key_values(run_config_values(rc)), result.params});

  KeyValues m{{"format", "pipno-run 1"}, {"model", model_label(rc.model.mode)}};
  for (auto& kv : run_config_values(rc)) m.push_back(std::move(kv));
  std::vector<std::size_t> mlp{rc.model.in_channels};
  mlp.insert(mlp.end(), rc.model.mlp_hidden.begin(), rc.model.mlp_hidden.end());
  mlp.push_back(rc.model.out_channels);
  const KeyValues tail{
      {"mlp_widths", rc.model.has_mlp() ? join(mlp) : "none"},
      {"parameter_count", std::to_string(model::parameter_count(rc.model))},
      {"clip_norm_used", rc.train.clip_norm ? "true" : "false"},
      {"dataset", o.data.string()},
      {"dataset_sha256", sha256_file(o.data)},
      {"dataset_reference_payload", header.has_reference ? "present, not read" : "absent"},
      {"generator", "philox4x32-10, stream (seed, index), box-muller normals"},
      {"environment", environment_note()},
      {"checkpoint", kCheckpointFile},
      {"checkpoint_sha256", sha256_file(o.out / kCheckpointFile)},
      {"loss_history", kHistoryFile},
      {"loss_history_sha256", sha256_file(o.out / kHistoryFile)},
      {"initial_loss", result.history.empty() ? "nan" : format_double(result.history.front().total)},
      {"final_loss", result.history.empty() ? "nan" : format_double(result.history.back().total)},
      {"metrics", "written by pipno eval --run <this directory>"},
  };
  m.insert(m.end(), tail.begin(), tail.end());
  write_text(o.out / kManifestFile, format_key_values(m));
}

void cmd_eval(const EvalOptions& o) {
  const LoadedRun run = load_run(o.run);
  const DatasetHeader header = read_dataset_header(o.data);
  check_dataset_matches(header, run.config.system);
  if (!header.has_reference) throw IoError(o.data.string() + " has no reference frames to evaluate against");
  const Dataset data = read_dataset(o.data);
  const auto predict = train::model_predictor(run.config.model, run.params, run.config.system);

  std::vector<train::SampleMetrics> samples(data.initial.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const ad::DiffArray u = predict(data.initial[i]);
    samples[i] = train::sample_metrics(u.values(), data.reference[i].values());
  });
  const auto rep = train::aggregate(samples);

  ensure_parent(o.report);
  write_text(o.report, std::string(kMetricsHeader) + "\n" + run.config.system.name + "," +
                           std::to_string(samples.size()) + "," + format_double(rep.rl2e_mean) + "," +
                           format_double(rep.rl2e_std) + "," + format_double(rep.mae_mean) + "," +
                           format_double(rep.mae_std) + "," + format_double(rep.rmse_mean) + "," +
                           format_double(rep.rmse_std) + "\n");
  std::string per = "sample,rl2e,mae,rmse\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    per += std::to_string(i) + "," + format_double(samples[i].rl2e) + "," + format_double(samples[i].mae) + "," +
           format_double(samples[i].rmse) + "\n";
  }
  fs::path per_path = o.report;
  per_path.replace_extension();
  per_path += "_samples.csv";
  write_text(per_path, per);
}

void cmd_diffstudy(const fs::path& out) {
  const auto rows = calculus::convergence_study({32, 64, 128, 256, 512, 1024});
  std::string csv = std::string(kDiffstudyHeader) + "\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.n) + "," + format_double(r.forward_euler_max_err) + "," +
           format_double(r.fourier_max_err) + "\n";
  }
  ensure_parent(out);
  write_text(out, csv);
}

void cmd_plot(const PlotOptions& o) {
  if (o.format != "pgm" && o.format != "csv" && o.format != "both") {
    throw ConfigError("format must be pgm, csv or both");
  }
  const DatasetHeader header = read_dataset_header(o.input);
  if (o.sample >= header.n_samples) {
    throw ConfigError("sample " + std::to_string(o.sample) + " out of range (" + std::to_string(header.n_samples) +
                      " samples)");
  }
  const Dataset data = read_dataset(o.input);
  ensure_parent(o.out);

  const auto& a0 = data.initial[o.sample];
  Panel ic;
  if (header.spatial.size() == 1) {
    ic = {1, a0.size(), a0};
  } else {
    ic = {header.spatial[0], header.spatial[1], a0};
  }
  emit(o, "ic", ic);

  std::optional<Panel> truth;
  if (header.has_reference) {
    truth = field_panel(data.reference[o.sample], o.channel, o.frame);
    emit(o, "truth", *truth);
  }
  if (!o.run.empty()) {
    const LoadedRun run = load_run(o.run);
    check_dataset_matches(header, run.config.system);
    const auto predict = train::model_predictor(run.config.model, run.params, run.config.system);
    const Panel pred = field_panel(predict(a0), o.channel, o.frame);
    emit(o, "prediction", pred);
    if (truth) {
      Panel err = pred;
      for (std::size_t i = 0; i < err.values.size(); ++i) err.values[i] = std::abs(pred.values[i] - truth->values[i]);
      emit(o, "error", err);
    }
  } else if (!truth) {
    throw ConfigError(o.input.string() + " holds no reference frames; pass --run to plot a prediction");
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Physics-informed parallel neural operator toolkit"};
  app.require_subcommand(1);

  GenOptions gen;
  std::string grid_text;
  auto* g = app.add_subcommand("gen", "sample initial conditions (and optionally reference solutions)");
  g->add_option("--system", gen.system, "system name")->required();
  g->add_option("--n", gen.n, "number of samples")->required();
  g->add_option("--seed", gen.seed, "GRF seed")->required();
  g->add_option("--first", gen.first, "first GRF stream index");
  g->add_option("--out", gen.out, "dataset path")->required();
  g->add_flag("--with-reference", gen.with_reference, "also solve and store reference frames");
  g->add_option("--grid", grid_text, "spatial points per axis, e.g. 64");
  g->add_option("--frames", gen.frames, "stored frames");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "train a model from initial conditions only");
  t->add_option("--config", tr.config, "key = value config")->required();
  t->add_option("--data", tr.data, "training dataset")->required();
  t->add_option("--out", tr.out, "run directory")->required();
  t->add_flag("--quiet", tr.quiet, "no per-epoch output");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "metrics of a trained run on a reference dataset");
  e->add_option("--run", ev.run, "run directory")->required();
  e->add_option("--data", ev.data, "dataset with reference frames")->required();
  e->add_option("--report", ev.report, "metrics CSV path")->required();

  fs::path diff_out;
  auto* d = app.add_subcommand("diffstudy", "forward-Euler vs Fourier derivative convergence table");
  d->add_option("--out", diff_out, "CSV path")->required();

  PlotOptions pl;
  std::size_t frame = 0;
  auto* p = app.add_subcommand("plot", "grayscale heatmaps and CSV matrices of one sample");
  p->add_option("--input", pl.input, "dataset")->required();
  p->add_option("--run", pl.run, "run directory for prediction and error panels");
  p->add_option("--sample", pl.sample, "sample index");
  auto* frame_opt = p->add_option("--frame", frame, "time frame (required in 2D)");
  p->add_option("--channel", pl.channel, "output channel");
  p->add_option("--out", pl.out, "output prefix")->required();
  p->add_option("--format", pl.format, "pgm, csv or both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) {
      if (!grid_text.empty()) {
        std::size_t begin = 0;
        while (begin <= grid_text.size()) {
          const auto comma = std::min(grid_text.find(',', begin), grid_text.size());
          const std::string part = grid_text.substr(begin, comma - begin);
          std::size_t used = 0;
          const unsigned long v = std::stoul(part, &used);
          if (used != part.size() || v == 0) throw ConfigError("bad --grid '" + grid_text + "'");
          gen.grid.push_back(v);
          begin = comma + 1;
        }
      }
      cmd_gen(gen);
    } else if (*t) {
      cmd_train(tr);
    } else if (*e) {
      cmd_eval(ev);
    } else if (*d) {
      cmd_diffstudy(diff_out);
    } else if (*p) {
      if (frame_opt->count() > 0) pl.frame = frame;
      cmd_plot(pl);
    }
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kNumeric;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kUsage;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  }
  return kOk;
}

}  // namespace pipno::cli
