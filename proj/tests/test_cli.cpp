#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "pipno/cli.hpp"
#include "pipno/errors.hpp"
#include "support.hpp"

using namespace pipno;
using namespace pipno::cli;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pipno_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

const TempDir& tmp() {
  static const TempDir dir;
  return dir;
}

int pipno_cmd(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + PIPNO_BINARY + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// strtod, unlike stod, accepts subnormal results.
double num(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

std::string bytes_of(const fs::path& p) { return read_text(p); }

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(read_text(p));
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, sep);) out.push_back(part);
  return out;
}

std::string value_of(const fs::path& manifest, const std::string& key) {
  for (const auto& [k, v] : read_key_values(manifest)) {
    if (k == key) return v;
  }
  return {};
}

const char* kTinyConfig =
    "# tiny smoke configuration\n"
    "system = consolidation1d\n"
    "width = 8\n"
    "modes = 4\n"
    "epochs = 3\n"
    "batch_size = 4\n"
    "seed = 7\n";

Dataset small_dataset(bool with_reference) {
  Dataset d;
  d.header = {"allen_cahn", 3, 1, {4}, 2, with_reference};
  for (int i = 0; i < 3; ++i) {
    d.initial.push_back({0.1 * i, -1.0, std::numeric_limits<double>::denorm_min(), 1e300});
    if (with_reference) {
      std::vector<double> r(8);
      for (int j = 0; j < 8; ++j) r[j] = std::sqrt(2.0) * (i + 1) * j;
      d.reference.emplace_back(ad::Shape{1, 4, 2}, r);
    }
  }
  return d;
}

}  // namespace

TEST_CASE("key-value text") {
  const auto kv = parse_key_values("# comment\n a = 1 \n\nname=consolidation1d # trailing\nempty =\n");
  REQUIRE(kv.size() == 3);
  CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
  CHECK(kv[1].second == "consolidation1d");
  CHECK(kv[2].second.empty());
  CHECK(parse_key_values(format_key_values(kv)) == kv);
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values(" = 3\n"), ConfigError);
}

TEST_CASE("doubles format to shortest round-trip text") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::numeric_limits<double>::denorm_min()}) {
    CHECK(num(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1e-3) == "0.001");
}

TEST_CASE("dataset container round trip") {
  for (bool with_reference : {false, true}) {
    CAPTURE(with_reference);
    const auto d = small_dataset(with_reference);
    const auto path = tmp() / "roundtrip.pfds";
    write_dataset(path, d);
    const std::size_t expected = 4 + 4 + 4 + 10 + 8 * 5 + 1 + 3 * 8 * (4 + (with_reference ? 8 : 0));
    CHECK(fs::file_size(path) == expected);
    const auto back = read_dataset(path);
    CHECK(back.header.system == "allen_cahn");
    CHECK(back.header.spatial == std::vector<std::uint64_t>{4});
    CHECK(back.header.has_reference == with_reference);
    CHECK(back.initial == d.initial);
    REQUIRE(back.reference.size() == d.reference.size());
    for (std::size_t i = 0; i < d.reference.size(); ++i) {
      CHECK(back.reference[i].shape() == ad::Shape{1, 4, 2});
      const auto a = back.reference[i].raw();
      const auto b = d.reference[i].raw();
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
    DatasetHeader h;
    const auto ics = read_initial_conditions(path, &h);
    CHECK(ics.fields == d.initial);
    CHECK(h.n_samples == 3);
  }
}

TEST_CASE("dataset container rejects malformed files") {
  const auto path = tmp() / "bad.pfds";
  write_dataset(path, small_dataset(true));
  const std::string good = bytes_of(path);

  write_text(path, good.substr(0, good.size() - 3));
  CHECK_THROWS_AS(read_dataset(path), IoError);
  write_text(path, good + "x");
  CHECK_THROWS_AS(read_dataset(path), IoError);
  std::string wrong = good;
  wrong[0] = 'X';
  write_text(path, wrong);
  CHECK_THROWS_AS(read_dataset_header(path), IoError);
  CHECK_THROWS_AS(read_dataset(tmp() / "missing.pfds"), IoError);

  auto d = small_dataset(false);
  d.initial[1].pop_back();
  CHECK_THROWS_AS(write_dataset(path, d), ShapeError);
}

TEST_CASE("training reader never touches reference payloads") {
  // Overwrite every reference byte with NaN patterns: the IC-only reader must
  // still return the initial conditions exactly.
  auto d = small_dataset(true);
  for (auto& r : d.reference) {
    r = ad::DiffArray(r.shape(), std::vector<double>(r.raw().size(), std::numeric_limits<double>::quiet_NaN()));
  }
  const auto path = tmp() / "nan_refs.pfds";
  write_dataset(path, d);
  CHECK(read_initial_conditions(path).fields == d.initial);
}

TEST_CASE("checkpoint round trip") {
  ad::ParamSet p;
  p.insert("a/w", ad::DiffArray(ad::Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  p.insert("a/R", ad::DiffArray::from_raw(ad::Shape{2}, ad::DType::Complex, {0.5, -0.5, 1e-300, 7.0}));
  const auto path = tmp() / "ckpt.pipn";
  write_checkpoint(path, {"system = allen_cahn\n", p});
  const auto back = read_checkpoint(path);
  CHECK(back.config_text == "system = allen_cahn\n");
  REQUIRE(back.params.tensor_count() == 2);
  CHECK(back.params.at("a/R").is_complex());
  CHECK(back.params.at("a/w").shape() == ad::Shape{2, 3});
  for (const auto& [name, v] : p) {
    const auto a = v.raw();
    const auto b = back.params.at(name).raw();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  write_checkpoint(path, {"", p});
  const std::string bytes = bytes_of(path);
  write_text(path, bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_checkpoint(path), IoError);
}

TEST_CASE("run configuration") {
  const auto rc = resolve_run_config(parse_key_values(kTinyConfig));
  CHECK(rc.system.train_grid.spatial == std::vector<std::size_t>{128});
  CHECK(rc.system.train_grid.frames == 100);
  CHECK(rc.model.width == 8);
  CHECK(rc.model.mlp_hidden == std::vector<std::size_t>{8, 8, 8, 16, 16});
  CHECK(rc.train.epochs == 3);
  CHECK(rc.train.lr0 == 1e-3);
  CHECK(rc.train.period == 100);
  CHECK(rc.train.weights.alpha == 5.0);
  CHECK(rc.train.weights.beta == 2.0);
  CHECK_FALSE(rc.train.clip_norm.has_value());

  const auto again = resolve_run_config(run_config_values(rc));
  CHECK(run_config_values(again) == run_config_values(rc));

  DatasetHeader h{"consolidation1d", 12, 1, {16}, 8, false};
  const auto scaled = resolve_run_config(parse_key_values(kTinyConfig), &h);
  CHECK(scaled.system.train_grid.spatial == std::vector<std::size_t>{16});
  CHECK(scaled.train.n_train == 12);

  CHECK_THROWS_AS(resolve_run_config(parse_key_values("system = consolidation1d\nbogus = 1\n")), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(parse_key_values("system = consolidation1d\nwidth = -3\n")), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(parse_key_values("system = nope\n")), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(parse_key_values("system = allen_cahn\n"), &h), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(parse_key_values(std::string(kTinyConfig) + "grid = 32\n"), &h), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(parse_key_values(std::string(kTinyConfig) + "n_train = 13\n"), &h), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(parse_key_values("system = consolidation1d\nwidth = 8\nmodes = 5\n"), &h), ConfigError);

  CHECK(model_label(model::Mode::Pipno) == "PIPNO");
  CHECK(model_label(model::Mode::FourierOnly) == "PIFNO");
  CHECK(model_label(model::Mode::MlpOnly) == "MLP");
}

TEST_CASE("parallel_for keeps per-index results and rethrows by index") {
  std::vector<int> out(37, 0);
  parallel_for(out.size(), [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
  try {
    parallel_for(10, [](std::size_t i) {
      if (i == 3 || i == 7) throw NumericError("fail " + std::to_string(i));
    });
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()) == "fail 3");
  }
}

TEST_CASE("gen command") {
  const auto a = tmp() / "gen_a.pfds";
  const auto b = tmp() / "gen_b.pfds";
  CHECK(pipno_cmd("gen --system consolidation1d --n 1100 --seed 42 --out " + a.string()) == kOk);
  const auto h = read_dataset_header(a);
  CHECK(h.n_samples == 1100);
  CHECK(h.spatial == std::vector<std::uint64_t>{128});
  CHECK_FALSE(h.has_reference);
  CHECK(pipno_cmd("gen --system consolidation1d --n 1100 --seed 42 --out " + b.string(), "PIPNO_THREADS=3") == kOk);
  CHECK(bytes_of(a) == bytes_of(b));
  CHECK(bytes_of(dataset_manifest_path(a)).size() > 0);
  CHECK(value_of(dataset_manifest_path(a), "sha256") == sha256_file(a));

  const auto r = tmp() / "gen_ref.pfds";
  CHECK(pipno_cmd("gen --system consolidation1d --n 2 --seed 42 --with-reference --out " + r.string()) == kOk);
  const auto d = read_dataset(r);
  REQUIRE(d.reference.size() == 2);
  CHECK(d.reference[0].shape() == ad::Shape{1, 128, 100});
  CHECK(d.initial[1] == read_dataset(a).initial[1]);
  const auto v = d.reference[0].values();
  for (std::size_t x = 0; x < 128; ++x) CHECK(v[x * 100] == d.initial[0][x]);

  const auto sw = tmp() / "gen_sw.pfds";
  CHECK(pipno_cmd("gen --system shallow_water2d --n 1 --seed 1 --grid 16 --frames 10 --out " + sw.string()) == kOk);
  const auto ds = read_dataset(sw);
  CHECK(ds.header.spatial == std::vector<std::uint64_t>{16, 16});
  CHECK(ds.header.channels == 3);
  CHECK(*std::min_element(ds.initial[0].begin(), ds.initial[0].end()) > 0.0);

  const auto empty = tmp() / "gen_empty.pfds";
  CHECK(pipno_cmd("gen --system maxwell1d --n 0 --seed 1 --out " + empty.string()) == kOk);
  const auto e = read_dataset(empty);
  CHECK(e.header.n_samples == 0);
  CHECK(e.header.channels == 2);
  CHECK(e.initial.empty());

  CHECK(pipno_cmd("gen --system nope --n 1 --seed 1 --out " + empty.string()) == kUsage);
  write_text(tmp() / "a_file", "x");
  CHECK(pipno_cmd("gen --system maxwell1d --n 1 --seed 1 --out " + (tmp() / "a_file" / "sub" / "x.pfds").string()) ==
        kIo);
  CHECK(pipno_cmd("gen --system maxwell1d --n 1 --seed 1 --out " + empty.string(), "PIPNO_THREADS=zero") == kUsage);
  CHECK(pipno_cmd("frobnicate") == kUsage);
  CHECK(pipno_cmd("gen --n 1") == kUsage);
}

TEST_CASE("train, eval and plot commands") {
  const auto train_set = tmp() / "train.pfds";
  const auto test_set = tmp() / "test.pfds";
  const auto cfg = tmp() / "tiny.cfg";
  write_text(cfg, kTinyConfig);
  REQUIRE(pipno_cmd("gen --system consolidation1d --n 8 --seed 5 --grid 16 --frames 8 --out " + train_set.string()) ==
          kOk);

  SUBCASE("data-free training with no reference data on disk") {
    for (const auto& entry : fs::directory_iterator(tmp().path)) {
      if (entry.path().extension() == ".pfds" && entry.path() != train_set &&
          read_dataset_header(entry.path()).has_reference) {
        fs::remove(entry.path());
      }
    }
    const auto run1 = tmp() / "run1";
    const auto run2 = tmp() / "run2";
    REQUIRE(pipno_cmd("train --quiet --config " + cfg.string() + " --data " + train_set.string() + " --out " +
                      run1.string()) == kOk);
    for (const char* f : {kCheckpointFile, kManifestFile, kHistoryFile}) CHECK(fs::exists(run1 / f));
    const auto hist = lines_of(run1 / kHistoryFile);
    REQUIRE(hist.size() == 4);
    CHECK(hist[0] == kHistoryHeader);
    CHECK(split(hist[3], ',').size() == 6);
    CHECK(value_of(run1 / kManifestFile, "model") == "PIPNO");
    CHECK(value_of(run1 / kManifestFile, "dataset_reference_payload") == "absent");
    CHECK(value_of(run1 / kManifestFile, "checkpoint_sha256") == sha256_file(run1 / kCheckpointFile));

    REQUIRE(pipno_cmd("train --quiet --config " + cfg.string() + " --data " + train_set.string() + " --out " +
                      run2.string()) == kOk);
    CHECK(bytes_of(run1 / kHistoryFile) == bytes_of(run2 / kHistoryFile));
    CHECK(bytes_of(run1 / kCheckpointFile) == bytes_of(run2 / kCheckpointFile));

    // Only now does the test set with references come into existence.
    REQUIRE(pipno_cmd("gen --system consolidation1d --n 3 --seed 5 --first 8 --grid 16 --frames 8 "
                      "--with-reference --out " + test_set.string()) == kOk);
    const auto report = tmp() / "report.csv";
    REQUIRE(pipno_cmd("eval --run " + run1.string() + " --data " + test_set.string() + " --report " +
                      report.string()) == kOk);
    const auto rows = lines_of(report);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == kMetricsHeader);
    const auto cells = split(rows[1], ',');
    REQUIRE(cells.size() == 8);
    CHECK(cells[0] == "consolidation1d");
    CHECK(cells[1] == "3");
    CHECK(std::isfinite(num(cells[2])));
    CHECK(lines_of(tmp() / "report_samples.csv").size() == 4);

    CHECK(pipno_cmd("eval --run " + run1.string() + " --data " + train_set.string() + " --report " +
                    report.string()) == kIo);

    const auto prefix = tmp() / "plot" / "s1";
    REQUIRE(pipno_cmd("plot --input " + test_set.string() + " --run " + run1.string() + " --sample 1 --out " +
                      prefix.string()) == kOk);
    for (const char* panel : {"ic", "truth", "prediction", "error"}) {
      CHECK(fs::exists(prefix.string() + "_" + std::string(panel) + ".pgm"));
      CHECK(fs::exists(prefix.string() + "_" + std::string(panel) + ".csv"));
    }
    const auto truth_csv = lines_of(prefix.string() + "_truth.csv");
    const auto pred_csv = lines_of(prefix.string() + "_prediction.csv");
    const auto err_csv = lines_of(prefix.string() + "_error.csv");
    REQUIRE(truth_csv.size() == 8);
    const auto test_data = read_dataset(test_set);
    const auto ref = test_data.reference[1].values();
    for (std::size_t j = 0; j < 8; ++j) {
      const auto t = split(truth_csv[j], ',');
      const auto p = split(pred_csv[j], ',');
      const auto e = split(err_csv[j], ',');
      REQUIRE(t.size() == 16);
      for (std::size_t x = 0; x < 16; ++x) {
        CHECK(num(t[x]) == ref[x * 8 + j]);
        CHECK(num(e[x]) == std::abs(num(p[x]) - num(t[x])));
      }
    }
    CHECK(pipno_cmd("plot --input " + test_set.string() + " --sample 3 --out " + prefix.string()) == kUsage);
    CHECK(pipno_cmd("plot --input " + test_set.string() + " --frame 8 --out " + prefix.string()) == kUsage);
  }

  SUBCASE("fourier_only runs are labelled PIFNO") {
    const auto cfg2 = tmp() / "pifno.cfg";
    write_text(cfg2, std::string(kTinyConfig) + "mode = fourier_only\n");
    const auto run = tmp() / "run_pifno";
    REQUIRE(pipno_cmd("train --quiet --config " + cfg2.string() + " --data " + train_set.string() + " --out " +
                      run.string()) == kOk);
    CHECK(value_of(run / kManifestFile, "model") == "PIFNO");
    CHECK(value_of(run / kManifestFile, "mlp_widths") == "none");
  }

  SUBCASE("mismatch and numeric failures map to exit codes") {
    const auto cfg3 = tmp() / "ac.cfg";
    write_text(cfg3, "system = allen_cahn\n");
    CHECK(pipno_cmd("train --quiet --config " + cfg3.string() + " --data " + train_set.string() + " --out " +
                    (tmp() / "run_bad").string()) == kUsage);

    auto d = read_dataset(train_set);
    d.initial[0][3] = std::numeric_limits<double>::infinity();
    const auto poisoned = tmp() / "poisoned.pfds";
    write_dataset(poisoned, d);
    CHECK(pipno_cmd("train --quiet --config " + cfg.string() + " --data " + poisoned.string() + " --out " +
                    (tmp() / "run_nan").string()) == kNumeric);
    CHECK(pipno_cmd("train --quiet --config " + (tmp() / "no.cfg").string() + " --data " + train_set.string() +
                    " --out " + (tmp() / "run_x").string()) == kIo);
  }
}

TEST_CASE("plot panels") {
  Dataset d;
  d.header = {"allen_cahn", 1, 1, {6}, 3, true};
  d.initial.push_back(std::vector<double>(6, 0.25));
  d.reference.emplace_back(ad::Shape{1, 6, 3}, std::vector<double>(18, -0.75));
  const auto path = tmp() / "const.pfds";
  write_dataset(path, d);
  const auto prefix = tmp() / "const";
  REQUIRE(pipno_cmd("plot --input " + path.string() + " --out " + prefix.string()) == kOk);
  const std::string pgm = bytes_of(prefix.string() + "_truth.pgm");
  const std::string header = "P5\n6 3\n255\n";
  REQUIRE(pgm.size() == header.size() + 18);
  CHECK(pgm.substr(0, header.size()) == header);
  const std::string pixels = pgm.substr(header.size());
  CHECK(std::all_of(pixels.begin(), pixels.end(), [&](char c) { return c == pixels[0]; }));

  Dataset r;
  r.header = {"allen_cahn", 1, 1, {5}, 2, true};
  r.initial.push_back({0.1, 0.2, 0.3, 0.4, 0.5});
  std::vector<double> vals{1.0 / 3.0, -1e-310, 2.0 / 7.0, 1e300, -0.1, std::sqrt(2.0), 5.5, -4.25, 1e-17, 0.0};
  r.reference.emplace_back(ad::Shape{1, 5, 2}, vals);
  const auto path2 = tmp() / "vals.pfds";
  write_dataset(path2, r);
  const auto prefix2 = tmp() / "vals";
  REQUIRE(pipno_cmd("plot --input " + path2.string() + " --format csv --out " + prefix2.string()) == kOk);
  const auto rows = lines_of(prefix2.string() + "_truth.csv");
  REQUIRE(rows.size() == 2);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto cells = split(rows[j], ',');
    REQUIRE(cells.size() == 5);
    for (std::size_t x = 0; x < 5; ++x) CHECK(num(cells[x]) == vals[x * 2 + j]);
  }
  CHECK_FALSE(fs::exists(prefix2.string() + "_truth.pgm"));
  const auto pgm2 = bytes_of(prefix2.string() + "_ic.csv");
  CHECK(pgm2 == "0.1,0.2,0.3,0.4,0.5\n");
}

TEST_CASE("diffstudy command") {
  const auto out = tmp() / "fig2.csv";
  REQUIRE(pipno_cmd("diffstudy --out " + out.string()) == kOk);
  const auto rows = lines_of(out);
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == kDiffstudyHeader);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c = split(rows[i], ',');
    REQUIRE(c.size() == 3);
    const double fe = num(c[1]);
    CHECK(num(c[2]) < 1e-9);
    CHECK(fe < prev);
    prev = fe;
  }
}
