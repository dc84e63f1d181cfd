#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "pipno/cli.hpp"
#include "pipno/errors.hpp"

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace pipno::cli {
namespace {

constexpr char kDatasetMagic[4] = {'P', 'F', 'D', 'S'};
constexpr char kCheckpointMagic[4] = {'P', 'I', 'P', 'N'};
constexpr std::uint32_t kVersion = 1;
// Sanity bound on header fields so a corrupt file fails fast instead of allocating.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 40;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class Writer {
 public:
  explicit Writer(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void doubles(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
  void string32(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }
  template <class T>
  T get() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError(path_.string() + ": truncated file");
  }
  std::vector<double> doubles(std::size_t n) {
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }
  std::string string(std::size_t n) {
    if (n > kMaxCount) throw IoError(path_.string() + ": corrupt length field");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::uint64_t count() {
    const auto v = get<std::uint64_t>();
    if (v > kMaxCount) throw IoError(path_.string() + ": corrupt count field");
    return v;
  }
  void skip(std::size_t n) {
    in_.seekg(static_cast<std::streamoff>(n), std::ios::cur);
    if (!in_) throw IoError(path_.string() + ": truncated file");
  }
  void magic(const char (&expected)[4], const char* what) {
    char m[4];
    bytes(m, 4);
    if (std::memcmp(m, expected, 4) != 0) throw IoError(path_.string() + " is not a " + what + " file");
    const auto version = get<std::uint32_t>();
    if (version != kVersion) {
      throw IoError(path_.string() + ": unsupported " + what + " version " + std::to_string(version));
    }
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw IoError(path_.string() + ": trailing bytes after payload");
  }

 private:
  fs::path path_;
  std::ifstream in_;
};

DatasetHeader read_header(Reader& r) {
  r.magic(kDatasetMagic, "PFDS dataset");
  DatasetHeader h;
  h.system = r.string(r.get<std::uint32_t>());
  h.n_samples = r.count();
  h.channels = r.count();
  const auto rank = r.count();
  if (rank < 1 || rank > 3) throw IoError("dataset: bad spatial rank " + std::to_string(rank));
  for (std::uint64_t i = 0; i < rank; ++i) h.spatial.push_back(r.count());
  h.frames = r.count();
  h.has_reference = r.get<std::uint8_t>() != 0;
  return h;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    for (const auto& [k, v] : kv) {
      if (k == key) throw ConfigError("duplicate key '" + key + "'");
    }
    kv.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) { return parse_key_values(read_text(path)); }

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t DatasetHeader::ic_size() const {
  std::size_t n = 1;
  for (auto e : spatial) n *= e;
  return n;
}

std::size_t DatasetHeader::reference_size() const { return channels * ic_size() * frames; }

void write_dataset(const fs::path& path, const Dataset& d) {
  const auto& h = d.header;
  if (d.initial.size() != h.n_samples) throw ShapeError("dataset: sample count disagrees with header");
  if (h.has_reference != !d.reference.empty() || (h.has_reference && d.reference.size() != h.n_samples)) {
    throw ShapeError("dataset: reference count disagrees with header");
  }
  Writer w(path);
  w.bytes(kDatasetMagic, 4);
  w.put(kVersion);
  w.string32(h.system);
  w.put<std::uint64_t>(h.n_samples);
  w.put<std::uint64_t>(h.channels);
  w.put<std::uint64_t>(h.spatial.size());
  for (auto e : h.spatial) w.put<std::uint64_t>(e);
  w.put<std::uint64_t>(h.frames);
  w.put<std::uint8_t>(h.has_reference ? 1 : 0);
  for (std::size_t i = 0; i < h.n_samples; ++i) {
    if (d.initial[i].size() != h.ic_size()) throw ShapeError("dataset: initial condition " + std::to_string(i) + " has the wrong size");
    w.doubles(d.initial[i]);
    if (h.has_reference) {
      const auto raw = d.reference[i].raw();
      if (raw.size() != h.reference_size()) throw ShapeError("dataset: reference " + std::to_string(i) + " has the wrong size");
      w.doubles(raw);
    }
  }
  w.close();
}

DatasetHeader read_dataset_header(const fs::path& path) {
  Reader r(path);
  return read_header(r);
}

Dataset read_dataset(const fs::path& path) {
  Reader r(path);
  Dataset d;
  d.header = read_header(r);
  const auto& h = d.header;
  ad::Shape ref_shape{h.channels};
  ref_shape.insert(ref_shape.end(), h.spatial.begin(), h.spatial.end());
  ref_shape.push_back(h.frames);
  for (std::size_t i = 0; i < h.n_samples; ++i) {
    d.initial.push_back(r.doubles(h.ic_size()));
    if (h.has_reference) d.reference.emplace_back(ref_shape, r.doubles(h.reference_size()));
  }
  r.expect_end();
  return d;
}

train::InitialConditions read_initial_conditions(const fs::path& path, DatasetHeader* header) {
  Reader r(path);
  const DatasetHeader h = read_header(r);
  train::InitialConditions ics;
  for (std::size_t i = 0; i < h.n_samples; ++i) {
    ics.fields.push_back(r.doubles(h.ic_size()));
    if (h.has_reference) r.skip(h.reference_size() * sizeof(double));
  }
  if (header) *header = h;
  return ics;
}

fs::path dataset_manifest_path(const fs::path& dataset) {
  fs::path p = dataset;
  p += ".manifest.txt";
  return p;
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) {
  Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.put(kVersion);
  w.put<std::uint64_t>(c.config_text.size());
  w.bytes(c.config_text.data(), c.config_text.size());
  w.put<std::uint64_t>(c.params.tensor_count());
  for (const auto& [name, v] : c.params) {
    w.string32(name);
    w.put<std::uint8_t>(v.is_complex() ? 1 : 0);
    w.put<std::uint64_t>(v.shape().size());
    for (auto e : v.shape()) w.put<std::uint64_t>(e);
    w.doubles(v.raw());
  }
  w.close();
}

Checkpoint read_checkpoint(const fs::path& path) {
  Reader r(path);
  r.magic(kCheckpointMagic, "PIPN checkpoint");
  Checkpoint c;
  c.config_text = r.string(r.count());
  const auto tensors = r.count();
  for (std::uint64_t t = 0; t < tensors; ++t) {
    std::string name = r.string(r.get<std::uint32_t>());
    const bool complex = r.get<std::uint8_t>() != 0;
    const auto rank = r.count();
    if (rank > 8) throw IoError(path.string() + ": corrupt tensor rank");
    ad::Shape shape;
    std::size_t n = complex ? 2 : 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape.push_back(r.count());
      n *= shape.back();
    }
    c.params.insert(name, ad::DiffArray::from_raw(std::move(shape), complex ? ad::DType::Complex : ad::DType::Real,
                                                  r.doubles(n)));
  }
  r.expect_end();
  return c;
}

}  // namespace pipno::cli
