#include "pipno/diffcore/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <tuple>

#include "pipno/errors.hpp"

namespace pipno::fft {
namespace {

enum class Kind : int { C2C, R2C, C2R };

using PlanKey = std::tuple<int, int, std::size_t, std::size_t, std::size_t>;

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::map<PlanKey, fftw_plan>& plan_cache() {
  static std::map<PlanKey, fftw_plan> cache;
  return cache;
}

constexpr unsigned kFlags = FFTW_ESTIMATE;

// Transforms always run between two fftw_malloc'd per-thread buffers, so the
// planner sees SIMD alignment and the chosen codelets never depend on where the
// caller's data happens to sit.
struct Scratch {
  double* data = nullptr;
  std::size_t capacity = 0;

  ~Scratch() { fftw_free(data); }
  double* get(std::size_t doubles) {
    if (doubles > capacity) {
      fftw_free(data);
      data = fftw_alloc_real(doubles);
      if (data == nullptr) throw Error("FFT scratch allocation failed");
      capacity = doubles;
    }
    return data;
  }
};

Scratch& scratch_in() {
  thread_local Scratch s;
  return s;
}

Scratch& scratch_out() {
  thread_local Scratch s;
  return s;
}

fftw_plan get_plan(Kind kind, int sign, AxisLayout l, void* in, void* out) {
  const PlanKey key{static_cast<int>(kind), sign, l.outer, l.n, l.inner};
  std::lock_guard lock(planner_mutex());
  auto& cache = plan_cache();
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const int n = static_cast<int>(l.n);
  const int inner = static_cast<int>(l.inner);
  const int outer = static_cast<int>(l.outer);
  const int half = n / 2 + 1;
  fftw_iodim dim{n, inner, inner};
  fftw_plan plan = nullptr;
  switch (kind) {
    case Kind::C2C: {
      fftw_iodim loops[2] = {{outer, n * inner, n * inner}, {inner, 1, 1}};
      plan = fftw_plan_guru_dft(1, &dim, 2, loops, static_cast<fftw_complex*>(in),
                                static_cast<fftw_complex*>(out), sign, kFlags);
      break;
    }
    case Kind::R2C: {
      fftw_iodim loops[2] = {{outer, n * inner, half * inner}, {inner, 1, 1}};
      plan = fftw_plan_guru_dft_r2c(1, &dim, 2, loops, static_cast<double*>(in),
                                    static_cast<fftw_complex*>(out), kFlags);
      break;
    }
    case Kind::C2R: {
      fftw_iodim loops[2] = {{outer, half * inner, n * inner}, {inner, 1, 1}};
      plan = fftw_plan_guru_dft_c2r(1, &dim, 2, loops, static_cast<fftw_complex*>(in),
                                    static_cast<double*>(out), kFlags);
      break;
    }
  }
  if (plan == nullptr) throw Error("FFTW failed to create a plan");
  cache.emplace(key, plan);
  return plan;
}

void check(AxisLayout l) {
  if (l.n == 0) throw ShapeError("transform over an empty axis");
}

}  // namespace

AxisLayout layout_of(const ad::Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("transform axis " + std::to_string(axis) + " out of range for shape " +
                     ad::to_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

void c2c(const cplx* in, cplx* out, AxisLayout l, Direction dir) {
  check(l);
  const std::size_t count = l.outer * l.n * l.inner;
  if (count == 0) return;
  auto* a = reinterpret_cast<cplx*>(scratch_in().get(2 * count));
  auto* b = reinterpret_cast<cplx*>(scratch_out().get(2 * count));
  std::copy(in, in + count, a);
  fftw_plan p = get_plan(Kind::C2C, static_cast<int>(dir), l, a, b);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(a), reinterpret_cast<fftw_complex*>(b));
  std::copy(b, b + count, out);
}

void r2c(const double* in, cplx* out, AxisLayout l) {
  check(l);
  if (l.outer * l.inner == 0) return;
  const std::size_t count = l.outer * l.n * l.inner;
  const std::size_t bins = l.outer * (l.n / 2 + 1) * l.inner;
  double* a = scratch_in().get(count);
  auto* b = reinterpret_cast<cplx*>(scratch_out().get(2 * bins));
  std::copy(in, in + count, a);
  fftw_plan p = get_plan(Kind::R2C, 0, l, a, b);
  fftw_execute_dft_r2c(p, a, reinterpret_cast<fftw_complex*>(b));
  std::copy(b, b + bins, out);
}

void c2r(const cplx* in, double* out, AxisLayout l) {
  check(l);
  if (l.outer * l.inner == 0) return;
  // c2r destroys its input and must see zero imaginary parts on the
  // self-conjugate bins.
  const std::size_t half = l.n / 2 + 1;
  const std::size_t bins = l.outer * half * l.inner;
  const std::size_t count = l.outer * l.n * l.inner;
  auto* a = reinterpret_cast<cplx*>(scratch_in().get(2 * bins));
  double* b = scratch_out().get(count);
  std::copy(in, in + bins, a);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      a[(o * half) * l.inner + i].imag(0.0);
      if (l.n % 2 == 0) a[(o * half + l.n / 2) * l.inner + i].imag(0.0);
    }
  }
  fftw_plan p = get_plan(Kind::C2R, 0, l, a, b);
  fftw_execute_dft_c2r(p, reinterpret_cast<fftw_complex*>(a), b);
  std::copy(b, b + count, out);
}

long wavenumber(std::size_t index, std::size_t n) {
  const auto i = static_cast<long>(index);
  const auto m = static_cast<long>(n);
  return i < (m + 1) / 2 ? i : i - m;
}

}  // namespace pipno::fft
