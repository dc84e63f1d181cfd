#include "pipno/diffcore/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "pipno/diffcore/fft.hpp"
#include "pipno/diffcore/tape.hpp"
#include "pipno/errors.hpp"

#if defined(PIPNO_HAVE_LIBMVEC)
#include <immintrin.h>
extern "C" __m128d _ZGVbN2v_erfc(__m128d);
extern "C" __m128d _ZGVbN2v_exp(__m128d);
extern "C" __m256d _ZGVdN4v_erfc(__m256d);
extern "C" __m256d _ZGVdN4v_exp(__m256d);
#endif

namespace pipno::ad {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Phi(x) and x * phi(x), the two pieces of the GeLU value and slope.
[[maybe_unused]] void gelu_scalar(const double* v, double* cdf, double* pdf, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    cdf[i] = 0.5 * std::erfc(-v[i] * kInvSqrt2);
    pdf[i] = v[i] * kInvSqrt2Pi * std::exp(-0.5 * v[i] * v[i]);
  }
}

#if defined(PIPNO_HAVE_LIBMVEC)
__attribute__((target("avx2"))) void gelu4(const double* x_in, double* c_out, double* p_out) {
  const __m256d x = _mm256_loadu_pd(x_in);
  const __m256d e = _ZGVdN4v_erfc(_mm256_mul_pd(x, _mm256_set1_pd(-kInvSqrt2)));
  const __m256d g = _ZGVdN4v_exp(_mm256_mul_pd(_mm256_mul_pd(x, x), _mm256_set1_pd(-0.5)));
  _mm256_storeu_pd(c_out, _mm256_mul_pd(e, _mm256_set1_pd(0.5)));
  _mm256_storeu_pd(p_out, _mm256_mul_pd(_mm256_mul_pd(x, _mm256_set1_pd(kInvSqrt2Pi)), g));
}

__attribute__((target("avx2"))) void gelu_avx2(const double* v, double* cdf, double* pdf,
                                               std::size_t n) {
  const auto kernel = gelu4;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) kernel(v + i, cdf + i, pdf + i);
  if (i == n) return;
  double in[4] = {0.0, 0.0, 0.0, 0.0};
  double c[4];
  double p[4];
  std::copy(v + i, v + n, in);
  kernel(in, c, p);
  std::copy_n(c, n - i, cdf + i);
  std::copy_n(p, n - i, pdf + i);
}

void gelu_sse2(const double* v, double* cdf, double* pdf, std::size_t n) {
  const auto kernel = [&](const double* x_in, double* c_out, double* p_out) {
    const __m128d x = _mm_loadu_pd(x_in);
    const __m128d e = _ZGVbN2v_erfc(_mm_mul_pd(x, _mm_set1_pd(-kInvSqrt2)));
    const __m128d g = _ZGVbN2v_exp(_mm_mul_pd(_mm_mul_pd(x, x), _mm_set1_pd(-0.5)));
    _mm_storeu_pd(c_out, _mm_mul_pd(e, _mm_set1_pd(0.5)));
    _mm_storeu_pd(p_out, _mm_mul_pd(_mm_mul_pd(x, _mm_set1_pd(kInvSqrt2Pi)), g));
  };
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) kernel(v + i, cdf + i, pdf + i);
  if (i == n) return;
  double in[2] = {v[i], 0.0};
  double c[2];
  double p[2];
  kernel(in, c, p);
  cdf[i] = c[0];
  pdf[i] = p[0];
}
#endif

// Every element of a run goes through the same kernel, so results do not
// depend on array length or alignment.
void gelu_parts(const double* v, double* cdf, double* pdf, std::size_t n) {
#if defined(PIPNO_HAVE_LIBMVEC)
  static const bool avx2 = __builtin_cpu_supports("avx2");
  if (avx2) return gelu_avx2(v, cdf, pdf, n);
  return gelu_sse2(v, cdf, pdf, n);
#else
  gelu_scalar(v, cdf, pdf, n);
#endif
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Storage = std::shared_ptr<const std::vector<double>>;

DiffArray record(Primitive op, std::initializer_list<DiffArray> inputs, DiffArray out,
                 Tape::Backward fn) {
  std::span<const DiffArray> view(inputs.begin(), inputs.size());
  Tape* tape = common_tape(view);
  if (tape == nullptr) return out;
  return tape->record(op, view, std::move(out), std::move(fn));
}

DiffArray record_many(Primitive op, std::span<const DiffArray> inputs, DiffArray out,
                      Tape::Backward fn) {
  Tape* tape = common_tape(inputs);
  if (tape == nullptr) return out;
  return tape->record(op, inputs, std::move(out), std::move(fn));
}

void require_real(const DiffArray& x, const char* op) {
  if (x.is_complex()) throw DtypeError(std::string(op) + ": complex input, real expected");
}

void require_complex(const DiffArray& x, const char* op) {
  if (!x.is_complex()) throw DtypeError(std::string(op) + ": real input, complex expected");
}

void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
  if (a.dtype() != b.dtype()) throw DtypeError(std::string(op) + ": dtypes differ");
}

std::size_t elem_width(const DiffArray& x) { return x.is_complex() ? 2 : 1; }

cplx* as_cplx(std::span<double> s) { return reinterpret_cast<cplx*>(s.data()); }
const cplx* as_cplx(std::span<const double> s) { return reinterpret_cast<const cplx*>(s.data()); }
const cplx* as_cplx(const Storage& s) { return reinterpret_cast<const cplx*>(s->data()); }

void check_axes(const Shape& shape, std::span<const std::size_t> axes, const char* op) {
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= shape.size()) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(axes[i]) +
                       " out of range for shape " + to_string(shape));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (axes[j] == axes[i]) throw ShapeError(std::string(op) + ": repeated axis");
    }
  }
}

/// Neumaier-compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::vector<std::size_t> full_axes_of(const FftAxes& spec) {
  std::vector<std::size_t> out(spec.axes.begin(), spec.axes.end());
  if (spec.half) out.pop_back();
  return out;
}

void c2c_along(std::vector<cplx>& buf, const Shape& shape, std::span<const std::size_t> axes,
               fft::Direction dir) {
  for (auto a : axes) fft::c2c(buf.data(), buf.data(), fft::layout_of(shape, a), dir);
}

}  // namespace

DiffArray channel_linear(const DiffArray& x, const DiffArray& w, const DiffArray& b) {
  require_real(x, "channel_linear");
  require_real(w, "channel_linear");
  require_real(b, "channel_linear");
  if (w.rank() != 2 || b.rank() != 1 || b.extent(0) != w.extent(1)) {
    throw ShapeError("channel_linear: weight " + to_string(w.shape()) + " and bias " +
                     to_string(b.shape()) + " are inconsistent");
  }
  if (x.rank() == 0 || x.shape().back() != w.extent(0)) {
    throw ShapeError("channel_linear: input " + to_string(x.shape()) +
                     " does not end in c_in = " + std::to_string(w.extent(0)));
  }
  const auto cin = static_cast<Eigen::Index>(w.extent(0));
  const auto cout = static_cast<Eigen::Index>(w.extent(1));
  const auto rows = static_cast<Eigen::Index>(cin == 0 ? 0 : x.size() / cin);

  std::vector<double> y(static_cast<std::size_t>(rows * cout));
  {
    ConstMap X(x.values().data(), rows, cin);
    ConstMap W(w.values().data(), cin, cout);
    MutMap Y(y.data(), rows, cout);
    Y.noalias() = X * W;
  }
  // Plain loops for the bias terms: Eigen's vectorized reductions peel by
  // address alignment, which would make the summation order heap-dependent.
  const auto bias = b.values();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index o = 0; o < cout; ++o) y[static_cast<std::size_t>(r * cout + o)] += bias[static_cast<std::size_t>(o)];
  }
  Shape shape = x.shape();
  shape.back() = static_cast<std::size_t>(cout);
  DiffArray out(std::move(shape), std::move(y));

  return record(Primitive::ChannelLinear, {x, w, b}, std::move(out),
                [xs = x.storage(), ws = w.storage(), rows, cin, cout](
                    std::span<const double> g, std::span<const std::span<double>> in) {
                  ConstMap G(g.data(), rows, cout);
                  if (!in[0].empty()) {
                    ConstMap W(ws->data(), cin, cout);
                    MutMap GX(in[0].data(), rows, cin);
                    GX.noalias() += G * W.transpose();
                  }
                  if (!in[1].empty()) {
                    ConstMap X(xs->data(), rows, cin);
                    MutMap GW(in[1].data(), cin, cout);
                    GW.noalias() += X.transpose() * G;
                  }
                  if (!in[2].empty()) {
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      for (Eigen::Index o = 0; o < cout; ++o) in[2][static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(r * cout + o)];
                    }
                  }
                });
}

std::string_view gelu_backend() {
#if defined(PIPNO_HAVE_LIBMVEC)
  return __builtin_cpu_supports("avx2") ? "libmvec-avx2" : "libmvec-sse2";
#else
  return "libm";
#endif
}

DiffArray gelu(const DiffArray& x) {
  require_real(x, "gelu");
  const auto v = x.values();
  std::vector<double> y(v.size());
  std::vector<double> slope(v.size());
  gelu_parts(v.data(), y.data(), slope.data(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double cdf = y[i];
    y[i] = v[i] * cdf;
    slope[i] += cdf;
  }
  DiffArray out(x.shape(), std::move(y));
  if (!x.requires_grad()) return out;
  return record(Primitive::Gelu, {x}, std::move(out),
                [slope = std::move(slope)](std::span<const double> g,
                                           std::span<const std::span<double>> in) {
                  for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * slope[i];
                });
}

DiffArray add(const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "add");
  const auto ra = a.raw();
  const auto rb = b.raw();
  std::vector<double> y(ra.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ra[i] + rb[i];
  return record(Primitive::Add, {a, b}, DiffArray::from_raw(a.shape(), a.dtype(), std::move(y)),
                [](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (int k = 0; k < 2; ++k) {
                    if (in[k].empty()) continue;
                    for (std::size_t i = 0; i < g.size(); ++i) in[k][i] += g[i];
                  }
                });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "sub");
  const auto ra = a.raw();
  const auto rb = b.raw();
  std::vector<double> y(ra.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ra[i] - rb[i];
  return record(Primitive::Sub, {a, b}, DiffArray::from_raw(a.shape(), a.dtype(), std::move(y)),
                [](std::span<const double> g, std::span<const std::span<double>> in) {
                  if (!in[0].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                  }
                  if (!in[1].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) in[1][i] -= g[i];
                  }
                });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
  require_real(a, "mul");
  require_real(b, "mul");
  require_same_shape(a, b, "mul");
  const auto va = a.values();
  const auto vb = b.values();
  std::vector<double> y(va.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] * vb[i];
  return record(Primitive::Mul, {a, b}, DiffArray(a.shape(), std::move(y)),
                [as = a.storage(), bs = b.storage()](std::span<const double> g,
                                                     std::span<const std::span<double>> in) {
                  if (!in[0].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * (*bs)[i];
                  }
                  if (!in[1].empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * (*as)[i];
                  }
                });
}

DiffArray scale(const DiffArray& x, double factor) {
  const auto r = x.raw();
  std::vector<double> y(r.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * r[i];
  return record(Primitive::Scale, {x}, DiffArray::from_raw(x.shape(), x.dtype(), std::move(y)),
                [factor](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += factor * g[i];
                });
}

DiffArray add_scalar(const DiffArray& x, double value) {
  require_real(x, "add_scalar");
  const auto v = x.values();
  std::vector<double> y(v.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] + value;
  return record(Primitive::AddScalar, {x}, DiffArray(x.shape(), std::move(y)),
                [](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                });
}

DiffArray to_complex(const DiffArray& x) {
  require_real(x, "to_complex");
  const auto v = x.values();
  std::vector<double> y(2 * v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) y[2 * i] = v[i];
  return record(Primitive::ToComplex, {x},
                DiffArray::from_raw(x.shape(), DType::Complex, std::move(y)),
                [](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[2 * i];
                });
}

DiffArray real_part(const DiffArray& x) {
  require_complex(x, "real_part");
  const auto r = x.raw();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = r[2 * i];
  return record(Primitive::RealPart, {x}, DiffArray(x.shape(), std::move(y)),
                [](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t i = 0; i < g.size(); ++i) in[0][2 * i] += g[i];
                });
}

DiffArray fft_forward(const DiffArray& x, const FftAxes& spec) {
  check_axes(x.shape(), spec.axes, "fft_forward");
  if (spec.axes.empty()) throw ShapeError("fft_forward: no axes");
  if (spec.half) require_real(x, "fft_forward (half spectrum)");

  const Shape in_shape = x.shape();
  Shape out_shape = in_shape;
  std::vector<cplx> buf;
  const std::size_t half_axis = spec.axes.back();
  if (spec.half) {
    out_shape[half_axis] = in_shape[half_axis] / 2 + 1;
    buf.resize(numel(out_shape));
    fft::r2c(x.values().data(), buf.data(), fft::layout_of(in_shape, half_axis));
  } else if (x.is_complex()) {
    const auto c = x.cvalues();
    buf.assign(c.begin(), c.end());
  } else {
    const auto v = x.values();
    buf.assign(v.begin(), v.end());
  }
  const auto full_axes = full_axes_of(spec);
  c2c_along(buf, out_shape, full_axes, fft::Direction::Forward);

  DiffArray out(out_shape, std::move(buf));
  return record(
      Primitive::FftForward, {x}, std::move(out),
      [spec, in_shape, out_shape, full_axes, input_complex = x.is_complex()](
          std::span<const double> g, std::span<const std::span<double>> in) {
        std::vector<cplx> buf(as_cplx(g), as_cplx(g) + numel(out_shape));
        c2c_along(buf, out_shape, full_axes, fft::Direction::Backward);
        if (spec.half) {
          const std::size_t axis = spec.axes.back();
          const auto l = fft::layout_of(in_shape, axis);
          const std::size_t bins = l.n / 2 + 1;
          for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t k = 0; k < bins; ++k) {
              const bool self_conjugate = k == 0 || (l.n % 2 == 0 && k == l.n / 2);
              for (std::size_t i = 0; i < l.inner; ++i) {
                cplx& c = buf[(o * bins + k) * l.inner + i];
                c = self_conjugate ? cplx(c.real(), 0.0) : 0.5 * c;
              }
            }
          }
          std::vector<double> real(numel(in_shape));
          fft::c2r(buf.data(), real.data(), l);
          for (std::size_t i = 0; i < real.size(); ++i) in[0][i] += real[i];
        } else if (input_complex) {
          for (std::size_t i = 0; i < buf.size(); ++i) {
            in[0][2 * i] += buf[i].real();
            in[0][2 * i + 1] += buf[i].imag();
          }
        } else {
          for (std::size_t i = 0; i < buf.size(); ++i) in[0][i] += buf[i].real();
        }
      });
}

DiffArray fft_inverse(const DiffArray& x, const FftAxes& spec,
                      std::optional<std::size_t> real_length) {
  require_complex(x, "fft_inverse");
  check_axes(x.shape(), spec.axes, "fft_inverse");
  if (spec.axes.empty()) throw ShapeError("fft_inverse: no axes");
  const Shape in_shape = x.shape();
  Shape out_shape = in_shape;
  const std::size_t half_axis = spec.axes.back();
  if (spec.half) {
    if (!real_length) throw ShapeError("fft_inverse: half spectrum needs the real output length");
    if (in_shape[half_axis] != *real_length / 2 + 1) {
      throw ShapeError("fft_inverse: half-spectrum extent " + std::to_string(in_shape[half_axis]) +
                       " does not match real length " + std::to_string(*real_length));
    }
    out_shape[half_axis] = *real_length;
  }
  const auto full_axes = full_axes_of(spec);
  double norm = 1.0;
  for (auto a : spec.axes) norm *= static_cast<double>(out_shape[a]);
  const double inv = 1.0 / norm;

  const auto c = x.cvalues();
  std::vector<cplx> buf(c.begin(), c.end());
  c2c_along(buf, in_shape, full_axes, fft::Direction::Backward);
  DiffArray out;
  if (spec.half) {
    std::vector<double> y(numel(out_shape));
    fft::c2r(buf.data(), y.data(), fft::layout_of(out_shape, half_axis));
    for (auto& v : y) v *= inv;
    out = DiffArray(out_shape, std::move(y));
  } else {
    for (auto& v : buf) v *= inv;
    out = DiffArray(out_shape, std::move(buf));
  }

  return record(
      Primitive::FftInverse, {x}, std::move(out),
      [spec, in_shape, out_shape, full_axes, inv](std::span<const double> g,
                                                  std::span<const std::span<double>> in) {
        std::vector<cplx> buf;
        if (spec.half) {
          const std::size_t axis = spec.axes.back();
          const auto l = fft::layout_of(out_shape, axis);
          const std::size_t bins = l.n / 2 + 1;
          buf.resize(numel(in_shape));
          fft::r2c(g.data(), buf.data(), l);
          for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t k = 0; k < bins; ++k) {
              const bool self_conjugate = k == 0 || (l.n % 2 == 0 && k == l.n / 2);
              if (self_conjugate) continue;
              for (std::size_t i = 0; i < l.inner; ++i) buf[(o * bins + k) * l.inner + i] *= 2.0;
            }
          }
        } else {
          buf.assign(as_cplx(g), as_cplx(g) + numel(out_shape));
        }
        c2c_along(buf, in_shape, full_axes, fft::Direction::Forward);
        for (std::size_t i = 0; i < buf.size(); ++i) {
          in[0][2 * i] += inv * buf[i].real();
          in[0][2 * i + 1] += inv * buf[i].imag();
        }
      });
}

DiffArray spectral_multiply(const DiffArray& xhat, const DiffArray& r) {
  require_complex(xhat, "spectral_multiply");
  require_complex(r, "spectral_multiply");
  if (xhat.rank() < 1 || r.rank() != xhat.rank() + 1) {
    throw ShapeError("spectral_multiply: ranks " + to_string(xhat.shape()) + " and " +
                     to_string(r.shape()) + " are incompatible");
  }
  const std::size_t lead = xhat.rank() - 1;
  for (std::size_t a = 0; a < lead; ++a) {
    if (xhat.extent(a) != r.extent(a)) {
      throw ShapeError("spectral_multiply: mode block " + to_string(xhat.shape()) +
                       " does not match weights " + to_string(r.shape()));
    }
  }
  const std::size_t cin = xhat.extent(lead);
  if (r.extent(lead) != cin) {
    throw ShapeError("spectral_multiply: weights expect " + std::to_string(r.extent(lead)) +
                     " input channels, got " + std::to_string(cin));
  }
  const std::size_t cout = r.extent(lead + 1);
  const std::size_t modes = cin == 0 ? 0 : xhat.size() / cin;

  const cplx* X = xhat.cvalues().data();
  const cplx* R = r.cvalues().data();
  std::vector<cplx> y(modes * cout, cplx{});
  for (std::size_t m = 0; m < modes; ++m) {
    cplx* ym = y.data() + m * cout;
    for (std::size_t i = 0; i < cin; ++i) {
      const cplx xi = X[m * cin + i];
      const cplx* rm = R + (m * cin + i) * cout;
      for (std::size_t o = 0; o < cout; ++o) ym[o] += xi * rm[o];
    }
  }
  Shape shape = xhat.shape();
  shape.back() = cout;
  return record(Primitive::SpectralMultiply, {xhat, r}, DiffArray(shape, std::move(y)),
                [xs = xhat.storage(), rs = r.storage(), modes, cin, cout](
                    std::span<const double> g, std::span<const std::span<double>> in) {
                  const cplx* G = as_cplx(g);
                  const cplx* X = as_cplx(xs);
                  const cplx* R = as_cplx(rs);
                  if (!in[0].empty()) {
                    cplx* GX = as_cplx(in[0]);
                    for (std::size_t m = 0; m < modes; ++m) {
                      for (std::size_t i = 0; i < cin; ++i) {
                        const cplx* rm = R + (m * cin + i) * cout;
                        cplx acc{};
                        for (std::size_t o = 0; o < cout; ++o) acc += G[m * cout + o] * std::conj(rm[o]);
                        GX[m * cin + i] += acc;
                      }
                    }
                  }
                  if (!in[1].empty()) {
                    cplx* GR = as_cplx(in[1]);
                    for (std::size_t m = 0; m < modes; ++m) {
                      for (std::size_t i = 0; i < cin; ++i) {
                        const cplx xc = std::conj(X[m * cin + i]);
                        cplx* gr = GR + (m * cin + i) * cout;
                        for (std::size_t o = 0; o < cout; ++o) gr[o] += xc * G[m * cout + o];
                      }
                    }
                  }
                });
}

DiffArray spectral_scale(const DiffArray& x, std::span<const cplx> factor,
                         std::span<const std::size_t> axes) {
  require_complex(x, "spectral_scale");
  check_axes(x.shape(), axes, "spectral_scale");
  std::size_t expect = 1;
  for (auto a : axes) expect *= x.extent(a);
  if (factor.size() != expect) {
    throw ShapeError("spectral_scale: factor has " + std::to_string(factor.size()) +
                     " entries, expected " + std::to_string(expect));
  }
  const auto xs = strides_of(x.shape());
  std::vector<std::size_t> fs(axes.size(), 1);
  for (std::size_t k = axes.size(); k-- > 1;) fs[k - 1] = fs[k] * x.extent(axes[k]);

  auto f = std::make_shared<std::vector<cplx>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t fi = 0;
    for (std::size_t k = 0; k < axes.size(); ++k) {
      fi += ((i / xs[axes[k]]) % x.extent(axes[k])) * fs[k];
    }
    (*f)[i] = factor[fi];
  }
  const cplx* X = x.cvalues().data();
  std::vector<cplx> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = X[i] * (*f)[i];
  return record(Primitive::SpectralScale, {x}, DiffArray(x.shape(), std::move(y)),
                [f](std::span<const double> g, std::span<const std::span<double>> in) {
                  const cplx* G = as_cplx(g);
                  cplx* GX = as_cplx(in[0]);
                  for (std::size_t i = 0; i < f->size(); ++i) GX[i] += G[i] * std::conj((*f)[i]);
                });
}

namespace {

/// For each element of the truncated block, its flat index in the full array.
std::vector<std::size_t> block_index_map(const Shape& full, const ModeBlock& block,
                                         Shape& truncated) {
  if (block.axes.size() != block.modes.size()) {
    throw ShapeError("mode block: axes and modes differ in length");
  }
  check_axes(full, block.axes, "mode block");
  truncated = full;
  std::vector<std::vector<std::size_t>> picks(full.size());
  for (std::size_t a = 0; a < full.size(); ++a) {
    picks[a].resize(full[a]);
    std::iota(picks[a].begin(), picks[a].end(), std::size_t{0});
  }
  for (std::size_t k = 0; k < block.axes.size(); ++k) {
    const std::size_t a = block.axes[k];
    const std::size_t m = block.modes[k];
    const std::size_t n = full[a];
    std::vector<std::size_t> sel;
    if (block.half_axis && *block.half_axis == a) {
      if (m > n) {
        throw ShapeError("mode block: " + std::to_string(m) + " modes exceed half-spectrum extent " +
                         std::to_string(n));
      }
      for (std::size_t i = 0; i < m; ++i) sel.push_back(i);
    } else {
      if (2 * m > n) {
        throw ShapeError("mode block: " + std::to_string(m) + " modes exceed axis extent " +
                         std::to_string(n));
      }
      for (std::size_t i = 0; i < m; ++i) sel.push_back(i);
      for (std::size_t i = n - m; i < n; ++i) sel.push_back(i);
    }
    truncated[a] = sel.size();
    picks[a] = std::move(sel);
  }
  const auto fstr = strides_of(full);
  const std::size_t count = numel(truncated);
  std::vector<std::size_t> map(count);
  std::vector<std::size_t> idx(full.size(), 0);
  for (std::size_t t = 0; t < count; ++t) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < full.size(); ++a) flat += picks[a][idx[a]] * fstr[a];
    map[t] = flat;
    for (std::size_t a = full.size(); a-- > 0;) {
      if (++idx[a] < truncated[a]) break;
      idx[a] = 0;
    }
  }
  return map;
}

}  // namespace

DiffArray mode_truncate(const DiffArray& x, const ModeBlock& block) {
  require_complex(x, "mode_truncate");
  Shape truncated;
  auto map = std::make_shared<std::vector<std::size_t>>(block_index_map(x.shape(), block, truncated));
  const cplx* X = x.cvalues().data();
  std::vector<cplx> y(map->size());
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = X[(*map)[t]];
  return record(Primitive::ModeTruncate, {x}, DiffArray(truncated, std::move(y)),
                [map](std::span<const double> g, std::span<const std::span<double>> in) {
                  const cplx* G = as_cplx(g);
                  cplx* GX = as_cplx(in[0]);
                  for (std::size_t t = 0; t < map->size(); ++t) GX[(*map)[t]] += G[t];
                });
}

DiffArray mode_pad(const DiffArray& x, const ModeBlock& block,
                   std::span<const std::size_t> full_extents) {
  require_complex(x, "mode_pad");
  if (full_extents.size() != block.axes.size()) {
    throw ShapeError("mode_pad: one full extent per block axis required");
  }
  check_axes(x.shape(), block.axes, "mode_pad");
  Shape full = x.shape();
  for (std::size_t k = 0; k < block.axes.size(); ++k) full[block.axes[k]] = full_extents[k];
  Shape truncated;
  auto map = std::make_shared<std::vector<std::size_t>>(block_index_map(full, block, truncated));
  if (truncated != x.shape()) {
    throw ShapeError("mode_pad: block " + to_string(x.shape()) + " does not match " +
                     to_string(truncated));
  }
  const cplx* X = x.cvalues().data();
  std::vector<cplx> y(numel(full), cplx{});
  for (std::size_t t = 0; t < map->size(); ++t) y[(*map)[t]] = X[t];
  return record(Primitive::ModePad, {x}, DiffArray(full, std::move(y)),
                [map](std::span<const double> g, std::span<const std::span<double>> in) {
                  const cplx* G = as_cplx(g);
                  cplx* GX = as_cplx(in[0]);
                  for (std::size_t t = 0; t < map->size(); ++t) GX[t] += G[(*map)[t]];
                });
}

DiffArray axis_stencil(const DiffArray& x, std::size_t axis, const Stencil& stencil) {
  require_real(x, "axis_stencil");
  const auto l = fft::layout_of(x.shape(), axis);
  if (stencil.n != l.n || stencil.rows.size() != l.n) {
    throw ShapeError("axis_stencil: stencil of size " + std::to_string(stencil.n) +
                     " on axis of extent " + std::to_string(l.n));
  }
  for (const auto& row : stencil.rows) {
    for (const auto& [col, w] : row) {
      if (col >= l.n) throw ShapeError("axis_stencil: column out of range");
    }
  }
  const auto v = x.values();
  std::vector<double> y(v.size(), 0.0);
  for (std::size_t o = 0; o < l.outer; ++o) {
    const double* xo = v.data() + o * l.n * l.inner;
    double* yo = y.data() + o * l.n * l.inner;
    for (std::size_t i = 0; i < l.n; ++i) {
      for (const auto& [col, w] : stencil.rows[i]) {
        for (std::size_t j = 0; j < l.inner; ++j) yo[i * l.inner + j] += w * xo[col * l.inner + j];
      }
    }
  }
  return record(Primitive::AxisStencil, {x}, DiffArray(x.shape(), std::move(y)),
                [l, stencil](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t o = 0; o < l.outer; ++o) {
                    const double* go = g.data() + o * l.n * l.inner;
                    double* xo = in[0].data() + o * l.n * l.inner;
                    for (std::size_t i = 0; i < l.n; ++i) {
                      for (const auto& [col, w] : stencil.rows[i]) {
                        for (std::size_t j = 0; j < l.inner; ++j) {
                          xo[col * l.inner + j] += w * go[i * l.inner + j];
                        }
                      }
                    }
                  }
                });
}

DiffArray select(const DiffArray& x, std::size_t axis, std::size_t index) {
  const auto l = fft::layout_of(x.shape(), axis);
  if (index >= l.n) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range on axis of extent " +
                     std::to_string(l.n));
  }
  const std::size_t es = elem_width(x);
  const std::size_t inner = l.inner * es;
  const auto r = x.raw();
  std::vector<double> y(l.outer * inner);
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(r.data() + (o * l.n + index) * inner, inner, y.data() + o * inner);
  }
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  return record(Primitive::Select, {x}, DiffArray::from_raw(shape, x.dtype(), std::move(y)),
                [l, inner, index](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t o = 0; o < l.outer; ++o) {
                    double* dst = in[0].data() + (o * l.n + index) * inner;
                    const double* src = g.data() + o * inner;
                    for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
                  }
                });
}

DiffArray concat(std::span<const DiffArray> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.dtype() != xs.front().dtype()) throw DtypeError("concat: dtypes differ");
    Shape a = x.shape();
    Shape b = first;
    if (a.size() != b.size()) throw ShapeError("concat: ranks differ");
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: shapes differ off the concat axis");
    sizes.push_back(x.extent(axis));
    total += x.extent(axis);
  }
  Shape shape = first;
  shape[axis] = total;
  const std::size_t es = elem_width(xs.front());
  std::size_t outer = 1, inner = es;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];

  std::vector<double> y(numel(shape) * es);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto r = xs[k].raw();
    const std::size_t chunk = sizes[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(r.data() + o * chunk, chunk, y.data() + o * total * inner + offset * inner);
    }
    offset += sizes[k];
  }
  return record_many(Primitive::Concat, xs, DiffArray::from_raw(shape, xs.front().dtype(), std::move(y)),
                     [sizes, outer, inner, total](std::span<const double> g,
                                                  std::span<const std::span<double>> in) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         const std::size_t chunk = sizes[k] * inner;
                         if (!in[k].empty()) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = g.data() + o * total * inner + offset * inner;
                             double* dst = in[k].data() + o * chunk;
                             for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                           }
                         }
                         offset += sizes[k];
                       }
                     });
}

DiffArray stack(std::span<const DiffArray> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("stack: no inputs");
  const Shape& first = xs.front().shape();
  if (axis > first.size()) throw ShapeError("stack: axis out of range");
  std::vector<DiffArray> expanded;
  expanded.reserve(xs.size());
  for (const auto& x : xs) {
    if (x.shape() != first) throw ShapeError("stack: shapes differ");
    Shape s = x.shape();
    s.insert(s.begin() + static_cast<long>(axis), 1);
    expanded.push_back(reshape(x, s));
  }
  return concat(expanded, axis);
}

namespace {

std::vector<double> permute_raw(std::span<const double> in, const Shape& shape,
                                std::span<const std::size_t> perm, std::size_t es) {
  const std::size_t rank = shape.size();
  const auto istr = strides_of(shape);
  Shape oshape(rank);
  for (std::size_t i = 0; i < rank; ++i) oshape[i] = shape[perm[i]];
  const std::size_t count = numel(oshape);
  std::vector<double> out(count * es);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t e = 0; e < es; ++e) out[t * es + e] = in[src * es + e];
    for (std::size_t a = rank; a-- > 0;) {
      src += istr[perm[a]];
      if (++idx[a] < oshape[a]) break;
      src -= istr[perm[a]] * oshape[a];
      idx[a] = 0;
    }
  }
  return out;
}

}  // namespace

DiffArray permute(const DiffArray& x, std::span<const std::size_t> perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch");
  std::vector<std::size_t> inverse(rank, rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank || inverse[perm[i]] != rank) throw ShapeError("permute: not a permutation");
    inverse[perm[i]] = i;
  }
  Shape oshape(rank);
  for (std::size_t i = 0; i < rank; ++i) oshape[i] = x.extent(perm[i]);
  const std::size_t es = elem_width(x);
  auto y = permute_raw(x.raw(), x.shape(), perm, es);
  return record(Primitive::Permute, {x}, DiffArray::from_raw(oshape, x.dtype(), std::move(y)),
                [oshape, inverse, es](std::span<const double> g, std::span<const std::span<double>> in) {
                  auto back = permute_raw(g, oshape, inverse, es);
                  for (std::size_t i = 0; i < back.size(); ++i) in[0][i] += back[i];
                });
}

DiffArray reshape(const DiffArray& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  const auto r = x.raw();
  return record(Primitive::Reshape, {x},
                DiffArray::from_raw(std::move(shape), x.dtype(), std::vector<double>(r.begin(), r.end())),
                [](std::span<const double> g, std::span<const std::span<double>> in) {
                  for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                });
}

DiffArray reduce(const DiffArray& x, Reduction kind) {
  require_real(x, "reduce");
  const auto v = x.values();
  const std::size_t n = v.size();
  if (n == 0 && kind != Reduction::Sum) throw ShapeError("reduce: mean of an empty array");
  CompensatedSum acc;
  if (kind == Reduction::MeanOfSquares) {
    for (double e : v) acc.add(e * e);
  } else {
    for (double e : v) acc.add(e);
  }
  double value = acc.value();
  if (kind != Reduction::Sum) value /= static_cast<double>(n);
  return record(Primitive::Reduce, {x}, DiffArray::scalar(value),
                [kind, n, xs = x.storage()](std::span<const double> g,
                                            std::span<const std::span<double>> in) {
                  const double dn = static_cast<double>(n);
                  switch (kind) {
                    case Reduction::Sum:
                      for (std::size_t i = 0; i < n; ++i) in[0][i] += g[0];
                      break;
                    case Reduction::Mean:
                      for (std::size_t i = 0; i < n; ++i) in[0][i] += g[0] / dn;
                      break;
                    case Reduction::MeanOfSquares:
                      for (std::size_t i = 0; i < n; ++i) in[0][i] += 2.0 * (*xs)[i] * g[0] / dn;
                      break;
                  }
                });
}

}  // namespace pipno::ad
