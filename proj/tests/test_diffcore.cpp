#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pipno/diffcore/ops.hpp"
#include "pipno/diffcore/params.hpp"
#include "pipno/diffcore/tape.hpp"
#include "pipno/errors.hpp"
#include "pipno/random.hpp"
#include "support.hpp"

using namespace pipno;
using namespace pipno::ad;
using testing::random_array;

TEST_CASE("philox known-answer vectors") {
  using rng::Counter;
  CHECK(rng::philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
        Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(rng::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                           {0xffffffffu, 0xffffffffu}) ==
        Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(rng::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                           {0xa4093822u, 0x299f31d0u}) ==
        Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("stream normals look standard") {
  rng::Stream s(7, 3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.01);
}

TEST_CASE("channel_linear") {
  rng::Stream rng(1, 0);
  const DiffArray x = random_array({4, 3}, DType::Real, rng);

  SUBCASE("identity weight, zero bias") {
    const DiffArray w({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    const DiffArray y = channel_linear(x, w, DiffArray::zeros({3}));
    CHECK(testing::max_abs_diff(y.values(), x.values()) == 0.0);
  }
  SUBCASE("zero input gives the bias") {
    const DiffArray w = random_array({3, 2}, DType::Real, rng);
    const DiffArray b({2}, std::vector<double>{0.25, -1.5});
    const DiffArray y = channel_linear(DiffArray::zeros({4, 3}), w, b);
    for (std::size_t r = 0; r < 4; ++r) {
      CHECK(y.values()[2 * r] == 0.25);
      CHECK(y.values()[2 * r + 1] == -1.5);
    }
  }
  SUBCASE("weight gradient of sum matches central differences") {
    ParamSet p;
    p.insert("w", random_array({3, 2}, DType::Real, rng));
    p.insert("b", random_array({2}, DType::Real, rng));
    auto loss = [&](const ParamSet& q) { return sum(channel_linear(x, q.at("w"), q.at("b"))); };
    Tape tape;
    const ParamSet watched = p.watch(tape);
    const auto g = backward(loss(watched), watched);
    const auto& w = p.at("w").values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto f = [&](double v) {
        std::vector<double> raw(w.begin(), w.end());
        raw[i] = v;
        ParamSet q = p;
        q.assign("w", DiffArray({3, 2}, raw));
        return loss(q).item();
      };
      const double fd = testing::central_difference(f, w[i], 1e-6);
      CHECK(std::abs(g.at("w")[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
  SUBCASE("bitwise independent of buffer placement") {
    for (const auto& [cin, cout] : {std::pair<std::size_t, std::size_t>{5, 1}, {32, 32}, {7, 3}}) {
      const DiffArray xs = random_array({37, cin}, DType::Real, rng);
      const DiffArray w = random_array({cin, cout}, DType::Real, rng);
      const DiffArray b = random_array({cout}, DType::Real, rng);
      const DiffArray seed = random_array({37, cout}, DType::Real, rng);
      std::vector<double> first_y, first_g;
      std::vector<std::vector<double>> pads;
      for (std::size_t k = 0; k < 8; ++k) {
        pads.emplace_back(2 * k + 1, 0.0);  // shifts later heap blocks
        const DiffArray xk({37, cin}, std::vector<double>(xs.values().begin(), xs.values().end()));
        const DiffArray wk({cin, cout}, std::vector<double>(w.values().begin(), w.values().end()));
        const auto y = channel_linear(xk, wk, b);
        const auto g = vjp([&](const DiffArray& v) { return channel_linear(xk, v, b); }, wk,
                           std::vector<double>(seed.values().begin(), seed.values().end()));
        if (k == 0) {
          first_y.assign(y.values().begin(), y.values().end());
          first_g = g;
        }
        CHECK(std::equal(first_y.begin(), first_y.end(), y.values().begin(), y.values().end()));
        CHECK(first_g == g);
      }
    }
  }
  SUBCASE("extent mismatch") {
    CHECK_THROWS_AS(channel_linear(x, DiffArray::zeros({2, 2}), DiffArray::zeros({2})), ShapeError);
  }
}

TEST_CASE("gelu") {
  CHECK(gelu(DiffArray::scalar(0.0)).item() == 0.0);
  CHECK(std::abs(gelu(DiffArray::scalar(10.0)).item() - 10.0) < 1e-8);
  const auto g = vjp([](const DiffArray& x) { return gelu(x); }, DiffArray::scalar(0.5), {1.0});
  auto f = [](double v) { return v * 0.5 * std::erfc(-v / std::numbers::sqrt2); };
  CHECK(std::abs(g[0] - testing::central_difference(f, 0.5, 1e-5)) < 1e-7);
  CHECK_THROWS_AS(gelu(DiffArray({1}, std::vector<cplx>{{1.0, 0.0}})), DtypeError);
}

TEST_CASE("fft pair") {
  rng::Stream rng(2, 0);
  SUBCASE("round trip and Parseval on 64-point signals") {
    for (DType dt : {DType::Real, DType::Complex}) {
      const DiffArray x = random_array({64}, dt, rng);
      const DiffArray X = fft_forward(x, {{0}, false});
      DiffArray back = fft_inverse(X, {{0}, false});
      if (dt == DType::Real) back = real_part(back);
      CHECK(testing::max_abs_diff(back.raw(), x.raw()) < 1e-12);
      const double e_x = testing::dot(x.raw(), x.raw());
      const double e_X = testing::dot(X.raw(), X.raw()) / 64.0;
      CHECK(std::abs(e_x - e_X) <= 1e-10 * e_x);
    }
  }
  SUBCASE("half-spectrum round trip on multi-axis grids") {
    for (Shape s : {Shape{16, 9}, Shape{3, 12, 8, 2}, Shape{128, 100}}) {
      const std::size_t last = s.size() == 4 ? 2 : 1;
      const FftAxes spec{s.size() == 4 ? std::vector<std::size_t>{1, 2} : std::vector<std::size_t>{0, 1},
                         true};
      const DiffArray x = random_array(s, DType::Real, rng);
      const DiffArray X = fft_forward(x, spec);
      CHECK(X.extent(last) == s[last] / 2 + 1);
      const DiffArray back = fft_inverse(X, spec, s[last]);
      CHECK(testing::max_abs_diff(back.values(), x.values()) < 1e-12);
    }
  }
  SUBCASE("adjoint identity") {
    for (int trial = 0; trial < 10; ++trial) {
      const DiffArray z = random_array({64}, DType::Complex, rng);
      CHECK(testing::adjoint_mismatch([](const DiffArray& a) { return fft_forward(a, {{0}, false}); }, z,
                                      rng) < 1e-10);
      CHECK(testing::adjoint_mismatch([](const DiffArray& a) { return fft_inverse(a, {{0}, false}); }, z,
                                      rng) < 1e-10);
    }
  }
  SUBCASE("axis out of range") {
    CHECK_THROWS_AS(fft_forward(DiffArray::zeros({4}), {{1}, false}), ShapeError);
  }
}

TEST_CASE("every linear primitive passes the adjoint test") {
  rng::Stream rng(3, 0);
  const ModeBlock block{{0, 1}, {3, 4}, 1};
  const Stencil stencil{5, {{{0, -1.5}, {1, 2.0}, {2, -0.5}},
                           {{0, -0.5}, {2, 0.5}},
                           {{1, -0.5}, {3, 0.5}},
                           {{2, -0.5}, {4, 0.5}},
                           {{2, 0.5}, {3, -2.0}, {4, 1.5}}}};
  std::vector<cplx> factor(7);
  for (auto& f : factor) f = {rng.normal(), rng.normal()};

  struct Case {
    const char* name;
    Shape shape;
    DType dtype;
    std::function<DiffArray(const DiffArray&)> f;
  };
  const std::vector<Case> cases = {
      {"fft_forward full", {6, 5, 2}, DType::Complex, [](auto& x) { return fft_forward(x, {{0, 1}, false}); }},
      {"fft_forward real", {6, 5}, DType::Real, [](auto& x) { return fft_forward(x, {{1}, false}); }},
      {"fft_forward half", {6, 8, 3}, DType::Real, [](auto& x) { return fft_forward(x, {{0, 1}, true}); }},
      {"fft_forward half odd", {7, 9}, DType::Real, [](auto& x) { return fft_forward(x, {{1, 0}, true}); }},
      {"fft_inverse full", {6, 5}, DType::Complex, [](auto& x) { return fft_inverse(x, {{0, 1}, false}); }},
      {"fft_inverse half", {6, 5, 3}, DType::Complex, [](auto& x) { return fft_inverse(x, {{0, 1}, true}, 8); }},
      {"fft_inverse half odd", {5, 7}, DType::Complex, [](auto& x) { return fft_inverse(x, {{1, 0}, true}, 9); }},
      {"spectral_scale", {3, 7, 2}, DType::Complex,
       [&](auto& x) {
         const std::size_t axes[] = {1};
         return spectral_scale(x, factor, axes);
       }},
      {"mode_truncate", {8, 6, 2}, DType::Complex, [&](auto& x) { return mode_truncate(x, block); }},
      {"mode_pad", {6, 4, 2}, DType::Complex,
       [&](auto& x) {
         const std::size_t full[] = {8, 6};
         return mode_pad(x, block, full);
       }},
      {"axis_stencil", {2, 5, 3}, DType::Real, [&](auto& x) { return axis_stencil(x, 1, stencil); }},
      {"select", {3, 4, 2}, DType::Complex, [](auto& x) { return select(x, 1, 2); }},
      {"permute", {2, 3, 4}, DType::Real,
       [](auto& x) {
         const std::size_t perm[] = {2, 0, 1};
         return permute(x, perm);
       }},
      {"reshape", {2, 3, 4}, DType::Complex, [](auto& x) { return reshape(x, {6, 4}); }},
      {"stack", {3, 2}, DType::Real,
       [](auto& x) {
         const DiffArray parts[] = {x, scale(x, 2.0), x};
         return stack(parts, 1);
       }},
      {"concat", {3, 2}, DType::Real,
       [](auto& x) {
         const DiffArray parts[] = {x, select(reshape(x, {1, 3, 2}), 0, 0)};
         return concat(parts, 1);
       }},
      {"to_complex/real_part", {5}, DType::Real,
       [](auto& x) { return real_part(scale(to_complex(x), -3.0)); }},
      {"sum", {4, 3}, DType::Real, [](auto& x) { return sum(x); }},
      {"mean", {4, 3}, DType::Real, [](auto& x) { return mean(x); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const DiffArray x = random_array(c.shape, c.dtype, rng);
      worst = std::max(worst, testing::adjoint_mismatch(c.f, x, rng));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("spectral_multiply") {
  SUBCASE("identity weights") {
    rng::Stream rng(4, 0);
    const DiffArray x = random_array({3, 2}, DType::Complex, rng);
    std::vector<cplx> eye(3 * 2 * 2, cplx{});
    for (std::size_t m = 0; m < 3; ++m) {
      eye[m * 4 + 0] = 1.0;
      eye[m * 4 + 3] = 1.0;
    }
    const DiffArray y = spectral_multiply(x, DiffArray({3, 2, 2}, eye));
    CHECK(testing::max_abs_diff(y.raw(), x.raw()) == 0.0);
  }
  SUBCASE("single mode scalar product") {
    const DiffArray y = spectral_multiply(DiffArray({1, 1}, std::vector<cplx>{{2, 1}}),
                                          DiffArray({1, 1, 1}, std::vector<cplx>{{3, -1}}));
    CHECK(y.cvalues()[0] == cplx(7, 1));
  }
  SUBCASE("weight gradient matches central differences") {
    rng::Stream rng(5, 0);
    const DiffArray x = random_array({2, 2}, DType::Complex, rng);
    ParamSet p;
    p.insert("r", random_array({2, 2, 2}, DType::Complex, rng));
    auto loss = [&](const ParamSet& q) {
      const DiffArray y = spectral_multiply(x, q.at("r"));
      return mean_square(concat(std::vector<DiffArray>{real_part(y), real_part(scale(y, 1.0))}, 0));
    };
    const auto res = grad_check(loss, p, {1e-6, 16, 0});
    CHECK(res.max_rel_error < 1e-5);
  }
  SUBCASE("mode block mismatch") {
    CHECK_THROWS_AS(spectral_multiply(DiffArray::zeros({3, 2}, DType::Complex),
                                      DiffArray::zeros({2, 2, 2}, DType::Complex)),
                    ShapeError);
  }
}

TEST_CASE("reduce") {
  CHECK(mean(DiffArray::full({7, 3}, 2.5)).item() == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(mean_square(DiffArray({2}, std::vector<double>{3, 4})).item() == 12.5);
  rng::Stream rng(6, 0);
  const DiffArray x = random_array({10}, DType::Real, rng);
  std::vector<double> one{1.0};
  const auto g = vjp([](const DiffArray& a) { return mean_square(a); }, x, one);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(g[i] - 2.0 * x.values()[i] / 10.0) < 1e-12);
}

TEST_CASE("backward") {
  ParamSet p;
  p.insert("a", DiffArray({3}, std::vector<double>{1, 2, 3}));
  p.insert("b", DiffArray({2}, std::vector<double>{4, 5}));
  SUBCASE("sum of parameters gives ones") {
    Tape tape;
    const ParamSet w = p.watch(tape);
    const auto g = backward(sum(w.at("a")), w);
    CHECK(g.at("a") == std::vector<double>{1, 1, 1});
    CHECK(g.at("b") == std::vector<double>{0, 0});
  }
  SUBCASE("loss independent of parameters") {
    Tape tape;
    const ParamSet w = p.watch(tape);
    const auto g = backward(sum(DiffArray::full({4}, 1.0)), w);
    CHECK(g.at("a") == std::vector<double>{0, 0, 0});
  }
  SUBCASE("non-scalar and complex losses are rejected") {
    Tape tape;
    const ParamSet w = p.watch(tape);
    CHECK_THROWS_AS(backward(w.at("a"), w), ShapeError);
    CHECK_THROWS_AS(backward(to_complex(sum(w.at("a"))), w), ShapeError);
  }
  SUBCASE("replay is bit-identical") {
    auto run = [&] {
      Tape tape;
      const ParamSet w = p.watch(tape);
      const DiffArray h = gelu(mul(w.at("a"), w.at("a")));
      return backward(add(mean_square(h), mean(gelu(w.at("b")))), w);
    };
    CHECK(run() == run());
  }
}

TEST_CASE("grad_check") {
  rng::Stream rng(8, 0);
  ParamSet p;
  p.insert("x", random_array({6}, DType::Real, rng));
  SUBCASE("quadratic") {
    // Central differences carry no truncation error on a quadratic, so a
    // coarse step isolates rounding.
    const auto r = grad_check([](const ParamSet& q) { return mean_square(q.at("x")); }, p, {1e-3, 4, 0});
    CHECK(r.max_rel_error < 1e-9);
  }
  SUBCASE("gelu chain") {
    const auto r = grad_check(
        [](const ParamSet& q) { return mean_square(gelu(scale(gelu(add_scalar(q.at("x"), 0.3)), 1.7))); }, p);
    CHECK(r.max_rel_error < 1e-5);
  }
  SUBCASE("corrupted adjoint is detected") {
    auto broken_square = [](const DiffArray& x) {
      std::vector<double> y(x.size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.values()[i] * x.values()[i];
      DiffArray out(x.shape(), std::move(y));
      Tape* tape = x.tape();
      if (tape == nullptr) return out;
      const DiffArray in[] = {x};
      // Adjoint deliberately off by a factor 3/2.
      return tape->record(Primitive::Mul, in, out,
                          [xs = x.storage()](std::span<const double> g, std::span<const std::span<double>> gi) {
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += 3.0 * (*xs)[i] * g[i];
                          });
    };
    const auto r = grad_check([&](const ParamSet& q) { return sum(broken_square(q.at("x"))); }, p);
    CHECK(r.max_rel_error > 1e-2);
  }
}
