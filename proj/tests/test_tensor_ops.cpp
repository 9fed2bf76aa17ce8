#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "rshaze/ops.hpp"

using namespace rshaze;

namespace {

template <typename T>
Tensor<T> rnd(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

// Independent oracle: direct summation one output element at a time.
template <typename T>
Tensor<T> conv_reference(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                         const ops::ConvSpec& s) {
  const int ho = s.out_dim(x.h());
  const int wo = s.out_dim(x.w());
  const int cg = s.in_channels / s.groups;
  const int ocg = s.out_channels / s.groups;
  Tensor<T> out(x.n(), s.out_channels, ho, wo);
  for (int n = 0; n < x.n(); ++n)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      const int g = oc / ocg;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T acc = b ? (*b)[oc] : T(0);
          for (int ic = 0; ic < cg; ++ic)
            for (int ky = 0; ky < s.kernel; ++ky)
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int iy = oy * s.stride - s.padding + ky * s.dilation;
                const int ix = ox * s.stride - s.padding + kx * s.dilation;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += x.at(n, g * cg + ic, iy, ix) * w.at(oc, ic, ky, kx);
              }
          out.at(n, oc, oy, ox) = acc;
        }
    }
  return out;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("conv2d: per-channel identity kernel maps input to itself") {
  std::mt19937_64 rng(7);
  const Tensor64 x = rnd<double>({2, 3, 5, 5}, rng);
  ops::ConvSpec spec{3, 3, 1, 1, 0, 1, 1, false};
  Tensor64 w(spec.weight_shape());
  for (int o = 0; o < 3; ++o) w.at(o, o, 0, 0) = 1.0;
  CHECK(ops::conv2d<double>(x, w, nullptr, spec) == x);
}

TEST_CASE("conv2d: all-ones 3x3 on all-ones 3x3 input, same padding") {
  Tensor64 x = Tensor64::full({1, 1, 3, 3}, 1.0);
  ops::ConvSpec spec{1, 1, 3, 1, 1, 1, 1, false};
  Tensor64 w = Tensor64::full(spec.weight_shape(), 1.0);
  const Tensor64 y = ops::conv2d<double>(x, w, nullptr, spec);
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.0));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 0, 2) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 2, 0) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx(6.0));
  CHECK(y.at(0, 0, 1, 0) == doctest::Approx(6.0));
  CHECK(y.at(0, 0, 1, 2) == doctest::Approx(6.0));
  CHECK(y.at(0, 0, 2, 1) == doctest::Approx(6.0));
}

TEST_CASE("conv2d: k=3 d=3 p=3 keeps 16x16 spatial size") {
  std::mt19937_64 rng(3);
  const Tensor64 x = rnd<double>({1, 2, 16, 16}, rng);
  ops::ConvSpec spec{2, 2, 3, 1, 3, 3, 1, true};
  const Tensor64 w = rnd<double>(spec.weight_shape(), rng);
  const Tensor64 b = rnd<double>({1, 2, 1, 1}, rng);
  const Tensor64 y = ops::conv2d(x, w, &b, spec);
  CHECK(y.shape() == Shape{1, 2, 16, 16});
}

TEST_CASE("conv2d matches direct-summation oracle on the branch schedule") {
  // kernel/dilation/group combinations of the four extraction branches,
  // plus pointwise and strided/grouped variants
  struct Combo {
    int k, d, g, p, stride;
  };
  const Combo combos[] = {
      {1, 1, 1, 0, 1}, {3, 3, 8, 3, 1}, {5, 3, 8, 6, 1}, {7, 3, 8, 9, 1},
      {3, 1, 1, 1, 1}, {3, 2, 2, 2, 1}, {3, 1, 4, 1, 2}, {5, 2, 1, 4, 1},
      {1, 1, 8, 0, 1}, {3, 3, 1, 3, 2},
  };
  std::mt19937_64 rng(42);
  for (const Combo& c : combos) {
    for (int trial = 0; trial < 3; ++trial) {
      const int n = 1 + static_cast<int>(rng() % 4);
      const int h = 7 + static_cast<int>(rng() % 3);  // up to 9
      const int w = 7 + static_cast<int>(rng() % 3);
      ops::ConvSpec spec{8, 8, c.k, c.stride, c.p, c.d, c.g, trial % 2 == 0};
      const Tensor64 x = rnd<double>({n, 8, h, w}, rng);
      const Tensor64 wt = rnd<double>(spec.weight_shape(), rng);
      const Tensor64 b = rnd<double>({1, 8, 1, 1}, rng);
      const Tensor64* bias = spec.bias ? &b : nullptr;
      const Tensor64 got = ops::conv2d(x, wt, bias, spec);
      const Tensor64 want = conv_reference(x, wt, bias, spec);
      CHECK(max_abs_diff(got, want) < 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  std::mt19937_64 rng(1);
  const Tensor64 x = rnd<double>({1, 4, 5, 5}, rng);
  SUBCASE("channel mismatch") {
    ops::ConvSpec spec{3, 4, 1, 1, 0, 1, 1, false};
    const Tensor64 w = rnd<double>(spec.weight_shape(), rng);
    CHECK_THROWS_AS(ops::conv2d<double>(x, w, nullptr, spec), std::invalid_argument);
  }
  SUBCASE("groups do not divide channels") {
    ops::ConvSpec spec{4, 6, 1, 1, 0, 1, 4, false};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  }
  SUBCASE("kernel larger than padded input") {
    ops::ConvSpec spec{4, 4, 7, 1, 0, 1, 1, false};
    const Tensor64 w = rnd<double>(spec.weight_shape(), rng);
    CHECK_THROWS_AS(ops::conv2d<double>(x, w, nullptr, spec), std::invalid_argument);
  }
}

TEST_CASE("matmul: identity, hand product, mismatch") {
  Tensor64 eye(1, 1, 3, 3);
  for (int i = 0; i < 3; ++i) eye.at(0, 0, i, i) = 1.0;
  std::mt19937_64 rng(5);
  const Tensor64 b = rnd<double>({1, 1, 3, 4}, rng);
  CHECK(ops::matmul(eye, b) == b);

  Tensor64 m1(1, 1, 2, 2), m2(1, 1, 2, 2);
  m1.at(0, 0, 0, 0) = 1;
  m1.at(0, 0, 0, 1) = 2;
  m1.at(0, 0, 1, 0) = 3;
  m1.at(0, 0, 1, 1) = 4;
  m2.at(0, 0, 0, 0) = 5;
  m2.at(0, 0, 0, 1) = 6;
  m2.at(0, 0, 1, 0) = 7;
  m2.at(0, 0, 1, 1) = 8;
  const Tensor64 p = ops::matmul(m1, m2);
  CHECK(p.at(0, 0, 0, 0) == 19);
  CHECK(p.at(0, 0, 0, 1) == 22);
  CHECK(p.at(0, 0, 1, 0) == 43);
  CHECK(p.at(0, 0, 1, 1) == 50);

  const Tensor64 bad = rnd<double>({1, 1, 4, 2}, rng);
  CHECK_THROWS_AS(ops::matmul(rnd<double>({1, 1, 2, 3}, rng), bad), std::invalid_argument);
}

TEST_CASE("softmax_lastdim: fixed points and row-sum invariant") {
  Tensor64 x(1, 1, 1, 2);
  CHECK(ops::softmax_lastdim(x, 1.0).at(0, 0, 0, 0) == doctest::Approx(0.5));

  x.at(0, 0, 0, 0) = std::log(2.0);
  x.at(0, 0, 0, 1) = 0.0;
  const Tensor64 y = ops::softmax_lastdim(x, 1.0);
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  std::mt19937_64 rng(11);
  const Tensor64 r = rnd<double>({2, 3, 4, 7}, rng, -5.0, 5.0);
  SUBCASE("zero scale gives uniform rows") {
    const Tensor64 u = ops::softmax_lastdim(r, 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(u[i] == doctest::Approx(1.0 / 7));
  }
  SUBCASE("rows are non-negative and sum to 1") {
    const Tensor64 s = ops::softmax_lastdim(r, 1.3);
    for (std::size_t row = 0; row < s.size() / 7; ++row) {
      double total = 0;
      for (int j = 0; j < 7; ++j) {
        CHECK(s[row * 7 + j] >= 0.0);
        total += s[row * 7 + j];
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("invariant under adding a constant per row") {
    const Tensor64 shifted = ops::add_scalar(r, 17.25);
    CHECK(max_abs_diff(ops::softmax_lastdim(r, 1.3), ops::softmax_lastdim(shifted, 1.3)) <
          1e-12);
  }
}

TEST_CASE("layer_norm_channels: fixed points") {
  Tensor64 gamma = Tensor64::full({1, 2, 1, 1}, 1.0);
  Tensor64 beta(1, 2, 1, 1);

  SUBCASE("constant channel vector normalizes to zero") {
    const Tensor64 x = Tensor64::full({1, 2, 3, 3}, 4.2);
    const Tensor64 y = ops::layer_norm_channels(x, gamma, beta, 1e-6);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.0));
  }
  SUBCASE("gamma 0, beta 5 pins output at 5") {
    std::mt19937_64 rng(2);
    const Tensor64 x = rnd<double>({1, 2, 3, 3}, rng);
    const Tensor64 y = ops::layer_norm_channels(x, Tensor64(Shape{1, 2, 1, 1}),
                                                Tensor64::full({1, 2, 1, 1}, 5.0), 1e-6);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(5.0));
  }
  SUBCASE("position vector [1, 3] maps to [-1, 1]") {
    Tensor64 x(1, 2, 1, 1);
    x.at(0, 0, 0, 0) = 1.0;
    x.at(0, 1, 0, 0) = 3.0;
    const Tensor64 y = ops::layer_norm_channels(x, gamma, beta, 1e-12);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y.at(0, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("layer_norm_channels: normalization invariant on random input") {
  std::mt19937_64 rng(23);
  const int c = 6;
  const Tensor64 x = rnd<double>({2, c, 4, 5}, rng, -3.0, 3.0);
  const Tensor64 y = ops::layer_norm_channels(x, Tensor64::full({1, c, 1, 1}, 1.0),
                                              Tensor64(Shape{1, c, 1, 1}), 1e-6);
  for (int n = 0; n < y.n(); ++n)
    for (int py = 0; py < y.h(); ++py)
      for (int px = 0; px < y.w(); ++px) {
        double mean = 0, var = 0;
        for (int ch = 0; ch < c; ++ch) mean += y.at(n, ch, py, px);
        mean /= c;
        for (int ch = 0; ch < c; ++ch) {
          const double d = y.at(n, ch, py, px) - mean;
          var += d * d;
        }
        var /= c;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-4);
      }
}

TEST_CASE("adaptive_avg_pool") {
  SUBCASE("constant map pools to the constant") {
    const Tensor64 x = Tensor64::full({1, 2, 5, 7}, 3.25);
    const Tensor64 y = ops::adaptive_avg_pool(x, 1, 1);
    CHECK(y.shape() == Shape{1, 2, 1, 1});
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(3.25));
  }
  SUBCASE("2x2 map [1,2;3,4] pools to 2.5") {
    Tensor64 x(1, 1, 2, 2);
    x.at(0, 0, 0, 0) = 1;
    x.at(0, 0, 0, 1) = 2;
    x.at(0, 0, 1, 0) = 3;
    x.at(0, 0, 1, 1) = 4;
    CHECK(ops::adaptive_avg_pool(x, 1, 1).at(0, 0, 0, 0) == doctest::Approx(2.5));
  }
  SUBCASE("input already at target size is unchanged") {
    std::mt19937_64 rng(9);
    const Tensor64 x = rnd<double>({2, 3, 1, 1}, rng);
    CHECK(ops::adaptive_avg_pool(x, 1, 1) == x);
  }
  SUBCASE("empty spatial dims rejected") {
    Tensor64 x(1, 1, 0, 4);
    CHECK_THROWS_AS(ops::adaptive_avg_pool(x, 1, 1), std::invalid_argument);
  }
}

TEST_CASE("pixel_unshuffle/pixel_shuffle") {
  std::mt19937_64 rng(31);
  SUBCASE("r=1 is the identity") {
    const Tensor64 x = rnd<double>({2, 3, 4, 4}, rng);
    CHECK(ops::pixel_unshuffle(x, 1) == x);
    CHECK(ops::pixel_shuffle(x, 1) == x);
  }
  SUBCASE("4x4 ramp, r=2: block-to-channel enumeration") {
    Tensor64 x(1, 1, 4, 4);
    for (int i = 0; i < 16; ++i) x[i] = i;
    const Tensor64 y = ops::pixel_unshuffle(x, 2);
    CHECK(y.shape() == Shape{1, 4, 2, 2});
    // channel 0 holds the (dy=0, dx=0) samples
    CHECK(y.at(0, 0, 0, 0) == 0);
    CHECK(y.at(0, 0, 0, 1) == 2);
    CHECK(y.at(0, 0, 1, 0) == 8);
    CHECK(y.at(0, 0, 1, 1) == 10);
    // index-arithmetic oracle over every output element
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        for (int yy = 0; yy < 2; ++yy)
          for (int xx = 0; xx < 2; ++xx)
            CHECK(y.at(0, dy * 2 + dx, yy, xx) == (yy * 2 + dy) * 4 + (xx * 2 + dx));
  }
  SUBCASE("round trip is bit-exact") {
    const Tensor64 x = rnd<double>({3, 5, 6, 8}, rng);
    CHECK(ops::pixel_shuffle(ops::pixel_unshuffle(x, 2), 2) == x);
  }
  SUBCASE("divisibility violations rejected") {
    const Tensor64 x = rnd<double>({1, 3, 5, 4}, rng);
    CHECK_THROWS_AS(ops::pixel_unshuffle(x, 2), std::invalid_argument);
    CHECK_THROWS_AS(ops::pixel_shuffle(x, 2), std::invalid_argument);
  }
}

TEST_CASE("concat/split channels") {
  std::mt19937_64 rng(13);
  const Tensor64 a = rnd<double>({1, 2, 4, 4}, rng);
  const Tensor64 b = rnd<double>({1, 3, 4, 4}, rng);
  const Tensor64 cat = ops::concat_channels<double>({&a, &b});
  CHECK(cat.shape() == Shape{1, 5, 4, 4});

  const auto parts = ops::split_channels(cat, {2, 3});
  CHECK(parts[0] == a);
  CHECK(parts[1] == b);

  const Tensor64 bad = rnd<double>({1, 2, 3, 4}, rng);
  CHECK_THROWS_AS(ops::concat_channels<double>({&a, &bad}), std::invalid_argument);
}

TEST_CASE("elementwise ops") {
  std::mt19937_64 rng(17);
  const Tensor64 x = rnd<double>({2, 2, 3, 3}, rng);
  SUBCASE("add zero is identity") { CHECK(ops::add(x, Tensor64(x.shape())) == x); }
  SUBCASE("gelu fixed points") {
    CHECK(ops::gelu(Tensor64::scalar(0.0))[0] == 0.0);
    CHECK(ops::gelu(Tensor64::scalar(3.0))[0] == doctest::Approx(2.99595030590).epsilon(1e-9));
  }
  SUBCASE("shape mismatch rejected") {
    CHECK_THROWS_AS(ops::add(x, Tensor64(Shape{2, 2, 3, 4})), std::invalid_argument);
    CHECK_THROWS_AS(ops::mul(x, Tensor64(Shape{1, 2, 3, 3})), std::invalid_argument);
  }
  SUBCASE("scale_channels broadcasts a one-channel gate") {
    const Tensor64 gate = rnd<double>({2, 1, 3, 3}, rng);
    const Tensor64 y = ops::scale_channels(x, gate);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            CHECK(y.at(n, c, i, j) == x.at(n, c, i, j) * gate.at(n, 0, i, j));
  }
}

TEST_CASE("pad_bottom_right reflects, crop_top_left inverts") {
  Tensor64 x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x[i] = i;
  const Tensor64 p = ops::pad_bottom_right(x, 2, 1);
  CHECK(p.shape() == Shape{1, 1, 5, 4});
  // mirrored rows: row 3 <- row 1, row 4 <- row 0; column 3 <- column 1
  CHECK(p.at(0, 0, 3, 0) == x.at(0, 0, 1, 0));
  CHECK(p.at(0, 0, 4, 0) == x.at(0, 0, 0, 0));
  CHECK(p.at(0, 0, 0, 3) == x.at(0, 0, 0, 1));
  CHECK(ops::crop_top_left(p, 3, 3) == x);
}

TEST_CASE("ops are pure: repeated evaluation is bit-identical") {
  std::mt19937_64 rng(29);
  const Tensor64 x = rnd<double>({2, 4, 6, 6}, rng);
  ops::ConvSpec spec{4, 4, 3, 1, 3, 3, 4, true};
  const Tensor64 w = rnd<double>(spec.weight_shape(), rng);
  const Tensor64 b = rnd<double>({1, 4, 1, 1}, rng);
  const Tensor64 y1 = ops::conv2d(x, w, &b, spec);
  const Tensor64 y2 = ops::conv2d(x, w, &b, spec);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0);

  const Tensor64 s1 = ops::softmax_lastdim(x, 0.9);
  const Tensor64 s2 = ops::softmax_lastdim(x, 0.9);
  CHECK(std::memcmp(s1.data(), s2.data(), s1.size() * sizeof(double)) == 0);
}

TEST_CASE("debug mode flags non-finite results") {
  const bool saved = debug_checks_enabled();
  set_debug_checks(true);
  Tensor64 x = Tensor64::full({1, 1, 1, 2}, 1.0);
  Tensor64 zero(x.shape());
  CHECK_THROWS_AS(ops::div(x, zero), std::runtime_error);
  set_debug_checks(saved);
}
