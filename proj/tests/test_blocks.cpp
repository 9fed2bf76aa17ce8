#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "rshaze/blocks.hpp"

using namespace rshaze;

namespace {

Tensor64 rnd(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor64 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

void randomize(ParamStore64& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.4, 0.4);
  for (auto& e : store.entries())
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = dist(rng);
}

Tensor64 conv_ref(ParamStore64& st, const ConvLayer& c, const Tensor64& x) {
  const Tensor64* b = c.bias.empty() ? nullptr : &st.value(c.bias);
  return ops::conv2d(x, st.value(c.weight), b, c.spec);
}

Tensor64 ln_ref(ParamStore64& st, const LayerNormLayer& l, const Tensor64& x) {
  return ops::layer_norm_channels(x, st.value(l.gamma), st.value(l.beta), l.eps);
}

Tensor64 mat_view(const Tensor64& x) {
  return x.reshaped({x.n(), 1, x.c(), x.h() * x.w()});
}

void check_row_stochastic(const Tensor64& attn) {
  for (std::size_t row = 0; row < attn.size() / attn.w(); ++row) {
    double total = 0;
    for (int j = 0; j < attn.w(); ++j) {
      CHECK(attn[row * attn.w() + j] >= 0.0);
      total += attn[row * attn.w() + j];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

// Reassembles the fusion from pure kernels; also checks the attention map.
Tensor64 itfm_reference(ParamStore64& st, const ItfmParams& p, const Tensor64& xs,
                        const Tensor64& xd) {
  const int n = xs.n(), c = xs.c(), h = xs.h(), w = xs.w();
  const Tensor64 lns = ln_ref(st, p.ln_skip, xs);
  const Tensor64 lnd = ln_ref(st, p.ln_dec, xd);
  const Tensor64 z = ops::concat_channels<double>({&lns, &lnd});
  const Tensor64 qk = conv_ref(st, p.qk_proj, ops::adaptive_avg_pool(z, 1, 1));
  const Tensor64 q = ops::slice_channels(qk, 0, c).reshaped({n, 1, 1, c});
  const Tensor64 k = ops::slice_channels(qk, c, c).reshaped({n, 1, 1, c});
  const Tensor64 logits = ops::matmul(ops::transpose(q), k);
  const Tensor64 attn = ops::softmax_lastdim(logits, st.value(p.alpha)[0]);
  check_row_stochastic(attn);
  const Tensor64 both = ops::concat_channels<double>({&xs, &xd});
  const Tensor64 v = conv_ref(st, p.v_proj, both);
  const Tensor64 fused = ops::matmul(attn, mat_view(v));
  return conv_ref(st, p.out_proj, fused.reshaped({n, c, h, w}));
}

}  // namespace

TEST_CASE("itfm: output shape matches the inputs") {
  std::mt19937_64 rng(1);
  ParamStore64 store;
  const ItfmParams p = make_itfm(store, rng, "itfm", 8);
  Tape64 tape(&store);
  Var out = p.forward(tape, tape.input(rnd({1, 8, 16, 16}, rng)),
                      tape.input(rnd({1, 8, 16, 16}, rng)));
  CHECK(tape.value(out).shape() == Shape{1, 8, 16, 16});
}

TEST_CASE("itfm rejects mismatched inputs") {
  std::mt19937_64 rng(2);
  ParamStore64 store;
  const ItfmParams p = make_itfm(store, rng, "itfm", 8);
  Tape64 tape(&store);
  Var a = tape.input(rnd({1, 8, 8, 8}, rng));
  Var b = tape.input(rnd({1, 8, 8, 10}, rng));
  CHECK_THROWS_AS(p.forward(tape, a, b), std::invalid_argument);
}

TEST_CASE("itfm matches a pure-kernel recomputation, attention rows stochastic") {
  std::mt19937_64 rng(3);
  ParamStore64 store;
  const ItfmParams p = make_itfm(store, rng, "itfm", 8);
  randomize(store, rng);
  const Tensor64 xs = rnd({2, 8, 6, 7}, rng);
  const Tensor64 xd = rnd({2, 8, 6, 7}, rng);

  Tape64 tape(&store);
  const Tensor64& got = tape.value(p.forward(tape, tape.input(xs), tape.input(xd)));
  CHECK(got == itfm_reference(store, p, xs, xd));
}

TEST_CASE("itfm with alpha = 0: uniform attention averages the value channels") {
  std::mt19937_64 rng(4);
  ParamStore64 store;
  const ItfmParams p = make_itfm(store, rng, "itfm", 4);
  randomize(store, rng);
  store.value(p.alpha).fill(0.0);
  // identity out projection exposes the attended map directly
  Tensor64& ow = store.value(p.out_proj.weight);
  ow.fill(0.0);
  for (int i = 0; i < 4; ++i) ow.at(i, i, 0, 0) = 1.0;
  store.value(p.out_proj.bias).fill(0.0);

  const Tensor64 xs = rnd({1, 4, 5, 5}, rng);
  const Tensor64 xd = rnd({1, 4, 5, 5}, rng);
  Tape64 tape(&store);
  const Tensor64 got = tape.value(p.forward(tape, tape.input(xs), tape.input(xd)));

  const Tensor64 both = ops::concat_channels<double>({&xs, &xd});
  const Tensor64 v = conv_ref(store, p.v_proj, both);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      double mean = 0;
      for (int ch = 0; ch < 4; ++ch) mean += v.at(0, ch, y, x);
      mean /= 4;
      for (int ch = 0; ch < 4; ++ch)
        CHECK(got.at(0, ch, y, x) == doctest::Approx(mean).epsilon(1e-12));
    }

  // with zero scale the q/k path is irrelevant: perturbing it cannot move
  // the output
  for (std::size_t i = 0; i < store.value(p.qk_proj.weight).size(); ++i)
    store.value(p.qk_proj.weight)[i] += 0.3;
  Tape64 tape2(&store);
  const Tensor64 again = tape2.value(p.forward(tape2, tape2.input(xs), tape2.input(xd)));
  CHECK(got == again);
}

TEST_CASE("cmim: shapes preserved, freshly built module is the identity") {
  std::mt19937_64 rng(5);
  ParamStore64 store;
  const CmimParams p = make_cmim(store, rng, "cmim", 8, 16);
  CHECK(p.dim == 8);
  const Tensor64 hi = rnd({1, 8, 32, 32}, rng);
  const Tensor64 lo = rnd({1, 16, 16, 16}, rng);
  Tape64 tape(&store);
  auto [oh, ol] = p.forward(tape, tape.input(hi), tape.input(lo));
  CHECK(tape.value(oh).shape() == Shape{1, 8, 32, 32});
  CHECK(tape.value(ol).shape() == Shape{1, 16, 16, 16});
  // out_hi/out_lo projections are zero-initialized, so both paths add zero
  CHECK(tape.value(oh) == hi);
  CHECK(tape.value(ol) == lo);
}

TEST_CASE("cmim rejects wrong resolution ratios and odd dims") {
  std::mt19937_64 rng(6);
  ParamStore64 store;
  const CmimParams p = make_cmim(store, rng, "cmim", 4, 8);
  Tape64 tape(&store);
  Var hi = tape.input(rnd({1, 4, 8, 8}, rng));
  Var lo_bad = tape.input(rnd({1, 8, 8, 8}, rng));
  CHECK_THROWS_AS(p.forward(tape, hi, lo_bad), std::invalid_argument);
  Var hi_odd = tape.input(rnd({1, 4, 7, 8}, rng));
  Var lo = tape.input(rnd({1, 8, 4, 4}, rng));
  CHECK_THROWS_AS(p.forward(tape, hi_odd, lo), std::invalid_argument);
}

TEST_CASE("cmim: one shared attention map matches independent recomputations") {
  std::mt19937_64 rng(7);
  ParamStore64 store;
  const CmimParams p = make_cmim(store, rng, "cmim", 4, 8);
  randomize(store, rng);
  const Tensor64 hi = rnd({2, 4, 8, 8}, rng);
  const Tensor64 lo = rnd({2, 8, 4, 4}, rng);

  Tape64 tape(&store);
  auto [oh, ol] = p.forward(tape, tape.input(hi), tape.input(lo));

  // independent route: rebuild A from pure kernels, enhance each side alone
  const Tensor64 q = conv_ref(store, p.q_proj, ops::pixel_unshuffle(ln_ref(store, p.ln_hi, hi), 2));
  const Tensor64 k = conv_ref(store, p.k_proj, ln_ref(store, p.ln_lo, lo));
  const Tensor64 logits = ops::matmul(mat_view(q), ops::transpose(mat_view(k)));
  const Tensor64 attn = ops::softmax_lastdim(logits, store.value(p.alpha)[0]);
  check_row_stochastic(attn);

  const Tensor64 v_hi = mat_view(conv_ref(store, p.v_hi_proj, hi));
  const Tensor64 e_hi = conv_ref(
      store, p.out_hi_proj, ops::matmul(attn, v_hi).reshaped({2, 4, 8, 8}));
  CHECK(tape.value(oh) == ops::add(hi, e_hi));

  const Tensor64 v_lo = mat_view(conv_ref(store, p.v_lo_proj, lo));
  const Tensor64 e_lo = conv_ref(
      store, p.out_lo_proj, ops::matmul(ops::transpose(attn), v_lo).reshaped({2, 4, 4, 4}));
  CHECK(tape.value(ol) == ops::add(lo, e_lo));
}

TEST_CASE("mpeb: branch schedule follows kernel 2i-1 with dilation/group plan") {
  std::mt19937_64 rng(8);
  ParamStore64 store;
  const MpebParams p = make_mpeb(store, rng, "mpeb", 16, Activation::Gelu);
  const int want_kernel[4] = {1, 3, 5, 7};
  const int want_dilation[4] = {1, 3, 3, 3};
  const int want_groups[4] = {1, 4, 4, 4};
  const int want_padding[4] = {0, 3, 6, 9};
  for (int i = 0; i < 4; ++i) {
    CHECK(p.branch[i].spec.kernel == want_kernel[i]);
    CHECK(p.branch[i].spec.dilation == want_dilation[i]);
    CHECK(p.branch[i].spec.groups == want_groups[i]);
    CHECK(p.branch[i].spec.padding == want_padding[i]);
    CHECK(p.branch[i].spec.in_channels == 4);
    CHECK(p.branch[i].spec.out_channels == 4);
  }
}

TEST_CASE("mpeb: spatial size preserved and zero mlp projection is the identity") {
  std::mt19937_64 rng(9);
  ParamStore64 store;
  const MpebParams p = make_mpeb(store, rng, "mpeb", 16, Activation::Gelu);
  const Tensor64 x = rnd({2, 16, 11, 13}, rng);
  Tape64 tape(&store);
  Var out = p.forward(tape, tape.input(x));
  CHECK(tape.value(out).shape() == x.shape());
  // mlp_project starts zeroed, so the block is exactly the identity
  CHECK(tape.value(out) == x);
}

TEST_CASE("mpeb: parameter count equals the closed-form conv sums") {
  std::mt19937_64 rng(10);
  ParamStore64 store;
  const MpebParams p = make_mpeb(store, rng, "mpeb", 16, Activation::Gelu);
  // quarters of 4 channels: pointwise 4*4+4; depthwise k in {3,5,7}:
  // 4*k^2+4; mlp 16->32->16 pointwise with bias
  const std::size_t want = (4 * 4 + 4) + (4 * 9 + 4) + (4 * 25 + 4) + (4 * 49 + 4) +
                           (16 * 32 + 32) + (32 * 16 + 16);
  CHECK(p.param_count() == want);
  CHECK(store.scalar_count() == want);
}

TEST_CASE("mpeb rejects channel counts not divisible by 4") {
  std::mt19937_64 rng(11);
  ParamStore64 store;
  CHECK_THROWS_AS(make_mpeb(store, rng, "bad", 6, Activation::Gelu), std::invalid_argument);
}

TEST_CASE("fnb: untouched channels pass through the partial stage bit-exactly") {
  std::mt19937_64 rng(12);
  ParamStore64 store;
  const FnbParams p = make_fnb(store, rng, "fnb", 16, Activation::Gelu);
  randomize(store, rng);
  const Tensor64 x = rnd({1, 16, 8, 8}, rng);

  Tape64 tape(&store);
  const Tensor64& got = tape.value(p.forward(tape, tape.input(x)));
  CHECK(got.shape() == Shape{1, 16, 8, 8});

  // independent route, exposing the partial-conv stage
  const Tensor64 touched = conv_ref(store, p.pconv, ops::slice_channels(x, 0, 4));
  const Tensor64 rest = ops::slice_channels(x, 4, 12);
  CHECK(rest == ops::slice_channels(x, 4, 12));  // untouched quarter trio
  const Tensor64 mixed = ops::concat_channels<double>({&touched, &rest});
  const Tensor64 hidden = ops::gelu(conv_ref(store, p.mlp_expand, mixed));
  const Tensor64 y = ops::add(x, conv_ref(store, p.mlp_project, hidden));
  CHECK(got == y);
}

TEST_CASE("fnb: identity pconv kernel and zero mlp give the identity block") {
  std::mt19937_64 rng(13);
  ParamStore64 store;
  const FnbParams p = make_fnb(store, rng, "fnb", 8, Activation::Gelu);
  Tensor64& pw = store.value(p.pconv.weight);
  pw.fill(0.0);
  for (int i = 0; i < 2; ++i) pw.at(i, i, 1, 1) = 1.0;  // 3x3 center tap
  store.value(p.pconv.bias).fill(0.0);
  // mlp_project is already zero-initialized
  const Tensor64 x = rnd({1, 8, 6, 6}, rng);
  Tape64 tape(&store);
  CHECK(tape.value(p.forward(tape, tape.input(x))) == x);
}

TEST_CASE("src head") {
  std::mt19937_64 rng(14);
  const Tensor64 hazy = rnd({1, 3, 4, 4}, rng, 0.0, 1.0);

  SUBCASE("zero gate and bias pass the input through") {
    Tape64 tape;
    Var out = src_apply(tape, tape.input(Tensor64(Shape{1, 4, 4, 4})), tape.input(hazy));
    CHECK(tape.value(out) == hazy);
  }
  SUBCASE("unit gate doubles the input") {
    Tensor64 head(1, 4, 4, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) head.at(0, 0, y, x) = 1.0;
    Tape64 tape;
    const Tensor64& out = tape.value(src_apply(tape, tape.input(head), tape.input(hazy)));
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(2.0 * hazy[i]).epsilon(1e-12));
  }
  SUBCASE("scalar case: K=0.5, B=0.1, hazy=0.4 -> 0.5") {
    Tensor64 head(1, 4, 1, 1);
    head.at(0, 0, 0, 0) = 0.5;
    for (int c = 1; c < 4; ++c) head.at(0, c, 0, 0) = 0.1;
    Tape64 tape;
    const Tensor64& out = tape.value(src_apply(
        tape, tape.input(head), tape.input(Tensor64::full({1, 3, 1, 1}, 0.4))));
    for (int c = 0; c < 3; ++c)
      CHECK(out.at(0, c, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("channel contract enforced") {
    Tape64 tape;
    Var head5 = tape.input(Tensor64(Shape{1, 5, 4, 4}));
    CHECK_THROWS_AS(src_apply(tape, head5, tape.input(hazy)), std::invalid_argument);
  }
}

TEST_CASE("blocks preserve spatial dimensions on assorted sizes") {
  std::mt19937_64 rng(15);
  ParamStore64 store;
  const ItfmParams itfm = make_itfm(store, rng, "i", 8);
  const MpebParams mpeb = make_mpeb(store, rng, "m", 8, Activation::Gelu);
  const FnbParams fnb = make_fnb(store, rng, "f", 8, Activation::Gelu);
  randomize(store, rng);
  for (const auto [h, w] : {std::pair{5, 9}, std::pair{12, 7}, std::pair{16, 16}}) {
    const Tensor64 x = rnd({1, 8, h, w}, rng);
    const Tensor64 y = rnd({1, 8, h, w}, rng);
    Tape64 tape(&store);
    CHECK(tape.value(itfm.forward(tape, tape.input(x), tape.input(y))).shape() == x.shape());
    CHECK(tape.value(mpeb.forward(tape, tape.input(x))).shape() == x.shape());
    CHECK(tape.value(fnb.forward(tape, tape.input(x))).shape() == x.shape());
  }
}
