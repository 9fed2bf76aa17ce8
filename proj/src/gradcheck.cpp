#include "rshaze/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "rshaze/blocks.hpp"
#include "rshaze/network.hpp"
#include "rshaze/train.hpp"

namespace rshaze::gradcheck {

namespace {

// Composite functions accumulate enough f64 rounding that a single tiny
// step drowns low-magnitude coordinates in cancellation noise; the ladder
// lets each coordinate match at whichever step balances noise and
// truncation.
const std::vector<double> kCompositeSteps = {1e-3, 3e-4, 1e-4, 1e-5};

Tensor64 random_tensor(Shape s, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor64 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

/// Replaces every parameter with generic random values; gradient rules are
/// checked away from special points (zero-initialized projections carry no
/// first-order signal and only produce finite-difference noise).
void randomize(ParamStore64& store, std::mt19937_64& rng, double lo = -0.4, double hi = 0.4) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& e : store.entries())
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = dist(rng);
}

/// Random-weighted sum that makes the scalar objective sensitive to every
/// output coordinate. The weights freeze on first use: the checked function
/// must be identical across finite-difference evaluations.
class WeightedSum {
 public:
  explicit WeightedSum(std::uint64_t seed) : rng_(seed) {}
  Var operator()(Tape64& tape, Var y) {
    if (weights_.size() == 0)
      weights_ = random_tensor(tape.value(y).shape(), rng_, -1.0, 1.0);
    return tape.sum_all(tape.mul(y, tape.input(weights_)));
  }

 private:
  std::mt19937_64 rng_;
  Tensor64 weights_;
};

using CaseFn = std::function<double(std::uint64_t seed, int coords)>;

double run_case(const CaseFn& fn, const SuiteConfig& cfg) {
  double worst = 0.0;
  for (int s = 0; s < cfg.seeds; ++s)
    worst = std::max(worst, fn(cfg.base_seed + static_cast<std::uint64_t>(s),
                               cfg.coords_per_tensor));
  return worst;
}

double check_conv(std::uint64_t seed, int coords, ops::ConvSpec spec, Shape in_shape) {
  std::mt19937_64 rng(seed);
  ParamStore64 store;
  store.create("x", random_tensor(in_shape, rng));
  store.create("w", random_tensor(spec.weight_shape(), rng));
  if (spec.bias) store.create("b", random_tensor({1, spec.out_channels, 1, 1}, rng));
  WeightedSum ws(seed ^ 0xabcdull);
  auto f = [&](Tape64& t) {
    std::optional<Var> b;
    if (spec.bias) b = t.param("b");
    return ws(t, t.conv2d(t.param("x"), t.param("w"), b, spec));
  };
  return grad_check(f, store, {{1e-5}, coords, seed}).max_rel_error;
}

template <typename MakeBlock, typename Forward>
double check_block(std::uint64_t seed, int coords, const std::vector<Shape>& input_shapes,
                   MakeBlock make_block, Forward forward) {
  std::mt19937_64 rng(seed);
  ParamStore64 store;
  for (std::size_t i = 0; i < input_shapes.size(); ++i)
    store.create("in" + std::to_string(i), Tensor64(input_shapes[i]));
  auto block = make_block(store, rng);
  randomize(store, rng);
  WeightedSum ws(seed ^ 0xabcdull);
  auto f = [&](Tape64& t) {
    std::vector<Var> inputs;
    for (std::size_t i = 0; i < input_shapes.size(); ++i)
      inputs.push_back(t.param("in" + std::to_string(i)));
    return ws(t, forward(t, block, inputs));
  };
  return grad_check(f, store, {kCompositeSteps, coords, seed}).max_rel_error;
}

double check_full_network(std::uint64_t seed, int coords) {
  NetConfig cfg;
  cfg.base_channels = 8;
  cfg.depths = {1, 1, 1};
  ParamStore64 store;
  Net net = build_net(cfg, seed, store);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  randomize(store, rng, -0.2, 0.2);
  store.create("input", random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
  const Tensor64 target = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);

  // L1 is kinked at zero; freeze a mask excluding |pred - target| < 1e-3 so
  // the checked objective is smooth in the finite-difference neighborhood.
  Tensor64 mask(target.shape());
  {
    Tape64 tape(&store);
    const Tensor64& pred = tape.value(net.forward(tape, tape.param("input")));
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = std::fabs(pred[i] - target[i]) >= 1e-3 ? 1.0 : 0.0;
  }
  auto f = [&](Tape64& t) {
    Var pred = net.forward(t, t.param("input"));
    Var diff = t.abs(t.sub(pred, t.input(target)));
    return t.mean_all(t.mul(diff, t.input(mask)));
  };
  return grad_check(f, store, {kCompositeSteps, coords, seed}).max_rel_error;
}

}  // namespace

std::vector<CaseResult> run_suite(const SuiteConfig& cfg) {
  std::vector<std::pair<std::string, CaseFn>> cases;

  // -- tensor ops --
  cases.emplace_back("conv2d 3x3 same", [](std::uint64_t s, int c) {
    return check_conv(s, c, {4, 6, 3, 1, 1, 1, 1, true}, {2, 4, 6, 5});
  });
  cases.emplace_back("conv2d 1x1", [](std::uint64_t s, int c) {
    return check_conv(s, c, {6, 4, 1, 1, 0, 1, 1, true}, {2, 6, 4, 4});
  });
  cases.emplace_back("conv2d depthwise dilated", [](std::uint64_t s, int c) {
    return check_conv(s, c, {4, 4, 3, 1, 3, 3, 4, true}, {2, 4, 8, 8});
  });
  cases.emplace_back("conv2d strided grouped", [](std::uint64_t s, int c) {
    return check_conv(s, c, {4, 6, 3, 2, 1, 1, 2, false}, {2, 4, 7, 9});
  });

  cases.emplace_back("matmul", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("a", random_tensor({2, 1, 3, 4}, rng));
    store.create("b", random_tensor({2, 1, 4, 5}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) { return ws(t, t.matmul(t.param("a"), t.param("b"))); };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("transpose", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("a", random_tensor({2, 1, 3, 5}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) { return ws(t, t.transpose(t.param("a"))); };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("softmax_lastdim scaled", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 1, 4, 6}, rng, -1.0, 1.0));
    store.create("alpha", Tensor64::scalar(0.7));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      return ws(t, t.softmax_lastdim(t.param("x"), t.param("alpha")));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("layer_norm_channels", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 5, 3, 4}, rng, -1.0, 1.0));
    store.create("g", random_tensor({1, 5, 1, 1}, rng, 0.5, 1.5));
    store.create("b", random_tensor({1, 5, 1, 1}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      return ws(t, t.layer_norm_channels(t.param("x"), t.param("g"), t.param("b"), 1e-6));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("adaptive_avg_pool", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 3, 6, 7}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) { return ws(t, t.adaptive_avg_pool(t.param("x"), 1, 1)); };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("pixel shuffle/unshuffle", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 4, 4, 6}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      return ws(t, t.pixel_shuffle(t.pixel_unshuffle(t.param("x"), 2), 2));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("concat/slice channels", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("a", random_tensor({2, 3, 4, 4}, rng));
    store.create("b", random_tensor({2, 2, 4, 4}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      Var cat = t.concat_channels({t.param("a"), t.param("b")});
      return ws(t, t.slice_channels(cat, 1, 3));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("elementwise add/sub/mul/div", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 2, 3, 3}, rng));
    store.create("y", random_tensor({2, 2, 3, 3}, rng, 0.5, 1.5));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      Var x = t.param("x"), y = t.param("y");
      return ws(t, t.div(t.mul(t.add(x, y), t.sub(x, y)), y));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("gelu", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 2, 4, 4}, rng, -2.0, 2.0));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) { return ws(t, t.gelu(t.param("x"))); };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("relu (away from kink)", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    Tensor64 x = random_tensor({2, 2, 4, 4}, rng, -2.0, 2.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::fabs(x[i]) < 0.05) x[i] = 0.1;
    store.create("x", std::move(x));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) { return ws(t, t.relu(t.param("x"))); };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("abs (away from kink)", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    Tensor64 x = random_tensor({2, 2, 4, 4}, rng, -2.0, 2.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::fabs(x[i]) < 0.05) x[i] = 0.1;
    store.create("x", std::move(x));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) { return ws(t, t.abs(t.param("x"))); };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("scale_channels", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({2, 3, 4, 4}, rng));
    store.create("gate", random_tensor({2, 1, 4, 4}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      return ws(t, t.scale_channels(t.param("x"), t.param("gate")));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("reshape/pad/crop", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({1, 3, 5, 6}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      Var padded = t.pad_bottom_right(t.param("x"), 3, 2);
      Var cropped = t.crop_top_left(padded, 6, 7);
      return ws(t, t.reshape(cropped, Shape{1, 1, 3, 42}));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("gradient accumulation (shared input)", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("x", random_tensor({1, 2, 3, 3}, rng));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      Var x = t.param("x");
      return ws(t, t.add(t.mul(x, x), x));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  // -- blocks --
  cases.emplace_back("itfm", [](std::uint64_t s, int c) {
    return check_block(
        s, c, {{1, 8, 6, 6}, {1, 8, 6, 6}},
        [](ParamStore64& st, std::mt19937_64& rng) { return make_itfm(st, rng, "itfm", 8); },
        [](Tape64& t, const ItfmParams& p, const std::vector<Var>& in) {
          return p.forward(t, in[0], in[1]);
        });
  });
  cases.emplace_back("cmim", [](std::uint64_t s, int c) {
    return check_block(
        s, c, {{1, 4, 8, 8}, {1, 8, 4, 4}},
        [](ParamStore64& st, std::mt19937_64& rng) { return make_cmim(st, rng, "cmim", 4, 8); },
        [](Tape64& t, const CmimParams& p, const std::vector<Var>& in) {
          auto [hi, lo] = p.forward(t, in[0], in[1]);
          // fold both outputs into one scalar objective
          return t.add(t.mean_all(t.mul(hi, hi)), t.mean_all(t.mul(lo, lo)));
        });
  });
  cases.emplace_back("mpeb", [](std::uint64_t s, int c) {
    return check_block(
        s, c, {{1, 8, 8, 8}},
        [](ParamStore64& st, std::mt19937_64& rng) {
          return make_mpeb(st, rng, "mpeb", 8, Activation::Gelu);
        },
        [](Tape64& t, const MpebParams& p, const std::vector<Var>& in) {
          return p.forward(t, in[0]);
        });
  });
  cases.emplace_back("fnb", [](std::uint64_t s, int c) {
    return check_block(
        s, c, {{1, 8, 6, 6}},
        [](ParamStore64& st, std::mt19937_64& rng) {
          return make_fnb(st, rng, "fnb", 8, Activation::Gelu);
        },
        [](Tape64& t, const FnbParams& p, const std::vector<Var>& in) {
          return p.forward(t, in[0]);
        });
  });
  cases.emplace_back("src head", [](std::uint64_t s, int coords) {
    std::mt19937_64 rng(s);
    ParamStore64 store;
    store.create("head", random_tensor({1, 4, 5, 5}, rng));
    store.create("hazy", random_tensor({1, 3, 5, 5}, rng, 0.0, 1.0));
    WeightedSum ws(s ^ 0xabcdull);
    auto f = [&](Tape64& t) {
      return ws(t, src_apply(t, t.param("head"), t.param("hazy")));
    };
    return grad_check(f, store, {{1e-5}, coords, s}).max_rel_error;
  });

  cases.emplace_back("full network (L1, 1x3x16x16)", check_full_network);

  std::vector<CaseResult> results;
  for (const auto& [name, fn] : cases) {
    CaseResult r;
    r.name = name;
    r.max_rel_error = run_case(fn, cfg);
    r.pass = r.max_rel_error < cfg.tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

bool all_passed(const std::vector<CaseResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace rshaze::gradcheck
