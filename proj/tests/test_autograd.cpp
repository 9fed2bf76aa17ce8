#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "rshaze/autograd.hpp"

using namespace rshaze;

namespace {

Tensor64 rnd(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor64 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("ParamStore bookkeeping") {
  ParamStore64 store;
  store.create("w", Tensor64(Shape{1, 2, 3, 3}));
  CHECK_THROWS_AS(store.create("w", Tensor64(Shape{1, 1, 1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(store.value("missing"), std::invalid_argument);
  store.create("b", Tensor64(Shape{1, 2, 1, 1}));
  CHECK(store.tensor_count() == 2);
  CHECK(store.scalar_count() == 18 + 2);

  store.grad("w").fill(3.0);
  store.zero_grads();
  for (std::size_t i = 0; i < store.grad("w").size(); ++i) CHECK(store.grad("w")[i] == 0.0);
}

TEST_CASE("backward of sum(x) is all ones") {
  std::mt19937_64 rng(1);
  ParamStore64 store;
  store.create("x", rnd({2, 3, 4, 4}, rng));
  Tape64 tape(&store);
  tape.backward(tape.sum_all(tape.param("x")));
  for (std::size_t i = 0; i < store.grad("x").size(); ++i) CHECK(store.grad("x")[i] == 1.0);
}

TEST_CASE("backward of sum(matmul(A, B)): dA = ones * B^T") {
  std::mt19937_64 rng(2);
  ParamStore64 store;
  store.create("A", rnd({1, 1, 3, 4}, rng));
  store.create("B", rnd({1, 1, 4, 5}, rng));
  {
    Tape64 tape(&store);
    tape.backward(tape.sum_all(tape.matmul(tape.param("A"), tape.param("B"))));
  }
  const Tensor64& b = store.value("B");
  const Tensor64& ga = store.grad("A");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      double want = 0;
      for (int j = 0; j < 5; ++j) want += b.at(0, 0, k, j);
      CHECK(ga.at(0, 0, i, k) == doctest::Approx(want).epsilon(1e-12));
    }
  // cross-check the same identity with finite differences
  auto f = [](Tape64& t) { return t.sum_all(t.matmul(t.param("A"), t.param("B"))); };
  CHECK(grad_check(f, store, {{1e-5}, 0, 2}).max_rel_error < 1e-8);
}

TEST_CASE("parameter not used in the loss keeps a zero gradient") {
  std::mt19937_64 rng(3);
  ParamStore64 store;
  store.create("used", rnd({1, 1, 2, 2}, rng));
  store.create("unused", rnd({1, 1, 2, 2}, rng));
  Tape64 tape(&store);
  tape.backward(tape.sum_all(tape.param("used")));
  for (std::size_t i = 0; i < 4; ++i) CHECK(store.grad("unused")[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss and double consumption") {
  std::mt19937_64 rng(4);
  ParamStore64 store;
  store.create("x", rnd({1, 1, 2, 2}, rng));
  Tape64 tape(&store);
  Var x = tape.param("x");
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  Var loss = tape.sum_all(x);
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("gradients accumulate additively across multiple uses") {
  std::mt19937_64 rng(5);
  const Tensor64 x0 = rnd({1, 2, 3, 3}, rng);
  const Tensor64 c1 = rnd({1, 2, 3, 3}, rng);
  const Tensor64 c2 = rnd({1, 2, 3, 3}, rng);

  // single tape, x feeding two paths
  ParamStore64 both;
  both.create("x", x0);
  {
    Tape64 tape(&both);
    Var x = tape.param("x");
    Var loss = tape.add(tape.sum_all(tape.mul(x, tape.input(c1))),
                        tape.sum_all(tape.mul(x, tape.input(c2))));
    tape.backward(loss);
  }
  // two independent single-path tapes, gradients summed by the store
  ParamStore64 split;
  split.create("x", x0);
  for (const Tensor64* c : {&c1, &c2}) {
    Tape64 tape(&split);
    tape.backward(tape.sum_all(tape.mul(tape.param("x"), tape.input(*c))));
  }
  for (std::size_t i = 0; i < x0.size(); ++i)
    CHECK(both.grad("x")[i] == doctest::Approx(split.grad("x")[i]).epsilon(1e-12));
}

TEST_CASE("grad_check: exact for linear maps") {
  std::mt19937_64 rng(6);
  ParamStore64 store;
  store.create("x", rnd({1, 2, 3, 3}, rng));
  const Tensor64 w = rnd({1, 2, 3, 3}, rng);
  auto f = [&](Tape64& t) { return t.sum_all(t.mul(t.param("x"), t.input(w))); };
  CHECK(grad_check(f, store, {{1e-5}, 0, 6}).max_rel_error < 1e-10);
}

TEST_CASE("sum(softmax(x)) has vanishing gradients") {
  std::mt19937_64 rng(7);
  ParamStore64 store;
  store.create("x", rnd({1, 1, 4, 6}, rng, -2.0, 2.0));
  store.create("alpha", Tensor64::scalar(1.0));
  Tape64 tape(&store);
  tape.backward(tape.sum_all(tape.softmax_lastdim(tape.param("x"), tape.param("alpha"))));
  // each row sums to a constant, so the loss is flat in x and alpha
  for (std::size_t i = 0; i < store.grad("x").size(); ++i)
    CHECK(std::fabs(store.grad("x")[i]) < 1e-12);
  CHECK(std::fabs(store.grad("alpha")[0]) < 1e-12);
}

TEST_CASE("param leases are memoized per tape") {
  std::mt19937_64 rng(8);
  ParamStore64 store;
  store.create("x", rnd({1, 1, 2, 2}, rng));
  Tape64 tape(&store);
  Var a = tape.param("x");
  Var b = tape.param("x");
  CHECK(a.id == b.id);
}

TEST_CASE("grad before backward is rejected") {
  ParamStore64 store;
  store.create("x", Tensor64::full({1, 1, 1, 2}, 1.0));
  Tape64 tape(&store);
  Var x = tape.param("x");
  CHECK_THROWS_AS(tape.grad(x), std::logic_error);
}
