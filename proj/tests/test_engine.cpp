#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nestad/engine.hpp"
#include "support/gen.hpp"
#include "support/testutil.hpp"

using namespace nestad;

namespace {

std::vector<double> randu(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<double> grad_of(const Gradients& g, const Tensor& leaf) {
  auto it = g.find(leaf.id());
  REQUIRE(it != g.end());
  auto sp = data_of(it->second);
  return {sp.begin(), sp.end()};
}

}  // namespace

TEST_CASE("forward values flow through the tape") {
  Engine eng;
  Tensor x = eng.input(Shape{2, 2}, {1, 2, 3, 4}, "x");
  Tensor w = eng.weight(Shape{2, 2}, {1, 0, 0, 1}, "w");
  Tensor y = eng.apply("matmul", x, w);
  auto d = data_of(y);
  CHECK(std::vector<double>(d.begin(), d.end()) == std::vector<double>{1, 2, 3, 4});

  Tensor s = eng.apply("const_mul", y, 2.0);
  Tensor r = eng.apply("reduce_sum", s);
  CHECK(shape_of(r) == Shape{1});
  CHECK(data_of(r)[0] == 20.0);
  CHECK(eng.stats().forward_kernel_count == 3);
}

TEST_CASE("hand-checked gradient of a quadratic") {
  // loss = sum(x * x), so dloss/dx = 2x exactly
  Engine eng;
  Tensor x = eng.weight(Shape{3}, {1.5, -2.0, 0.25}, "x");
  Tensor y = eng.apply("mul", x, x);
  Tensor loss = eng.apply("reduce_sum", y);
  Gradients g = eng.backward(loss);
  CHECK(grad_of(g, x) == std::vector<double>{3.0, -4.0, 0.5});
}

TEST_CASE("gradients accumulate over multiple consumers") {
  // loss = sum(x*a) + sum(x*b) -> dx = a + b
  Engine eng;
  Tensor x = eng.weight(Shape{2}, {1.0, 2.0}, "x");
  Tensor a = eng.weight(Shape{2}, {3.0, 5.0}, "a");
  Tensor b = eng.weight(Shape{2}, {7.0, 11.0}, "b");
  Tensor s1 = eng.apply("reduce_sum", eng.apply("mul", x, a));
  Tensor s2 = eng.apply("reduce_sum", eng.apply("mul", x, b));
  Tensor loss = eng.apply("add", s1, s2);
  Gradients g = eng.backward(loss);
  CHECK(grad_of(g, x) == std::vector<double>{10.0, 16.0});
  CHECK(grad_of(g, a) == std::vector<double>{1.0, 2.0});
}

TEST_CASE("structural ops pull back correctly against finite differences") {
  std::mt19937_64 rng(31);
  const double h = 1e-6;

  auto fd_check = [&](auto&& build, std::vector<std::vector<double>> leaves,
                      std::vector<Shape> shapes) {
    // analytic gradients
    std::vector<std::vector<double>> analytic;
    {
      Engine eng;
      std::vector<Tensor> ts;
      for (std::size_t i = 0; i < leaves.size(); ++i)
        ts.push_back(eng.weight(shapes[i], leaves[i], "l" + std::to_string(i)));
      Tensor loss = build(eng, ts);
      Gradients g = eng.backward(loss);
      for (auto& t : ts) analytic.push_back(grad_of(g, t));
    }
    // numeric gradients, one element at a time
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      for (std::size_t e = 0; e < leaves[li].size(); ++e) {
        auto eval = [&](double delta) {
          Engine eng;
          std::vector<Tensor> ts;
          for (std::size_t i = 0; i < leaves.size(); ++i) {
            auto d = leaves[i];
            if (i == li) d[e] += delta;
            ts.push_back(eng.weight(shapes[i], d, "l" + std::to_string(i)));
          }
          Tensor loss = build(eng, ts);
          return data_of(loss)[0];
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        const bool ok = testutil::rel_err(analytic[li][e], fd) < 1e-5 ||
                        std::abs(analytic[li][e] - fd) < 1e-7;
        CHECK_MESSAGE(ok, "leaf " << li << " elem " << e << " analytic " << analytic[li][e]
                                  << " fd " << fd);
      }
    }
  };

  SUBCASE("matmul") {
    fd_check(
        [](Engine& e, std::vector<Tensor>& t) {
          return e.apply("reduce_sum", e.apply("matmul", t[0], t[1]));
        },
        {randu(rng, 6), randu(rng, 12)}, {Shape{2, 3}, Shape{3, 4}});
  }
  SUBCASE("bias_add") {
    fd_check(
        [](Engine& e, std::vector<Tensor>& t) {
          return e.apply("reduce_sum", e.apply("bias_add", t[0], t[1]));
        },
        {randu(rng, 6), randu(rng, 3)}, {Shape{2, 3}, Shape{3}});
  }
  SUBCASE("transpose") {
    fd_check(
        [](Engine& e, std::vector<Tensor>& t) {
          // weight the transposed entries so the gradient is not uniform
          return e.apply("reduce_sum", e.apply("mul", e.apply("transpose", t[0]), t[1]));
        },
        {randu(rng, 6), randu(rng, 6)}, {Shape{2, 3}, Shape{3, 2}});
  }
  SUBCASE("col_sum") {
    fd_check(
        [](Engine& e, std::vector<Tensor>& t) {
          return e.apply("reduce_sum", e.apply("mul", e.apply("col_sum", t[0]), t[1]));
        },
        {randu(rng, 8), randu(rng, 4)}, {Shape{2, 4}, Shape{4}});
  }
  SUBCASE("mse_loss") {
    fd_check(
        [](Engine& e, std::vector<Tensor>& t) { return e.apply("mse_loss", t[0], t[1]); },
        {randu(rng, 6), randu(rng, 6)}, {Shape{2, 3}, Shape{2, 3}});
  }
}

TEST_CASE("random programs agree with finite differences") {
  std::mt19937_64 rng(32);
  testgen::GenOptions opt;
  opt.allow_kinks = false;  // differencing near a kink is meaningless
  int checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    testgen::Program p = testgen::make_program(rng, opt);
    testgen::RunResult r = testgen::run_dynamic(p, EngineConfig{});
    for (auto& [slot, grad] : r.grads) {
      for (std::size_t e = 0; e < grad.size(); ++e) {
        const double fd = (testgen::loss_at(p, slot, (std::int64_t)e, 1e-6) -
                           testgen::loss_at(p, slot, (std::int64_t)e, -1e-6)) /
                          2e-6;
        const bool ok = testutil::rel_err(grad[e], fd) < 1e-4 || std::abs(grad[e] - fd) < 1e-6;
        CHECK_MESSAGE(ok, "trial " << trial << " slot " << slot << " elem " << e << " analytic "
                                   << grad[e] << " fd " << fd);
        ++checked;
      }
    }
  }
  CHECK(checked > 200);
}

TEST_CASE("backward validates its inputs") {
  Engine eng;
  Tensor x = eng.weight(Shape{2}, {1.0, 2.0}, "x");
  Tensor y = eng.apply("mul", x, x);
  CHECK_THROWS_AS(eng.backward(y), std::invalid_argument);  // not a scalar

  Tensor loss = eng.apply("reduce_sum", y);
  Gradients g = eng.backward(loss);
  CHECK_THROWS_AS(eng.backward(loss), std::logic_error);  // tape already consumed
}

TEST_CASE("apply validates shapes and operands") {
  Engine eng;
  Tensor a = eng.input(Shape{2, 3}, std::vector<double>(6, 1.0), "a");
  Tensor b = eng.input(Shape{2, 2}, std::vector<double>(4, 1.0), "b");
  CHECK_THROWS_AS(eng.apply("add", a, b), std::invalid_argument);
  CHECK_THROWS_AS(eng.apply("matmul", a, b), std::invalid_argument);
  CHECK_THROWS_AS(eng.apply("definitely_not_an_op", a), std::invalid_argument);
  Tensor empty;
  CHECK_THROWS_AS(eng.apply("neg", empty), std::invalid_argument);
}

TEST_CASE("unused leaves stay out of the gradient map") {
  Engine eng;
  Tensor x = eng.weight(Shape{2}, {1.0, 2.0}, "x");
  Tensor unused = eng.weight(Shape{2}, {3.0, 4.0}, "unused");
  Tensor loss = eng.apply("reduce_sum", eng.apply("mul", x, x));
  Gradients g = eng.backward(loss);
  CHECK(g.count(x.id()) == 1);
  CHECK(g.count(unused.id()) == 0);
}

TEST_CASE("retained bytes drain to zero after teardown") {
  EngineConfig cfg;
  cfg.event_log = true;
  Engine eng(cfg);
  std::mt19937_64 rng(33);
  Tensor x = eng.weight(Shape{4, 4}, randu(rng, 16), "x");
  Tensor h1 = eng.apply("tanh", eng.apply("mul", x, x));
  Tensor loss = eng.apply("reduce_sum", h1);
  h1.reset();
  CHECK(eng.ledger().live_retained() > 0);

  Gradients g = eng.backward(loss);
  loss.reset();
  g.clear();
  CHECK(eng.ledger().live_bytes(Category::kIntermediate) == 0);
  CHECK(eng.ledger().live_bytes(Category::kFadDerivative) == 0);
  CHECK(eng.ledger().live_bytes(Category::kGradient) == 0);
  // the weight is still held by our handle
  CHECK(eng.ledger().live_bytes(Category::kWeight) == 128);

  // every intermediate alloc has a matching release in the log
  std::map<std::int64_t, int> open;
  for (const LedgerEvent& ev : eng.ledger().events()) {
    if (ev.kind == LedgerEvent::Kind::kAlloc && ev.category == Category::kIntermediate)
      open[ev.tensor_id]++;
    if (ev.kind == LedgerEvent::Kind::kRelease && ev.category == Category::kIntermediate)
      open[ev.tensor_id]--;
  }
  for (auto& [id, n] : open) CHECK_MESSAGE(n == 0, "tensor " << id);
}

TEST_CASE("serial and parallel execution produce identical numbers") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    testgen::Program p = testgen::make_program(rng);
    EngineConfig ser;
    EngineConfig par;
    par.exec = kernels::Exec::kParallel;
    testgen::RunResult a = testgen::run_dynamic(p, ser);
    testgen::RunResult b = testgen::run_dynamic(p, par);
    CHECK(a.loss == b.loss);
    CHECK(a.grads == b.grads);
  }
}

TEST_CASE("f32 storage rounds stored tensors") {
  EngineConfig cfg;
  cfg.f32_storage = true;
  Engine eng(cfg);
  Tensor x = eng.weight(Shape{2}, {0.1, 0.7}, "x");
  Tensor y = eng.apply("const_mul", x, 3.0);
  auto d = data_of(y);
  CHECK(d[0] == (double)(float)((double)(float)0.1 * 3.0));
  CHECK(eng.ledger().live_bytes(Category::kIntermediate) == 8);  // 2 elems * 4 bytes
}

TEST_CASE("stats count forward work and tape growth") {
  Engine eng;
  Tensor x = eng.weight(Shape{2}, {1.0, -1.0}, "x");
  Tensor a = eng.apply("sigmoid", x);
  Tensor b = eng.apply("mul", a, x);
  Tensor loss = eng.apply("reduce_sum", b);
  CHECK(eng.stats().forward_kernel_count == 3);
  CHECK(eng.stats().tape_node_count == 3);
  CHECK(eng.stats().recompute_count == 0);
  Gradients g = eng.backward(loss);
  CHECK(eng.stats().backward_node_count == 3);
  CHECK(eng.stats().recompute_count == 0);  // plain mode never replays
}
