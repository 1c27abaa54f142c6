#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nestad/activations.hpp"
#include "nestad/mlp.hpp"
#include "nestad/static_graph.hpp"
#include "support/testutil.hpp"

using namespace nestad;

namespace {

double ref_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double ref_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double ref_activation(const std::string& name, double x) {
  if (name == "relu") return x > 0 ? x : 0.0;
  if (name == "sigmoid") return ref_sigmoid(x);
  if (name == "tanh") return std::tanh(x);
  if (name == "swish") return x * ref_sigmoid(x);
  if (name == "mish") return x * std::tanh(ref_softplus(x));
  // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  const double inner = std::sqrt(2.0 / 3.14159265358979323846) * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

std::vector<double> act_values(const Activation& act, const std::vector<double>& xs, Mode mode) {
  EngineConfig cfg;
  cfg.mode = mode;
  Engine eng(cfg);
  Tensor x = eng.weight(Shape{(std::int64_t)xs.size()}, xs, "x");
  Tensor y = apply_activation(eng, act, x);
  auto sp = data_of(y);
  return {sp.begin(), sp.end()};
}

MlpConfig small_cfg(const std::string& act, Mode mode) {
  MlpConfig cfg;
  cfg.widths = {2, 5, 4, 1};
  cfg.activation = act;
  cfg.mode = mode;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("activation compositions match their closed forms") {
  for (const std::string& name : activation_names()) {
    CAPTURE(name);
    std::vector<double> xs;
    for (double x = -4.0; x <= 4.0; x += 0.29) xs.push_back(x);
    xs.push_back(0.0);
    const std::vector<double> got = act_values(activation(name), xs, Mode::kBackprop);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double want = ref_activation(name, xs[i]);
      CHECK_MESSAGE(std::abs(got[i] - want) < 1e-12 * (1 + std::abs(want)),
                    name << "(" << xs[i] << ") = " << got[i] << ", want " << want);
    }
  }
}

TEST_CASE("pinned activation values") {
  auto one = [](const char* name, double x, Mode m) {
    return act_values(activation(name), {x}, m)[0];
  };
  for (Mode m : {Mode::kBackprop, Mode::kFad, Mode::kRecompute}) {
    CHECK(one("gelu", 0.0, m) == 0.0);
    CHECK(one("mish", 0.0, m) == 0.0);
    CHECK(one("relu", -3.0, m) == 0.0);
    CHECK(one("swish", 1.0, m) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  }
}

TEST_CASE("the same recipe drives the engine and the graph") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> dist(-2.5, 2.5);
  std::vector<double> xs(7);
  for (double& v : xs) v = dist(rng);

  for (const std::string& name : activation_names()) {
    CAPTURE(name);
    const Activation& act = activation(name);
    const std::vector<double> dynamic = act_values(act, xs, Mode::kBackprop);

    StaticGraph g;
    g.add("input", {}, {(double)xs.size()});
    const std::int64_t out = emit_activation(g, act, 0);
    g.outputs = {out};
    EvalResult r = interpret(g, {{0, xs}});
    CHECK(r.values[(std::size_t)out] == dynamic);  // same kernels, same order
  }
}

TEST_CASE("activation lookup") {
  CHECK(activation_names() ==
        std::vector<std::string>{"gelu", "mish", "relu", "sigmoid", "swish", "tanh"});
  CHECK_THROWS_AS(activation("selu"), std::invalid_argument);
  CHECK(activation("swish").steps.size() == 2);
  CHECK(activation("gelu").steps.size() == 8);
}

TEST_CASE("parameter initialization is seeded and bounded") {
  MlpConfig cfg = small_cfg("swish", Mode::kBackprop);
  MlpParams a = init_params(cfg);
  MlpParams b = init_params(cfg);
  CHECK(a.weights == b.weights);
  CHECK(a.biases == b.biases);
  REQUIRE(a.weights.size() == 3);
  CHECK(a.weights[0].size() == 10);
  CHECK(a.weights[1].size() == 20);
  CHECK(a.weights[2].size() == 4);
  CHECK(a.biases[0].size() == 5);
  for (const auto& w : a.weights)
    for (double v : w) CHECK(std::abs(v) <= 0.1);

  cfg.seed = 8;
  MlpParams c = init_params(cfg);
  CHECK(a.weights != c.weights);

  cfg.widths = {4};
  CHECK_THROWS_AS(init_params(cfg), std::invalid_argument);
}

TEST_CASE("batches pair inputs with a sine target") {
  MlpConfig cfg;
  cfg.widths = {3, 4, 2};
  Batch b = make_batch(cfg, 5, 99);
  REQUIRE(b.x.size() == 15);
  REQUIRE(b.y.size() == 10);
  for (double v : b.x) CHECK(std::abs(v) <= 1.0);
  for (int r = 0; r < 5; ++r) {
    const double s = b.x[(std::size_t)(r * 3)] + b.x[(std::size_t)(r * 3 + 1)] +
                     b.x[(std::size_t)(r * 3 + 2)];
    CHECK(b.y[(std::size_t)(r * 2)] == std::sin(s));
    CHECK(b.y[(std::size_t)(r * 2 + 1)] == std::sin(s + 1.0));
  }
  Batch again = make_batch(cfg, 5, 99);
  CHECK(b.x == again.x);
  Batch other = make_batch(cfg, 5, 100);
  CHECK(b.x != other.x);
}

TEST_CASE("a zero learning rate leaves parameters alone") {
  MlpConfig cfg = small_cfg("gelu", Mode::kBackprop);
  MlpParams params = init_params(cfg);
  const MlpParams before = params;
  Batch batch = make_batch(cfg, 4, 11);
  StepResult r = train_step(cfg, params, batch, 0.0);
  CHECK(params.weights == before.weights);
  CHECK(params.biases == before.biases);
  CHECK(r.loss == forward_loss(cfg, params, batch));
}

TEST_CASE("analytic gradients survive finite-difference checking") {
  for (const std::string& name : activation_names()) {
    for (Mode mode : {Mode::kBackprop, Mode::kFad, Mode::kRecompute}) {
      CAPTURE(name);
      MlpConfig cfg = small_cfg(name, mode);
      GradcheckReport rep = gradcheck(cfg, /*rows=*/3);
      CHECK_MESSAGE(rep.ok, name << " mode " << (int)mode << ": max rel " << rep.max_rel_err
                                 << " at " << rep.worst);
    }
  }
}

TEST_CASE("a wrong derivative in the registry is caught") {
  Registry broken;
  for (const auto& [name, def] : Registry::builtin().all()) {
    OpDef d = def;
    if (name == "sigmoid") {
      d.d0 = [](double, double, double out, double) { return out; };  // drops (1 - out)
    }
    broken.register_op(d);
  }
  for (Mode mode : {Mode::kBackprop, Mode::kFad}) {
    MlpConfig cfg = small_cfg("swish", mode);
    cfg.registry = &broken;
    GradcheckReport rep = gradcheck(cfg, 3);
    CHECK_MESSAGE(!rep.ok, "mode " << (int)mode << " accepted a broken sigmoid derivative");
    CHECK(rep.max_rel_err > 1e-3);
  }
}

TEST_CASE("training reduces the loss") {
  MlpConfig cfg;
  cfg.widths = {3, 8, 8, 1};
  cfg.activation = "gelu";
  cfg.seed = 3;
  MlpParams params = init_params(cfg);
  Batch batch = make_batch(cfg, 8, 21);
  std::vector<double> losses = train(cfg, params, batch, 50, 0.05);
  REQUIRE(losses.size() == 50);
  for (double l : losses) CHECK(std::isfinite(l));
  CHECK(losses.back() < losses.front());
}

TEST_CASE("replay mode walks the same trajectory as plain backprop") {
  MlpConfig bp_cfg = small_cfg("swish", Mode::kBackprop);
  MlpConfig rc_cfg = small_cfg("swish", Mode::kRecompute);
  MlpParams bp = init_params(bp_cfg);
  MlpParams rc = init_params(rc_cfg);
  Batch batch = make_batch(bp_cfg, 6, 31);
  std::vector<double> lb = train(bp_cfg, bp, batch, 30, 0.1);
  std::vector<double> lr = train(rc_cfg, rc, batch, 30, 0.1);
  CHECK(lb == lr);  // identical kernels on identical bits
  CHECK(bp.weights == rc.weights);
  CHECK(bp.biases == rc.biases);
}

TEST_CASE("chain mode tracks the plain trajectory to rounding") {
  MlpConfig bp_cfg = small_cfg("gelu", Mode::kBackprop);
  MlpConfig fad_cfg = small_cfg("gelu", Mode::kFad);
  MlpParams bp = init_params(bp_cfg);
  MlpParams fad = init_params(fad_cfg);
  Batch batch = make_batch(bp_cfg, 6, 41);
  train(bp_cfg, bp, batch, 30, 0.1);
  train(fad_cfg, fad, batch, 30, 0.1);
  for (std::size_t l = 0; l < bp.weights.size(); ++l) {
    CHECK(testutil::max_gap(bp.weights[l], fad.weights[l]) < 1e-9);
    CHECK(testutil::max_gap(bp.biases[l], fad.biases[l]) < 1e-9);
  }
}

TEST_CASE("chain mode halves what swish layers retain") {
  MlpConfig cfg;
  cfg.widths = {4, 16, 16, 16, 1};
  cfg.activation = "swish";
  MlpParams params = init_params(cfg);
  Batch batch = make_batch(cfg, 8, 51);

  auto snapshot = [&](Mode m) {
    MlpConfig c = cfg;
    c.mode = m;
    MlpParams p = params;
    return train_step(c, p, batch, 0.0);
  };
  StepResult bp = snapshot(Mode::kBackprop);
  StepResult fad = snapshot(Mode::kFad);
  CHECK(fad.forward_end.im_act_bytes * 2 == bp.forward_end.im_act_bytes);
  CHECK(fad.forward_end.im_other_bytes == bp.forward_end.im_other_bytes);
  CHECK(fad.peak_retained < bp.peak_retained);
  CHECK(fad.stats.forward_kernel_count == bp.stats.forward_kernel_count);

  cfg.activation = "gelu";
  params = init_params(cfg);
  StepResult bp_g = snapshot(Mode::kBackprop);
  StepResult fad_g = snapshot(Mode::kFad);
  CHECK(fad_g.forward_end.im_act_bytes * 3 == bp_g.forward_end.im_act_bytes);
  CHECK(fad_g.peak_retained < bp_g.peak_retained);
}

TEST_CASE("model configuration is validated") {
  MlpConfig cfg = small_cfg("swish", Mode::kBackprop);
  MlpParams params = init_params(cfg);
  Batch batch = make_batch(cfg, 4, 61);

  SUBCASE("mismatched parameter shapes") {
    params.weights[1].pop_back();
    CHECK_THROWS_AS(train_step(cfg, params, batch, 0.1), std::invalid_argument);
  }
  SUBCASE("mismatched batch") {
    batch.x.pop_back();
    CHECK_THROWS_AS(forward_loss(cfg, params, batch), std::invalid_argument);
  }
  SUBCASE("params from different widths") {
    cfg.widths = {2, 5, 5, 1};
    CHECK_THROWS_AS(forward_loss(cfg, params, batch), std::invalid_argument);
  }
  SUBCASE("unknown activation") {
    cfg.activation = "selu";
    CHECK_THROWS_AS(train_step(cfg, params, batch, 0.1), std::invalid_argument);
  }
}

TEST_CASE("traced steps satisfy the chain protocol") {
  MlpConfig cfg = small_cfg("mish", Mode::kFad);
  cfg.trace = true;
  MlpParams params = init_params(cfg);
  Batch batch = make_batch(cfg, 4, 71);
  StepResult r = train_step(cfg, params, batch, 0.1);
  CHECK(r.trace_ok);
  CHECK(r.trace_len > 0);
  CHECK(r.trace_error.empty());
}
