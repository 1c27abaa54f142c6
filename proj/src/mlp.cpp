#include "nestad/mlp.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "nestad/activations.hpp"

namespace nestad {

namespace {

void validate(const MlpConfig& cfg, const MlpParams& params, const Batch& batch) {
  if (cfg.widths.size() < 2) throw std::invalid_argument("mlp needs at least two widths");
  const std::size_t layers = cfg.widths.size() - 1;
  if (params.weights.size() != layers || params.biases.size() != layers) {
    throw std::invalid_argument("params do not match widths");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t wn = static_cast<std::size_t>(cfg.widths[l] * cfg.widths[l + 1]);
    if (params.weights[l].size() != wn ||
        params.biases[l].size() != static_cast<std::size_t>(cfg.widths[l + 1])) {
      throw std::invalid_argument("layer " + std::to_string(l) + " params have wrong size");
    }
  }
  if (batch.rows <= 0 ||
      batch.x.size() != static_cast<std::size_t>(batch.rows * cfg.widths.front()) ||
      batch.y.size() != static_cast<std::size_t>(batch.rows * cfg.widths.back())) {
    throw std::invalid_argument("batch does not match widths");
  }
}

struct Built {
  Tensor loss;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

// Transient handles are dropped as soon as the next op consumed them, so
// anything still alive afterwards is retained by the engine, not by us.
Built build_forward(Engine& eng, const MlpConfig& cfg, const MlpParams& params,
                    const Batch& batch) {
  const Activation& act = activation(cfg.activation);
  const std::size_t layers = cfg.widths.size() - 1;
  Built built;
  Tensor input = eng.input(Shape({batch.rows, cfg.widths.front()}), batch.x, "x");
  Tensor target = eng.input(Shape({batch.rows, cfg.widths.back()}), batch.y, "y");
  for (std::size_t l = 0; l < layers; ++l) {
    built.weights.push_back(eng.weight(Shape({cfg.widths[l], cfg.widths[l + 1]}),
                                       params.weights[l], "W" + std::to_string(l)));
    built.biases.push_back(eng.weight(Shape({cfg.widths[l + 1]}), params.biases[l],
                                      "b" + std::to_string(l)));
  }
  Tensor a = input;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor mm = eng.apply("matmul", a, built.weights[l]);
    a.reset();
    Tensor z = eng.apply("bias_add", mm, built.biases[l]);
    mm.reset();
    if (l + 1 < layers) {
      a = apply_activation(eng, act, z);
      z.reset();
    } else {
      a = std::move(z);
    }
  }
  built.loss = eng.apply("mse_loss", a, target);
  return built;
}

EngineConfig engine_config(const MlpConfig& cfg) {
  EngineConfig ec;
  ec.mode = cfg.mode;
  ec.exec = cfg.exec;
  ec.f32_storage = cfg.f32_storage;
  ec.trace = cfg.trace;
  ec.registry = cfg.registry;
  return ec;
}

}  // namespace

MlpParams init_params(const MlpConfig& cfg) {
  if (cfg.widths.size() < 2) throw std::invalid_argument("mlp needs at least two widths");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  MlpParams p;
  for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
    std::vector<double> w(static_cast<std::size_t>(cfg.widths[l] * cfg.widths[l + 1]));
    for (double& v : w) v = dist(rng);
    std::vector<double> b(static_cast<std::size_t>(cfg.widths[l + 1]));
    for (double& v : b) v = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

Batch make_batch(const MlpConfig& cfg, std::int64_t rows, std::uint64_t seed) {
  if (cfg.widths.size() < 2) throw std::invalid_argument("mlp needs at least two widths");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Batch b;
  b.rows = rows;
  const std::int64_t in = cfg.widths.front();
  const std::int64_t out = cfg.widths.back();
  b.x.resize(static_cast<std::size_t>(rows * in));
  for (double& v : b.x) v = dist(rng);
  b.y.resize(static_cast<std::size_t>(rows * out));
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < in; ++c) s += b.x[static_cast<std::size_t>(r * in + c)];
    for (std::int64_t j = 0; j < out; ++j) {
      b.y[static_cast<std::size_t>(r * out + j)] = std::sin(s + static_cast<double>(j));
    }
  }
  return b;
}

StepResult train_step(const MlpConfig& cfg, MlpParams& params, const Batch& batch, double lr) {
  validate(cfg, params, batch);
  Engine eng(engine_config(cfg));
  Built built = build_forward(eng, cfg, params, batch);

  StepResult r;
  r.forward_end = eng.retained_snapshot();
  r.loss = data_of(built.loss)[0];
  Gradients grads = eng.backward(built.loss);
  for (std::size_t l = 0; l < built.weights.size(); ++l) {
    const std::span<const double> gw = data_of(grads.at(built.weights[l].id()));
    const std::span<const double> gb = data_of(grads.at(built.biases[l].id()));
    for (std::size_t i = 0; i < gw.size(); ++i) {
      r.grad_checksum += gw[i];
      if (lr != 0.0) params.weights[l][i] -= lr * gw[i];
    }
    for (std::size_t i = 0; i < gb.size(); ++i) {
      r.grad_checksum += gb[i];
      if (lr != 0.0) params.biases[l][i] -= lr * gb[i];
    }
  }
  r.stats = eng.stats();
  r.peak_total = eng.ledger().peak_total();
  r.peak_retained = eng.ledger().peak_retained();
  if (cfg.trace) {
    const TraceCheckResult check = check_trace(eng.trace());
    r.trace_ok = check.ok;
    r.trace_error = check.error;
    r.trace_len = eng.trace().size();
  }
  return r;
}

std::vector<double> train(const MlpConfig& cfg, MlpParams& params, const Batch& batch,
                          int steps, double lr) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) losses.push_back(train_step(cfg, params, batch, lr).loss);
  return losses;
}

double forward_loss(const MlpConfig& cfg, const MlpParams& params, const Batch& batch) {
  validate(cfg, params, batch);
  Engine eng(engine_config(cfg));
  Built built = build_forward(eng, cfg, params, batch);
  return data_of(built.loss)[0];
}

GradResult mlp_gradients(const MlpConfig& cfg, const MlpParams& params, const Batch& batch) {
  validate(cfg, params, batch);
  Engine eng(engine_config(cfg));
  Built built = build_forward(eng, cfg, params, batch);
  GradResult r;
  r.loss = data_of(built.loss)[0];
  Gradients grads = eng.backward(built.loss);
  for (std::size_t l = 0; l < built.weights.size(); ++l) {
    const std::span<const double> gw = data_of(grads.at(built.weights[l].id()));
    const std::span<const double> gb = data_of(grads.at(built.biases[l].id()));
    r.dweights.emplace_back(gw.begin(), gw.end());
    r.dbiases.emplace_back(gb.begin(), gb.end());
  }
  return r;
}

GradcheckReport gradcheck(const MlpConfig& cfg, std::int64_t rows, double eps, double tol) {
  MlpParams params = init_params(cfg);
  const Batch batch = make_batch(cfg, rows, cfg.seed + 1);
  const GradResult analytic = mlp_gradients(cfg, params, batch);

  GradcheckReport report;
  auto check = [&](std::vector<double>& theta, const std::vector<double>& grad,
                   const std::string& label) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double keep = theta[i];
      theta[i] = keep + eps;
      const double up = forward_loss(cfg, params, batch);
      theta[i] = keep - eps;
      const double down = forward_loss(cfg, params, batch);
      theta[i] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double rel = std::abs(grad[i] - fd) / (std::abs(fd) + 1e-12);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = label + "[" + std::to_string(i) + "]";
      }
    }
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    check(params.weights[l], analytic.dweights[l], "W" + std::to_string(l));
    check(params.biases[l], analytic.dbiases[l], "b" + std::to_string(l));
  }
  report.ok = report.max_rel_err <= tol;
  return report;
}

}  // namespace nestad
