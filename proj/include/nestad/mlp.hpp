#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestad/engine.hpp"
#include "nestad/trace_check.hpp"

namespace nestad {

struct MlpConfig {
  std::vector<std::int64_t> widths{4, 16, 16, 16, 1};  // input, hidden..., output
  std::string activation = "swish";                    // applied to hidden layers
  std::uint64_t seed = 1;
  Mode mode = Mode::kBackprop;
  kernels::Exec exec = kernels::Exec::kSerial;
  bool f32_storage = false;
  bool trace = false;
  const Registry* registry = nullptr;  // null means the builtin registry
};

struct MlpParams {
  std::vector<std::vector<double>> weights;  // per layer, [in x out] row major
  std::vector<std::vector<double>> biases;   // per layer, [out]
};

// uniform[-0.1, 0.1] from mt19937_64(seed); weights then bias, layer by layer
MlpParams init_params(const MlpConfig& cfg);

struct Batch {
  std::int64_t rows = 0;
  std::vector<double> x;  // rows x widths.front()
  std::vector<double> y;  // rows x widths.back()
};

// x uniform[-1, 1]; y row r, column j = sin(sum of row r's inputs + j)
Batch make_batch(const MlpConfig& cfg, std::int64_t rows, std::uint64_t seed);

struct StepResult {
  double loss = 0.0;
  double grad_checksum = 0.0;  // plain sum over every gradient element
  EngineStats stats;
  std::int64_t peak_total = 0;
  std::int64_t peak_retained = 0;      // intermediates + tangents high-water mark
  RetainedSnapshot forward_end;        // attribution right before backward
  bool trace_ok = true;
  std::string trace_error;
  std::size_t trace_len = 0;
};

// One forward+backward on a fresh engine; applies an SGD update in place
// unless lr is zero.
StepResult train_step(const MlpConfig& cfg, MlpParams& params, const Batch& batch, double lr);

std::vector<double> train(const MlpConfig& cfg, MlpParams& params, const Batch& batch,
                          int steps, double lr);

double forward_loss(const MlpConfig& cfg, const MlpParams& params, const Batch& batch);

struct GradResult {
  double loss = 0.0;
  std::vector<std::vector<double>> dweights;
  std::vector<std::vector<double>> dbiases;
};
GradResult mlp_gradients(const MlpConfig& cfg, const MlpParams& params, const Batch& batch);

struct GradcheckReport {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string worst;  // parameter label of the largest error
};

// Central finite differences on every parameter against the engine's
// gradients, |analytic - fd| / (|fd| + 1e-12) <= tol elementwise.
GradcheckReport gradcheck(const MlpConfig& cfg, std::int64_t rows, double eps = 1e-6,
                          double tol = 1e-5);

}  // namespace nestad
