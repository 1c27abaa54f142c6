#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestad/mlp.hpp"

namespace nestad {

// One training run per (activation, mode) cell, all cells sharing the same
// net shape, data and initial parameters.
struct BenchConfig {
  std::vector<std::int64_t> widths{4, 16, 16, 16, 1};
  std::vector<std::string> activations{"relu", "sigmoid", "tanh", "swish", "gelu", "mish"};
  std::vector<std::string> modes{"backprop", "fad", "recompute"};
  std::int64_t rows = 32;
  int steps = 3;
  double lr = 0.01;
  std::uint64_t seed = 1;
  bool f32_storage = false;
  std::string exec = "serial";
};

// Strict: unknown keys, wrong types, unknown activations or modes all throw
// std::invalid_argument.
BenchConfig parse_bench_config(const std::string& json_text);

kernels::Exec exec_from_string(std::string_view s);

struct BenchRow {
  std::string activation;
  std::string mode;
  double final_loss = 0.0;
  double grad_checksum = 0.0;
  std::int64_t peak_total = 0;
  std::int64_t peak_retained = 0;
  std::int64_t im_act_bytes = 0;
  std::int64_t im_other_bytes = 0;
  std::int64_t forward_kernels = 0;
  std::int64_t recompute_kernels = 0;
  std::int64_t tape_nodes = 0;
  std::int64_t backward_nodes = 0;
  std::int64_t collapsed_nodes = 0;
  double wall_ms = 0.0;
};

// Runs the grid. Memory and count columns come from the last training step
// (every step peaks identically on a fresh engine); wall time covers all
// steps of the cell. NESTAD_WORKERS caps how many cells run concurrently
// (default 1).
std::vector<BenchRow> run_grid(const BenchConfig& cfg);

std::string to_csv(const std::vector<BenchRow>& rows);
std::string to_json(const std::vector<BenchRow>& rows);

}  // namespace nestad
