#include "nestad/bench.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "nestad/activations.hpp"

namespace nestad {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int worker_cap() {
  const char* e = std::getenv("NESTAD_WORKERS");
  if (e == nullptr || *e == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(e, &end, 10);
  if (end == e || *end != '\0' || v < 1) return 1;
  return static_cast<int>(std::min<long>(v, 64));
}

BenchRow run_cell(const BenchConfig& bc, const std::string& act, const std::string& mode) {
  MlpConfig mc;
  mc.widths = bc.widths;
  mc.activation = act;
  mc.seed = bc.seed;
  mc.mode = mode_from_string(mode);
  mc.exec = exec_from_string(bc.exec);
  mc.f32_storage = bc.f32_storage;
  MlpParams params = init_params(mc);
  const Batch batch = make_batch(mc, bc.rows, bc.seed + 1);

  const double t0 = omp_get_wtime();
  StepResult last;
  for (int s = 0; s < bc.steps; ++s) last = train_step(mc, params, batch, bc.lr);
  const double ms = (omp_get_wtime() - t0) * 1e3;

  BenchRow row;
  row.activation = act;
  row.mode = mode;
  row.final_loss = last.loss;
  row.grad_checksum = last.grad_checksum;
  row.peak_total = last.peak_total;
  row.peak_retained = last.peak_retained;
  row.im_act_bytes = last.forward_end.im_act_bytes;
  row.im_other_bytes = last.forward_end.im_other_bytes;
  row.forward_kernels = last.stats.forward_kernel_count;
  row.recompute_kernels = last.stats.recompute_count;
  row.tape_nodes = last.stats.tape_node_count;
  row.backward_nodes = last.stats.backward_node_count;
  row.collapsed_nodes = last.stats.collapsed_node_count;
  row.wall_ms = ms;
  return row;
}

}  // namespace

kernels::Exec exec_from_string(std::string_view s) {
  if (s == "serial") return kernels::Exec::kSerial;
  if (s == "parallel") return kernels::Exec::kParallel;
  throw std::invalid_argument("unknown exec '" + std::string(s) + "'");
}

BenchConfig parse_bench_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("bench config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("bench config: expected a JSON object");

  static const std::set<std::string> known = {"widths", "activations", "modes",   "rows",
                                              "steps",  "lr",          "seed",    "f32_storage",
                                              "exec"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("bench config: unknown key '" + key + "'");
    }
  }

  BenchConfig cfg;
  try {
    if (j.contains("widths")) {
      cfg.widths = j.at("widths").get<std::vector<std::int64_t>>();
    }
    if (j.contains("activations")) {
      cfg.activations = j.at("activations").get<std::vector<std::string>>();
    }
    if (j.contains("modes")) cfg.modes = j.at("modes").get<std::vector<std::string>>();
    if (j.contains("rows")) cfg.rows = j.at("rows").get<std::int64_t>();
    if (j.contains("steps")) cfg.steps = j.at("steps").get<int>();
    if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("f32_storage")) cfg.f32_storage = j.at("f32_storage").get<bool>();
    if (j.contains("exec")) cfg.exec = j.at("exec").get<std::string>();
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("bench config: ") + e.what());
  }

  if (cfg.widths.size() < 2) throw std::invalid_argument("bench config: need at least 2 widths");
  for (std::int64_t w : cfg.widths) {
    if (w <= 0) throw std::invalid_argument("bench config: widths must be positive");
  }
  if (cfg.activations.empty()) throw std::invalid_argument("bench config: no activations");
  if (cfg.modes.empty()) throw std::invalid_argument("bench config: no modes");
  for (const std::string& a : cfg.activations) activation(a);
  for (const std::string& m : cfg.modes) mode_from_string(m);
  exec_from_string(cfg.exec);
  if (cfg.rows <= 0) throw std::invalid_argument("bench config: rows must be positive");
  if (cfg.steps <= 0) throw std::invalid_argument("bench config: steps must be positive");
  return cfg;
}

std::vector<BenchRow> run_grid(const BenchConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> cells;
  for (const std::string& a : cfg.activations) {
    for (const std::string& m : cfg.modes) cells.emplace_back(a, m);
  }
  std::vector<BenchRow> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  const int workers = std::min<int>(worker_cap(), static_cast<int>(cells.size()));

#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
  for (std::size_t i = 0; i < cells.size(); ++i) {
    try {
      rows[i] = run_cell(cfg, cells[i].first, cells[i].second);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i].empty()) {
      throw std::runtime_error("bench cell " + cells[i].first + "/" + cells[i].second +
                               ": " + errors[i]);
    }
  }
  return rows;
}

std::string to_csv(const std::vector<BenchRow>& rows) {
  std::string out =
      "activation,mode,final_loss,grad_checksum,peak_total,peak_retained,"
      "im_act_bytes,im_other_bytes,forward_kernels,recompute_kernels,"
      "tape_nodes,backward_nodes,collapsed_nodes,wall_ms\n";
  char buf[64];
  for (const BenchRow& r : rows) {
    out += r.activation + ',' + r.mode + ',';
    out += fmt_double(r.final_loss) + ',' + fmt_double(r.grad_checksum) + ',';
    out += std::to_string(r.peak_total) + ',' + std::to_string(r.peak_retained) + ',';
    out += std::to_string(r.im_act_bytes) + ',' + std::to_string(r.im_other_bytes) + ',';
    out += std::to_string(r.forward_kernels) + ',' + std::to_string(r.recompute_kernels) + ',';
    out += std::to_string(r.tape_nodes) + ',' + std::to_string(r.backward_nodes) + ',';
    out += std::to_string(r.collapsed_nodes) + ',';
    std::snprintf(buf, sizeof buf, "%.3f", r.wall_ms);
    out += buf;
    out += '\n';
  }
  return out;
}

std::string to_json(const std::vector<BenchRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const BenchRow& r : rows) {
    arr.push_back({{"activation", r.activation},
                   {"mode", r.mode},
                   {"final_loss", r.final_loss},
                   {"grad_checksum", r.grad_checksum},
                   {"peak_total", r.peak_total},
                   {"peak_retained", r.peak_retained},
                   {"im_act_bytes", r.im_act_bytes},
                   {"im_other_bytes", r.im_other_bytes},
                   {"forward_kernels", r.forward_kernels},
                   {"recompute_kernels", r.recompute_kernels},
                   {"tape_nodes", r.tape_nodes},
                   {"backward_nodes", r.backward_nodes},
                   {"collapsed_nodes", r.collapsed_nodes},
                   {"wall_ms", r.wall_ms}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace nestad
