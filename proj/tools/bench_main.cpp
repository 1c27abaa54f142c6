// bench: training benchmark grid, gradient checking, program rewriting and
// detection tracing for the nestad engine.
//
// Exit codes: 0 success, 1 runtime or check failure, 2 bad configuration or
// unparsable input.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nestad/activations.hpp"
#include "nestad/bench.hpp"
#include "nestad/mlp.hpp"
#include "nestad/static_graph.hpp"
#include "nestad/static_optimizer.hpp"
#include "nestad/trace_check.hpp"

namespace {

std::vector<std::int64_t> parse_widths(const std::string& csv) {
  std::vector<std::int64_t> widths;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size() || v <= 0) {
      throw std::invalid_argument("bad width '" + tok + "'");
    }
    widths.push_back(v);
  }
  if (widths.size() < 2) throw std::invalid_argument("need at least 2 widths");
  return widths;
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path == "-" || path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << text;
}

struct RunFlags {
  std::string config;
  std::string widths;
  std::string activations;
  std::string modes;
  std::int64_t rows = -1;
  int steps = -1;
  double lr = -1.0;
  std::int64_t seed = -1;
  bool f32 = false;
  std::string exec;
  std::string csv_path;
  std::string json_path;
};

int do_run(const RunFlags& f) {
  nestad::BenchConfig cfg;
  if (!f.config.empty()) cfg = nestad::parse_bench_config(read_input(f.config));
  if (!f.widths.empty()) cfg.widths = parse_widths(f.widths);
  if (!f.activations.empty()) cfg.activations = split_csv(f.activations);
  if (!f.modes.empty()) cfg.modes = split_csv(f.modes);
  if (f.rows >= 0) cfg.rows = f.rows;
  if (f.steps >= 0) cfg.steps = f.steps;
  if (f.lr >= 0) cfg.lr = f.lr;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
  if (f.f32) cfg.f32_storage = true;
  if (!f.exec.empty()) cfg.exec = f.exec;

  // revalidate merged settings the same way the config parser does
  for (const std::string& a : cfg.activations) nestad::activation(a);
  for (const std::string& m : cfg.modes) nestad::mode_from_string(m);
  nestad::exec_from_string(cfg.exec);
  if (cfg.rows <= 0 || cfg.steps <= 0) {
    throw std::invalid_argument("rows and steps must be positive");
  }

  const std::vector<nestad::BenchRow> rows = nestad::run_grid(cfg);
  std::cout << nestad::to_csv(rows);
  if (!f.csv_path.empty()) write_output(f.csv_path, nestad::to_csv(rows));
  if (!f.json_path.empty()) write_output(f.json_path, nestad::to_json(rows));
  return 0;
}

int do_gradcheck(const std::string& widths, const std::string& act, const std::string& mode,
                 std::int64_t rows, std::uint64_t seed, double eps, double tol) {
  nestad::MlpConfig cfg;
  cfg.widths = parse_widths(widths);
  cfg.activation = nestad::activation(act).name;
  cfg.mode = nestad::mode_from_string(mode);
  cfg.seed = seed;
  const nestad::GradcheckReport r = nestad::gradcheck(cfg, rows, eps, tol);
  std::printf("gradcheck %s/%s: max rel err %.3e at %s -> %s\n", act.c_str(), mode.c_str(),
              r.max_rel_err, r.worst.c_str(), r.ok ? "pass" : "FAIL");
  return r.ok ? 0 : 1;
}

int do_trace(const std::string& widths, const std::string& act, const std::string& mode,
             std::int64_t rows, std::uint64_t seed) {
  nestad::MlpConfig cfg;
  cfg.widths = parse_widths(widths);
  const nestad::Activation& activation = nestad::activation(act);
  cfg.mode = nestad::mode_from_string(mode);
  cfg.seed = seed;
  const nestad::MlpParams params = nestad::init_params(cfg);
  const nestad::Batch batch = nestad::make_batch(cfg, rows, seed + 1);

  nestad::EngineConfig ec;
  ec.mode = cfg.mode;
  ec.trace = true;
  nestad::Engine eng(ec);
  const std::size_t layers = cfg.widths.size() - 1;
  nestad::Tensor a = eng.input(nestad::Shape({rows, cfg.widths.front()}), batch.x, "x");
  nestad::Tensor target = eng.input(nestad::Shape({rows, cfg.widths.back()}), batch.y, "y");
  for (std::size_t l = 0; l < layers; ++l) {
    nestad::Tensor w = eng.weight(nestad::Shape({cfg.widths[l], cfg.widths[l + 1]}),
                                  params.weights[l], "W" + std::to_string(l));
    nestad::Tensor b = eng.weight(nestad::Shape({cfg.widths[l + 1]}), params.biases[l],
                                  "b" + std::to_string(l));
    nestad::Tensor z = eng.apply("bias_add", eng.apply("matmul", a, w), b);
    a = l + 1 < layers ? nestad::apply_activation(eng, activation, z) : std::move(z);
  }
  nestad::Tensor loss = eng.apply("mse_loss", a, target);
  (void)eng.backward(loss);

  std::printf("step_id, op, state, src_token, retained_bytes\n");
  for (const nestad::TraceEntry& e : eng.trace()) {
    std::printf("%s\n", nestad::format_trace_line(e).c_str());
  }
  const nestad::TraceCheckResult check = nestad::check_trace(eng.trace());
  if (!check.ok) {
    std::printf("trace INVALID at entry %lld: %s\n", static_cast<long long>(check.entry),
                check.error.c_str());
    return 1;
  }
  std::printf("trace ok (%zu entries)\n", eng.trace().size());
  return 0;
}

int do_rewrite(const std::string& in_path, const std::string& out_path) {
  const std::string text = read_input(in_path);
  nestad::StaticGraph g = nestad::parse_graph(text);
  bool has_tangents = false;
  bool has_backward = false;
  for (const nestad::StaticNode& n : g.nodes) {
    has_tangents |= n.phase == nestad::Phase::kFadAppended;
    has_backward |= n.phase == nestad::Phase::kBackward;
  }
  if (has_tangents) {
    // already rewritten; emit canonical form unchanged
    write_output(out_path, nestad::serialize(g));
    return 0;
  }
  if (has_backward) {
    std::fprintf(stderr,
                 "rewrite: program already has a BACKWARD section; rewriting needs the "
                 "forward-only program so the gradient can be rebuilt around the tangents\n");
    return 2;
  }
  if (g.outputs.empty()) {
    std::fprintf(stderr, "rewrite: program has no OUTPUTS section\n");
    return 2;
  }
  const std::int64_t loss = g.outputs.front();
  const std::vector<nestad::Shape> shapes = nestad::infer_shapes(g);
  if (shapes[static_cast<std::size_t>(loss)].numel() != 1) {
    std::fprintf(stderr, "rewrite: first output must be scalar, got %s\n",
                 shapes[static_cast<std::size_t>(loss)].to_string().c_str());
    return 2;
  }
  std::vector<std::int64_t> wrt;
  for (const nestad::StaticNode& n : g.nodes) {
    if (n.op == "input") wrt.push_back(n.id);
  }
  nestad::build_backward(g, loss, wrt);
  const nestad::RewriteStats stats = nestad::rewrite_all(g);
  write_output(out_path, nestad::serialize(g));
  std::fprintf(stderr, "rewrite: %d chains rewritten, %d stale, %d dead\n", stats.rewritten,
               stats.skipped_stale, stats.skipped_dead);
  return 0;
}

int do_ops() {
  std::printf("%-12s %-5s %-10s %-4s %s\n", "op", "arity", "class", "attr", "saves");
  for (const auto& [name, def] : nestad::Registry::builtin().all()) {
    const char* cls = def.fad_class == nestad::FadClass::kFadUnary    ? "fad-unary"
                      : def.fad_class == nestad::FadClass::kFadBinary ? "fad-binary"
                                                                      : "nfad";
    std::string saves;
    for (nestad::SaveSlot s : def.saves) {
      if (!saves.empty()) saves += ' ';
      saves += s == nestad::SaveSlot::kIn0 ? "in0" : s == nestad::SaveSlot::kIn1 ? "in1" : "out";
    }
    std::printf("%-12s %-5d %-10s %-4s %s\n", name.c_str(), def.arity, cls,
                def.takes_attr ? "yes" : "no", saves.c_str());
  }
  return 0;
}

template <class F>
int guarded(F f) {
  try {
    return f();
  } catch (const nestad::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nestad training benchmark and program tools"};
  app.require_subcommand(1);

  RunFlags rf;
  CLI::App* run = app.add_subcommand("run", "run the activation x mode benchmark grid");
  run->add_option("--config", rf.config, "JSON config file ('-' for stdin)");
  run->add_option("--widths", rf.widths, "layer widths, e.g. 4,16,16,16,1");
  run->add_option("--activations", rf.activations, "comma separated activations");
  run->add_option("--modes", rf.modes, "comma separated modes (backprop,fad,recompute)");
  run->add_option("--rows", rf.rows, "batch rows");
  run->add_option("--steps", rf.steps, "training steps per cell");
  run->add_option("--lr", rf.lr, "learning rate");
  run->add_option("--seed", rf.seed, "rng seed");
  run->add_flag("--f32", rf.f32, "account tensors at 4 bytes/element");
  run->add_option("--exec", rf.exec, "kernel dispatch: serial or parallel");
  run->add_option("--csv", rf.csv_path, "also write the CSV to this file");
  run->add_option("--json", rf.json_path, "also write a JSON report to this file");

  std::string gc_widths = "4,8,1", gc_act = "swish", gc_mode = "fad";
  std::int64_t gc_rows = 4;
  std::uint64_t gc_seed = 1;
  double gc_eps = 1e-6, gc_tol = 1e-5;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the gradients");
  gc->add_option("--widths", gc_widths, "layer widths");
  gc->add_option("--activation", gc_act, "activation name");
  gc->add_option("--mode", gc_mode, "backprop, fad or recompute");
  gc->add_option("--rows", gc_rows, "batch rows");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--eps", gc_eps, "finite difference step");
  gc->add_option("--tol", gc_tol, "relative error tolerance");

  std::string tr_widths = "4,8,1", tr_act = "swish", tr_mode = "fad";
  std::int64_t tr_rows = 4;
  std::uint64_t tr_seed = 1;
  CLI::App* tr = app.add_subcommand("trace", "print and check the per-op detection trace");
  tr->add_option("--widths", tr_widths, "layer widths");
  tr->add_option("--activation", tr_act, "activation name");
  tr->add_option("--mode", tr_mode, "backprop, fad or recompute");
  tr->add_option("--rows", tr_rows, "batch rows");
  tr->add_option("--seed", tr_seed, "rng seed");

  std::string rw_in = "-", rw_out = "-";
  CLI::App* rw = app.add_subcommand(
      "rewrite", "append tangent chains to a forward program and build its backward pass");
  rw->add_option("--in", rw_in, "input program ('-' for stdin)");
  rw->add_option("--out", rw_out, "output program ('-' for stdout)");

  app.add_subcommand("ops", "list the op registry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run->parsed()) return guarded([&] { return do_run(rf); });
  if (gc->parsed()) {
    return guarded(
        [&] { return do_gradcheck(gc_widths, gc_act, gc_mode, gc_rows, gc_seed, gc_eps, gc_tol); });
  }
  if (tr->parsed()) {
    return guarded([&] { return do_trace(tr_widths, tr_act, tr_mode, tr_rows, tr_seed); });
  }
  if (rw->parsed()) return guarded([&] { return do_rewrite(rw_in, rw_out); });
  return guarded([] { return do_ops(); });
}
