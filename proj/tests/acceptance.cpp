// Acceptance suite: one verdict line per criterion, nonzero exit if any fail.
//
// The heavy shared corpus (1000 generated programs run through every
// gradient path) is built once and feeds criteria 2, 4, 5 and 7.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "nestad/activations.hpp"
#include "nestad/bench.hpp"
#include "nestad/engine.hpp"
#include "nestad/mlp.hpp"
#include "nestad/static_graph.hpp"
#include "nestad/static_optimizer.hpp"
#include "nestad/trace_check.hpp"
#include "support/gen.hpp"
#include "support/testutil.hpp"

using namespace nestad;

namespace {

int g_failures = 0;

void verdict(int criterion, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, detail.c_str());
  if (!ok) g_failures += 1;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double rel_against(double a, double ref) { return std::abs(a - ref) / (std::abs(ref) + 1e-12); }

// ---- criterion 1: swish worked example --------------------------------------

bool criterion1(std::string& detail) {
  testutil::Stopwatch sw;
  const std::vector<double> xs{0.0, 1.0, -2.0};

  EngineConfig fad_cfg;
  fad_cfg.mode = Mode::kFad;
  Engine fad(fad_cfg);
  Tensor x = fad.weight(Shape{3}, xs, "x");
  Tensor s = fad.apply("sigmoid", x);
  Tensor y = fad.apply("mul", s, x);
  s.reset();
  Tensor loss = fad.apply("reduce_sum", y);
  y.reset();
  Gradients g = fad.backward(loss);
  const auto gf = data_of(g.at(x.id()));

  EngineConfig bp_cfg;
  Engine bp(bp_cfg);
  Tensor xb = bp.weight(Shape{3}, xs, "x");
  Tensor sb = bp.apply("sigmoid", xb);
  Tensor yb = bp.apply("mul", sb, xb);
  Tensor lb = bp.apply("reduce_sum", yb);
  Gradients gb_all = bp.backward(lb);
  const auto gb = data_of(gb_all.at(xb.id()));

  if (gf[0] != 0.5) {
    detail = "gradient at 0 is " + std::to_string(gf[0]) + ", want exactly 0.5";
    return false;
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v1 = 1.0 / (1.0 + std::exp(-xs[i]));
    const double v2 = xs[i];
    const double closed = 1.0 * (v1 + v1 * (1.0 - v1) * v2);  // unit upstream gradient
    const double h = 1e-6;
    const auto f = [](double t) { return t / (1.0 + std::exp(-t)); };
    const double fd = (f(xs[i] + h) - f(xs[i] - h)) / (2 * h);
    if (std::abs(gf[i] - closed) > 1e-15) {
      detail = "x=" + std::to_string(xs[i]) + ": tangent path " + std::to_string(gf[i]) +
               " != closed form " + std::to_string(closed);
      return false;
    }
    if (std::abs(gf[i] - gb[i]) > 1e-12) {
      detail = "x=" + std::to_string(xs[i]) + ": |fad - bp| = " + fmt(std::abs(gf[i] - gb[i]));
      return false;
    }
    if (std::abs(gf[i] - fd) > 1e-6) {
      detail = "x=" + std::to_string(xs[i]) + ": |fad - fd| = " + fmt(std::abs(gf[i] - fd));
      return false;
    }
  }
  const double secs = sw.seconds();
  if (secs >= 1.0) {
    detail = "took " + fmt(secs) + "s, bound is 1s";
    return false;
  }
  detail = "swish gradients at {0, 1, -2} match the closed form, plain backprop (<=1e-12) and "
           "central differences (<=1e-6) in " + fmt(secs) + "s";
  return true;
}

// ---- shared corpus for criteria 2, 4, 5, 7 ----------------------------------

struct SuiteData {
  int programs = 0;
  double wall_seconds = 0.0;

  double worst_grad_gap = 0.0;
  std::string grad_fail;  // empty while every path agrees

  bool fk_parity = true;
  bool rc_accounting = true;
  bool node_identity = true;
  std::string compute_fail;

  int traces_checked = 0;
  bool traces_ok = true;
  bool protocol_ok = true;
  std::string trace_fail;

  bool ledger_zero = true;
  std::string ledger_fail;

  int audited = 0;
  bool event_order = true;
  std::string event_fail;
};

// interior chain values and superseded tangents must be gone once the chain's
// last end finishes collapsing
bool audit_events(const testgen::RunResult& r, std::string& why) {
  struct Chain {
    std::set<TensorId> members;
    std::set<TensorId> boundary;
    std::map<TensorId, TensorId> tangent_of;  // member output -> materialized tangent
  };
  std::map<TensorId, Chain> chains;
  for (const TraceEntry& e : r.trace) {
    if (e.state == FsmState::kNY || e.state == FsmState::kYY) {
      Chain& c = chains[e.src_token];
      c.members.insert(e.output_id);
      if (e.ftr_id >= 0) c.tangent_of[e.output_id] = e.ftr_id;
    }
  }
  for (const TraceEntry& e : r.trace) {
    if (e.state != FsmState::kYN) continue;
    auto it = chains.find(e.src_token);
    if (it == chains.end()) continue;
    for (TensorId in : e.input_ids) {
      if (it->second.members.count(in)) it->second.boundary.insert(in);
    }
  }

  std::map<TensorId, std::uint64_t> mark_seq;       // boundary id -> collapse mark
  std::map<TensorId, std::uint64_t> first_release;  // tensor id -> first release
  for (const LedgerEvent& ev : r.events) {
    if (ev.kind == LedgerEvent::Kind::kMark && ev.label.rfind("collapse t", 0) == 0) {
      mark_seq[std::stoll(ev.label.substr(10))] = ev.seq;
    }
    if (ev.kind == LedgerEvent::Kind::kRelease && !first_release.count(ev.tensor_id)) {
      first_release[ev.tensor_id] = ev.seq;
    }
  }

  for (const auto& [token, c] : chains) {
    std::uint64_t last_mark = 0;
    for (TensorId b : c.boundary) {
      auto it = mark_seq.find(b);
      if (it == mark_seq.end()) {
        why = "boundary t" + std::to_string(b) + " never collapsed";
        return false;
      }
      last_mark = std::max(last_mark, it->second);
    }
    for (TensorId m : c.members) {
      if (c.boundary.count(m)) continue;  // collapse adopts the end's tangent
      auto rel = first_release.find(m);
      if (rel == first_release.end() || rel->second > last_mark) {
        why = "interior value t" + std::to_string(m) + " outlived its chain ends";
        return false;
      }
      auto tg = c.tangent_of.find(m);
      if (tg != c.tangent_of.end()) {
        auto trel = first_release.find(tg->second);
        if (trel == first_release.end() || trel->second > last_mark) {
          why = "tangent of interior t" + std::to_string(m) + " outlived its chain ends";
          return false;
        }
      }
    }
  }
  return true;
}

SuiteData run_suite(int programs) {
  SuiteData d;
  d.programs = programs;
  testutil::Stopwatch sw;
  std::mt19937_64 rng(1234);

  EngineConfig bp_cfg;
  EngineConfig rc_cfg;
  rc_cfg.mode = Mode::kRecompute;

  for (int trial = 0; trial < programs; ++trial) {
    const bool audit = trial < 200;
    testgen::Program p = testgen::make_program(rng);
    EngineConfig fad_cfg;
    fad_cfg.mode = Mode::kFad;
    fad_cfg.trace = true;
    fad_cfg.event_log = audit;

    testgen::RunResult bp = testgen::run_dynamic(p, bp_cfg);
    testgen::RunResult fad = testgen::run_dynamic(p, fad_cfg);
    testgen::RunResult rc = testgen::run_dynamic(p, rc_cfg);
    std::map<int, std::vector<double>> sr = testgen::static_grads(p, /*rewrite=*/true);

    const std::string tag = "program " + std::to_string(trial);

    // criterion 2: every path, every leaf
    for (const auto& [slot, ref] : bp.grads) {
      const double g1 = testutil::max_gap(ref, fad.grads.at(slot));
      const double g2 = testutil::max_gap(ref, rc.grads.at(slot));
      const double g3 = testutil::max_gap(ref, sr.at(slot));
      const double worst = std::max({g1, g2, g3});
      d.worst_grad_gap = std::max(d.worst_grad_gap, worst);
      if (worst > 1e-10 && d.grad_fail.empty()) {
        d.grad_fail = tag + " leaf " + std::to_string(slot) + " gap " + fmt(worst);
      }
    }

    // criterion 4: forward parity, replay accounting, node composition
    if (fad.stats.forward_kernel_count != bp.stats.forward_kernel_count) {
      d.fk_parity = false;
      if (d.compute_fail.empty()) d.compute_fail = tag + ": fad forward kernels diverge";
    }
    if (rc.stats.forward_kernel_count !=
        bp.stats.forward_kernel_count + rc.stats.recompute_count) {
      d.rc_accounting = false;
      if (d.compute_fail.empty()) d.compute_fail = tag + ": replay accounting off";
    }
    std::int64_t structural = 0;
    for (const TraceEntry& e : fad.trace) {
      if (e.state == FsmState::kNN || e.state == FsmState::kYN) structural += 1;
    }
    const std::int64_t want_nodes = structural + fad.stats.collapsed_node_count;
    if (fad.stats.tape_node_count != want_nodes ||
        fad.stats.backward_node_count != want_nodes) {
      d.node_identity = false;
      if (d.compute_fail.empty()) d.compute_fail = tag + ": backward node composition off";
    }

    // criterion 5: every trace passes the checker and the per-token protocol
    d.traces_checked += 1;
    const TraceCheckResult check = check_trace(fad.trace);
    if (!check.ok) {
      d.traces_ok = false;
      if (d.trace_fail.empty()) d.trace_fail = tag + ": " + check.error;
    }
    std::map<TensorId, std::vector<FsmState>> per;
    for (const TraceEntry& e : fad.trace) {
      if (e.state != FsmState::kNN) per[e.src_token].push_back(e.state);
    }
    for (const auto& [token, states] : per) {
      bool ok = !states.empty() && states.front() == FsmState::kNY;
      std::size_t i = 1;
      while (i < states.size() && states[i] == FsmState::kYY) ++i;
      ok = ok && i < states.size();
      for (; ok && i < states.size(); ++i) ok = states[i] == FsmState::kYN;
      if (!ok) {
        d.protocol_ok = false;
        if (d.trace_fail.empty()) {
          d.trace_fail = tag + ": token " + std::to_string(token) + " broke NY YY* YN+";
        }
      }
    }

    // criterion 7: nothing retained survives teardown, in any mode
    for (const testgen::RunResult* r : {&bp, &fad, &rc}) {
      if (r->live_intermediate != 0 || r->live_fad != 0) {
        d.ledger_zero = false;
        if (d.ledger_fail.empty()) {
          d.ledger_fail = tag + ": " + std::to_string(r->live_intermediate) + "+" +
                          std::to_string(r->live_fad) + " bytes live after teardown";
        }
      }
    }
    if (audit) {
      d.audited += 1;
      std::string why;
      if (!audit_events(fad, why)) {
        d.event_order = false;
        if (d.event_fail.empty()) d.event_fail = tag + ": " + why;
      }
    }
  }
  d.wall_seconds = sw.seconds();
  return d;
}

bool criterion2(const SuiteData& d, std::string& detail) {
  if (!d.grad_fail.empty()) {
    detail = d.grad_fail;
    return false;
  }
  if (d.wall_seconds >= 60.0) {
    detail = "suite took " + fmt(d.wall_seconds) + "s, bound is 60s";
    return false;
  }
  detail = std::to_string(d.programs) +
           " programs agree across backprop, replay, chain and rewritten-graph paths "
           "(worst gap " + fmt(d.worst_grad_gap) + ", " + fmt(d.wall_seconds) + "s)";
  return true;
}

bool criterion4(const SuiteData& d, std::string& detail) {
  if (!d.fk_parity || !d.rc_accounting || !d.node_identity) {
    detail = d.compute_fail;
    return false;
  }
  detail = "chain mode never adds forward kernels, replay mode adds exactly its replay count, "
           "and backward nodes = plain applications + chain ends on all " +
           std::to_string(d.programs) + " programs";
  return true;
}

// ---- criterion 3: footprint reduction ---------------------------------------

bool criterion3(std::string& detail) {
  struct Grid {
    std::vector<std::int64_t> widths;
    std::int64_t rows;
  };
  const std::vector<Grid> grids{
      {{4, 16, 16, 16, 1}, 8},
      {{4, 16, 16, 16, 1}, 32},
      {{8, 32, 32, 32, 8}, 16},
      {{3, 12, 12, 12, 12, 2}, 8},
  };
  const Registry& reg = Registry::builtin();

  for (const std::string act : {"swish", "gelu", "mish"}) {
    const int oracle = testgen::retained_values_per_activation(activation(act), reg);
    for (const Grid& grid : grids) {
      MlpConfig cfg;
      cfg.widths = grid.widths;
      cfg.activation = act;
      cfg.seed = 11;
      MlpParams params = init_params(cfg);
      const Batch batch = make_batch(cfg, grid.rows, 12);

      auto probe = [&](Mode m) {
        MlpConfig c = cfg;
        c.mode = m;
        MlpParams p = params;
        return train_step(c, p, batch, 0.0);
      };
      const StepResult bp = probe(Mode::kBackprop);
      const StepResult fad = probe(Mode::kFad);

      const std::string where = act + " widths " + std::to_string(grid.widths.size() - 1) +
                                " layers, rows " + std::to_string(grid.rows);
      // retained activation elements: oracle values per element in plain mode,
      // exactly one tangent element in chain mode
      if (bp.forward_end.im_act_bytes != fad.forward_end.im_act_bytes * oracle) {
        detail = where + ": plain keeps " + std::to_string(bp.forward_end.im_act_bytes) +
                 " activation bytes, chain " + std::to_string(fad.forward_end.im_act_bytes) +
                 ", want ratio " + std::to_string(oracle);
        return false;
      }
      if (fad.forward_end.im_other_bytes != bp.forward_end.im_other_bytes) {
        detail = where + ": structural retention differs between modes";
        return false;
      }
      if (fad.peak_total >= bp.peak_total) {
        detail = where + ": chain-mode peak " + std::to_string(fad.peak_total) +
                 " not below plain-mode peak " + std::to_string(bp.peak_total);
        return false;
      }
    }
  }
  detail = "swish retains 1/2, gelu and mish 1/3 of plain-mode activation bytes (exact), and "
           "chain-mode peak bytes are strictly lower on all 12 grid configs; desk scale only, "
           "large-model GPU batch multipliers are out of scope";
  return true;
}

// ---- criterion 5: staged trace plus mutations -------------------------------

bool criterion5(const SuiteData& d, std::string& detail) {
  EngineConfig cfg;
  cfg.mode = Mode::kFad;
  cfg.trace = true;
  Engine eng(cfg);
  Tensor x = eng.weight(Shape{2, 2}, {0.4, -0.3, 1.1, 0.7}, "x");
  Tensor w = eng.weight(Shape{2, 2}, {0.9, 0.2, -0.5, 1.3}, "w");
  Tensor z = eng.apply("matmul", x, w);    // NN
  Tensor a = eng.apply("sigmoid", z);      // NY
  Tensor b = eng.apply("mul", a, a);       // YY
  Tensor c = eng.apply("exp", b);          // YY
  a.reset();
  b.reset();
  Tensor end1 = eng.apply("matmul", c, w);    // YN
  Tensor end2 = eng.apply("reduce_sum", c);   // YN
  c.reset();

  const std::vector<TraceEntry> trace = eng.trace();
  const std::vector<FsmState> want{FsmState::kNN, FsmState::kNY, FsmState::kYY,
                                   FsmState::kYY, FsmState::kYN, FsmState::kYN};
  if (trace.size() != want.size()) {
    detail = "staged example produced " + std::to_string(trace.size()) + " entries, want 6";
    return false;
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (trace[i].state != want[i]) {
      detail = "staged example entry " + std::to_string(i) + " is " +
               to_string(trace[i].state) + ", want " + to_string(want[i]);
      return false;
    }
  }
  if (!check_trace(trace).ok) {
    detail = "checker rejected the staged example: " + check_trace(trace).error;
    return false;
  }

  // mutation: the chain start disappears
  std::vector<TraceEntry> no_seed = trace;
  no_seed.erase(no_seed.begin() + 1);
  if (check_trace(no_seed).ok) {
    detail = "checker accepted a YY with no preceding NY";
    return false;
  }

  // mutation: a same-source step spliced across two different sources
  std::vector<TraceEntry> crossed = trace;
  TraceEntry alien;
  alien.step_id = crossed.back().step_id + 1;
  alien.op = "tanh";
  alien.state = FsmState::kNY;
  alien.src_token = 777;
  alien.input_ids = {777};
  alien.output_id = 778;
  crossed.push_back(alien);
  TraceEntry mixed;
  mixed.step_id = alien.step_id + 1;
  mixed.op = "mul";
  mixed.state = FsmState::kYY;
  mixed.src_token = trace[1].src_token;
  mixed.input_ids = {trace[1].output_id, 778};  // operands from different chains
  mixed.output_id = 779;
  crossed.push_back(mixed);
  if (check_trace(crossed).ok) {
    detail = "checker accepted a fad-binary step across two sources";
    return false;
  }

  if (!d.traces_ok || !d.protocol_ok) {
    detail = d.trace_fail;
    return false;
  }
  detail = "staged NN,NY,YY,YY,YN,YN trace accepted, both mutations rejected, and all " +
           std::to_string(d.traces_checked) + " generated traces follow NY YY* YN+ per source";
  return true;
}

// ---- criterion 6: static rewriter against the brute-force oracle -------------

bool criterion6(std::string& detail) {
  std::mt19937_64 rng(777);
  testgen::GenOptions opt;
  opt.max_chains = 2;
  opt.max_depth = 4;

  int accepted = 0, attempts = 0;
  std::int64_t save_edge_checks = 0;
  while (accepted < 500 && attempts < 20000) {
    attempts += 1;
    testgen::Program p = testgen::make_program(rng, opt);
    testgen::StaticRun sr = testgen::to_static(p);
    if (sr.graph.nodes.size() > 12) continue;
    accepted += 1;
    const std::string tag = "graph " + std::to_string(accepted);

    // partition against the independent fixpoint oracle
    const std::vector<FadSubgraph> subs = partition(sr.graph);
    const testgen::OraclePart oracle = testgen::oracle_partition(sr.graph);
    if (subs.size() != oracle.members.size()) {
      detail = tag + ": " + std::to_string(subs.size()) + " chains, oracle found " +
               std::to_string(oracle.members.size());
      return false;
    }
    for (const FadSubgraph& sub : subs) {
      auto it = oracle.members.find(sub.source);
      if (it == oracle.members.end()) {
        detail = tag + ": chain source " + std::to_string(sub.source) + " unknown to oracle";
        return false;
      }
      const std::set<std::int64_t> m(sub.members.begin(), sub.members.end());
      const std::set<std::int64_t> want(it->second.begin(), it->second.end());
      const std::set<std::int64_t> b(sub.boundary.begin(), sub.boundary.end());
      if (m != want || b != oracle.boundary.at(sub.source) ||
          sub.in_degree != oracle.in_degree.at(sub.source)) {
        detail = tag + ": chain at source " + std::to_string(sub.source) +
                 " disagrees with the oracle";
        return false;
      }
    }

    // gradients preserved and save edges accounted per escaping value
    std::map<int, std::vector<double>> plain = testgen::static_grads(p, false);
    std::map<int, std::vector<double>> rewritten = testgen::static_grads(p, true);
    for (const auto& [slot, ref] : plain) {
      if (testutil::max_gap(ref, rewritten.at(slot)) > 1e-10) {
        detail = tag + ": rewrite changed leaf " + std::to_string(slot) + " gradient";
        return false;
      }
    }

    std::vector<std::int64_t> wrt;
    for (const auto& [slot, node] : sr.leaf_node) wrt.push_back(node);
    build_backward(sr.graph, sr.graph.outputs.front(), wrt);
    std::int64_t expected = 0;
    for (const FadSubgraph& sub : select_candidates(sr.graph, partition(sr.graph))) {
      expected += sub.out_degree;
    }
    rewrite_all(sr.graph);
    // A tangent save edge is a backward reference to an appended derivative
    // node, or to a chain member reused as its own derivative (exp). Only the
    // per-end multiplies carry no serves tag, so member saves made by an
    // external consumer's machinery never count.
    std::set<std::int64_t> members;
    for (const FadSubgraph& sub : partition(sr.graph)) {
      if (!sr.graph.rewritten_sources.count(sub.source)) continue;
      members.insert(sub.members.begin(), sub.members.end());
    }
    std::int64_t got = 0;
    for (const StaticNode& n : sr.graph.nodes) {
      if (n.dead || n.phase != Phase::kBackward) continue;
      for (std::int64_t arg : n.args) {
        const bool appended = sr.graph.nodes[(std::size_t)arg].phase == Phase::kFadAppended;
        const bool reused = n.serves < 0 && members.count(arg) > 0;
        if (appended || reused) got += 1;
      }
    }
    if (got != expected) {
      detail = tag + ": " + std::to_string(got) + " tangent save edges, want " +
               std::to_string(expected);
      return false;
    }
    save_edge_checks += expected;
  }
  if (accepted < 500) {
    detail = "only " + std::to_string(accepted) + " graphs of <=12 nodes in " +
             std::to_string(attempts) + " draws";
    return false;
  }
  detail = "partition matches the brute-force oracle on 500 graphs of <=12 nodes, rewrites "
           "preserve gradients, and " + std::to_string(save_edge_checks) +
           " save edges match the escaping-value count exactly";
  return true;
}

bool criterion7(const SuiteData& d, std::string& detail) {
  if (!d.ledger_zero) {
    detail = d.ledger_fail;
    return false;
  }
  if (!d.event_order) {
    detail = d.event_fail;
    return false;
  }
  detail = "intermediate and tangent bytes drain to zero after all " +
           std::to_string(d.programs * 3) + " engine runs, and interior chain storage dies "
           "before the chain end on " + std::to_string(d.audited) + " audited event logs";
  return true;
}

// ---- criterion 8: training smoke test ---------------------------------------

bool criterion8(std::string& detail) {
  testutil::Stopwatch sw;
  MlpConfig bp_cfg;
  bp_cfg.widths = {2, 16, 16, 1};
  bp_cfg.activation = "gelu";
  bp_cfg.seed = 210;
  MlpConfig fad_cfg = bp_cfg;
  fad_cfg.mode = Mode::kFad;

  MlpParams bp = init_params(bp_cfg);
  MlpParams fad = init_params(fad_cfg);
  const Batch batch = make_batch(bp_cfg, 16, 211);

  double first_loss = 0.0, last_loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    const StepResult rb = train_step(bp_cfg, bp, batch, 0.05);
    const StepResult rf = train_step(fad_cfg, fad, batch, 0.05);
    if (step == 0) first_loss = rb.loss;
    last_loss = rb.loss;
    if (std::abs(rf.loss - rb.loss) > 1e-8 * (std::abs(rb.loss) + 1e-12)) {
      detail = "step " + std::to_string(step) + ": losses diverge";
      return false;
    }
    for (std::size_t l = 0; l < bp.weights.size(); ++l) {
      for (std::size_t i = 0; i < bp.weights[l].size(); ++i) {
        if (rel_against(fad.weights[l][i], bp.weights[l][i]) > 1e-8) {
          detail = "step " + std::to_string(step) + ": W" + std::to_string(l) + "[" +
                   std::to_string(i) + "] rel err " +
                   fmt(rel_against(fad.weights[l][i], bp.weights[l][i]));
          return false;
        }
      }
      for (std::size_t i = 0; i < bp.biases[l].size(); ++i) {
        if (rel_against(fad.biases[l][i], bp.biases[l][i]) > 1e-8) {
          detail = "step " + std::to_string(step) + ": b" + std::to_string(l) + " rel err high";
          return false;
        }
      }
    }
  }
  const double final_loss = forward_loss(bp_cfg, bp, batch);
  if (!(final_loss < first_loss) || !(last_loss < first_loss)) {
    detail = "loss did not decrease: " + std::to_string(first_loss) + " -> " +
             std::to_string(final_loss);
    return false;
  }
  const double secs = sw.seconds();
  if (secs >= 30.0) {
    detail = "took " + fmt(secs) + "s, bound is 30s";
    return false;
  }
  detail = "200 gelu SGD steps: chain-mode weights track plain backprop within 1e-8 at every "
           "step, loss " + fmt(first_loss) + " -> " + fmt(final_loss) + " in " + fmt(secs) + "s";
  return true;
}

}  // namespace

int main() {
  std::string detail;

  const bool c1 = criterion1(detail);
  verdict(1, c1, detail);

  const SuiteData suite = run_suite(1000);
  const bool c2 = criterion2(suite, detail);
  verdict(2, c2, detail);

  const bool c3 = criterion3(detail);
  verdict(3, c3, detail);

  const bool c4 = criterion4(suite, detail);
  verdict(4, c4, detail);

  const bool c5 = criterion5(suite, detail);
  verdict(5, c5, detail);

  const bool c6 = criterion6(detail);
  verdict(6, c6, detail);

  const bool c7 = criterion7(suite, detail);
  verdict(7, c7, detail);

  const bool c8 = criterion8(detail);
  verdict(8, c8, detail);

  if (g_failures > 0) {
    std::printf("%d of 8 criteria failed\n", g_failures);
    return 1;
  }
  std::printf("all 8 criteria hold\n");
  return 0;
}
