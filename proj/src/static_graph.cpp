#include "nestad/static_graph.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <utility>

namespace nestad {

namespace {

bool is_pseudo_op(const std::string& op) {
  return op == "input" || op == "const_fill" || op == "expand";
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Topological order of live nodes; throws if a live node references a dead
// one or the graph has a cycle.
std::vector<std::int64_t> topo_order(const StaticGraph& g) {
  const std::int64_t n = static_cast<std::int64_t>(g.nodes.size());
  std::vector<std::int64_t> indeg(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<std::int64_t>> consumers(static_cast<std::size_t>(n));
  std::int64_t live = 0;
  for (const StaticNode& node : g.nodes) {
    if (node.dead) continue;
    live += 1;
    for (std::int64_t a : node.args) {
      if (g.nodes[static_cast<std::size_t>(a)].dead) {
        throw std::logic_error("node " + std::to_string(node.id) + " references dead node " +
                               std::to_string(a));
      }
      indeg[static_cast<std::size_t>(node.id)] += 1;
      consumers[static_cast<std::size_t>(a)].push_back(node.id);
    }
  }
  std::deque<std::int64_t> ready;
  for (const StaticNode& node : g.nodes) {
    if (!node.dead && indeg[static_cast<std::size_t>(node.id)] == 0) ready.push_back(node.id);
  }
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(live));
  while (!ready.empty()) {
    const std::int64_t id = ready.front();
    ready.pop_front();
    order.push_back(id);
    for (std::int64_t c : consumers[static_cast<std::size_t>(id)]) {
      if (--indeg[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
  }
  if (static_cast<std::int64_t>(order.size()) != live) {
    throw std::logic_error("graph has a cycle");
  }
  return order;
}

Shape shape_from_attrs(const std::vector<double>& attrs, std::size_t from,
                       const std::string& what) {
  if (from >= attrs.size()) {
    throw std::invalid_argument(what + ": missing dims");
  }
  std::vector<std::int64_t> dims;
  for (std::size_t i = from; i < attrs.size(); ++i) {
    const double d = attrs[i];
    if (d <= 0 || d != static_cast<double>(static_cast<std::int64_t>(d))) {
      throw std::invalid_argument(what + ": dims must be positive integers");
    }
    dims.push_back(static_cast<std::int64_t>(d));
  }
  return Shape(std::move(dims));
}

}  // namespace

const char* to_string(Phase p) {
  switch (p) {
    case Phase::kForward: return "FORWARD";
    case Phase::kFadAppended: return "FORWARD-AD";
    case Phase::kBackward: return "BACKWARD";
  }
  return "?";
}

std::int64_t StaticGraph::add(std::string op, std::vector<std::int64_t> args,
                              std::vector<double> attrs, Phase phase) {
  StaticNode n;
  n.id = static_cast<std::int64_t>(nodes.size());
  for (std::int64_t a : args) {
    if (a < 0 || a >= n.id) {
      throw std::invalid_argument("node " + std::to_string(n.id) + ": bad arg " +
                                  std::to_string(a));
    }
  }
  n.op = std::move(op);
  n.args = std::move(args);
  n.attrs = std::move(attrs);
  n.phase = phase;
  nodes.push_back(std::move(n));
  return nodes.back().id;
}

bool StaticGraph::is_pseudo(std::int64_t id) const {
  return is_pseudo_op(nodes.at(static_cast<std::size_t>(id)).op);
}

bool structurally_equal(const StaticGraph& a, const StaticGraph& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const StaticNode& x = a.nodes[i];
    const StaticNode& y = b.nodes[i];
    if (x.op != y.op || x.args != y.args || x.attrs != y.attrs || x.phase != y.phase ||
        x.dead != y.dead) {
      return false;
    }
  }
  return a.outputs == b.outputs && a.grad_outputs == b.grad_outputs;
}

// ---- text form --------------------------------------------------------------

static std::vector<std::pair<std::int64_t, std::int64_t>> derive_save_edges(
    const StaticGraph& g) {
  std::set<std::pair<std::int64_t, std::int64_t>> edges;
  for (const StaticNode& n : g.nodes) {
    if (n.dead || n.phase != Phase::kBackward) continue;
    for (std::int64_t a : n.args) {
      if (g.nodes[static_cast<std::size_t>(a)].phase != Phase::kBackward) {
        edges.emplace(n.id, a);
      }
    }
  }
  return {edges.begin(), edges.end()};
}

std::string serialize(const StaticGraph& g) {
  std::string out;
  auto emit_section = [&](Phase p, bool always) {
    std::string body;
    for (const StaticNode& n : g.nodes) {
      if (n.dead || n.phase != p) continue;
      body += std::to_string(n.id);
      body += " = ";
      body += n.op;
      body += '(';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i) body += ' ';
        body += std::to_string(n.args[i]);
      }
      body += ';';
      for (const double a : n.attrs) {
        body += ' ';
        body += fmt_double(a);
      }
      body += ")\n";
    }
    if (!body.empty() || always) {
      out += to_string(p);
      out += '\n';
      out += body;
    }
  };
  emit_section(Phase::kForward, true);
  emit_section(Phase::kFadAppended, false);
  emit_section(Phase::kBackward, false);

  const auto edges = derive_save_edges(g);
  if (!edges.empty()) {
    out += "SAVE-EDGES\n";
    for (const auto& [b, f] : edges) {
      out += "save " + std::to_string(b) + ' ' + std::to_string(f) + '\n';
    }
  }
  if (!g.outputs.empty()) {
    out += "OUTPUTS\n";
    for (std::int64_t o : g.outputs) out += "out " + std::to_string(o) + '\n';
  }
  if (!g.grad_outputs.empty()) {
    out += "GRADS\n";
    for (const auto& [leaf, node] : g.grad_outputs) {
      out += "grad " + std::to_string(leaf) + ' ' + std::to_string(node) + '\n';
    }
  }
  return out;
}

namespace {

struct Cursor {
  const char* p = nullptr;
  std::int64_t line = 0;
};

std::int64_t parse_id(const std::string& tok, std::int64_t line, const std::string& what) {
  if (tok.empty()) throw ParseError(line, what + ": empty id");
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (errno != 0 || end != tok.c_str() + tok.size() || v < 0) {
    throw ParseError(line, what + ": bad id '" + tok + "'");
  }
  return static_cast<std::int64_t>(v);
}

double parse_num(const std::string& tok, std::int64_t line) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size()) {
    throw ParseError(line, "bad number '" + tok + "'");
  }
  return v;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> toks;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) toks.push_back(s.substr(i, j - i));
    i = j;
  }
  return toks;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

}  // namespace

StaticGraph parse_graph(const std::string& text) {
  static const char* kSections[] = {"FORWARD", "FORWARD-AD", "BACKWARD",
                                    "SAVE-EDGES", "OUTPUTS", "GRADS"};
  const Registry& reg = Registry::builtin();

  std::map<std::int64_t, StaticNode> pending;
  std::vector<std::int64_t> outputs;
  std::map<std::int64_t, std::int64_t> grads;
  std::set<std::pair<std::int64_t, std::int64_t>> claimed_edges;
  std::int64_t save_section_line = -1;

  int section = -1;  // index into kSections; -1 before the first header
  std::int64_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    line_no += 1;
    const std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) {
      if (nl == text.size()) break;
      continue;
    }

    int as_section = -1;
    for (int s = 0; s < 6; ++s) {
      if (line == kSections[s]) as_section = s;
    }
    if (as_section >= 0) {
      if (section < 0 && as_section != 0) {
        throw ParseError(line_no, "first section must be FORWARD");
      }
      if (as_section <= section) {
        throw ParseError(line_no, std::string("section ") + kSections[as_section] +
                                      " out of order");
      }
      section = as_section;
      if (section == 3) save_section_line = line_no;
      continue;
    }
    if (section < 0) throw ParseError(line_no, "expected FORWARD header");

    if (section <= 2) {  // node sections
      const std::size_t eq = line.find(" = ");
      if (eq == std::string::npos) throw ParseError(line_no, "expected '<id> = <op>(...)'");
      const std::int64_t id = parse_id(trim(line.substr(0, eq)), line_no, "node");
      std::string rest = trim(line.substr(eq + 3));
      const std::size_t open = rest.find('(');
      if (open == std::string::npos || rest.empty() || rest.back() != ')') {
        throw ParseError(line_no, "expected '<op>(<args>; <attrs>)'");
      }
      const std::string op = rest.substr(0, open);
      if (op.empty()) throw ParseError(line_no, "missing op name");
      const std::string inside = rest.substr(open + 1, rest.size() - open - 2);
      const std::size_t semi = inside.find(';');
      if (semi == std::string::npos) throw ParseError(line_no, "missing ';' in op arguments");
      const std::vector<std::string> arg_toks = split_ws(inside.substr(0, semi));
      const std::vector<std::string> attr_toks = split_ws(inside.substr(semi + 1));

      StaticNode n;
      n.id = id;
      n.op = op;
      n.phase = section == 0   ? Phase::kForward
                : section == 1 ? Phase::kFadAppended
                               : Phase::kBackward;
      for (const std::string& t : arg_toks) n.args.push_back(parse_id(t, line_no, "arg"));
      for (const std::string& t : attr_toks) n.attrs.push_back(parse_num(t, line_no));

      if (is_pseudo_op(op)) {
        const std::size_t want_args = op == "expand" ? 1 : 0;
        if (n.args.size() != want_args) {
          throw ParseError(line_no, op + ": expected " + std::to_string(want_args) + " args");
        }
        const std::size_t min_attrs = op == "const_fill" ? 2 : 1;
        if (n.attrs.size() < min_attrs) throw ParseError(line_no, op + ": missing attrs");
      } else {
        const OpDef* def = reg.find(op);
        if (def == nullptr) throw ParseError(line_no, "unknown op '" + op + "'");
        if (static_cast<int>(n.args.size()) != def->arity) {
          throw ParseError(line_no, op + ": expected " + std::to_string(def->arity) + " args");
        }
        const std::size_t want_attrs = def->takes_attr ? 1 : 0;
        if (n.attrs.size() != want_attrs) {
          throw ParseError(line_no, op + ": expected " + std::to_string(want_attrs) + " attrs");
        }
      }
      if (!pending.emplace(id, std::move(n)).second) {
        throw ParseError(line_no, "duplicate node id " + std::to_string(id));
      }
      continue;
    }

    const std::vector<std::string> toks = split_ws(line);
    if (section == 3) {
      if (toks.size() != 3 || toks[0] != "save") {
        throw ParseError(line_no, "expected 'save <backward> <forward>'");
      }
      const auto e = std::make_pair(parse_id(toks[1], line_no, "save"),
                                    parse_id(toks[2], line_no, "save"));
      if (!claimed_edges.insert(e).second) throw ParseError(line_no, "duplicate save edge");
    } else if (section == 4) {
      if (toks.size() != 2 || toks[0] != "out") throw ParseError(line_no, "expected 'out <id>'");
      outputs.push_back(parse_id(toks[1], line_no, "out"));
    } else {
      if (toks.size() != 3 || toks[0] != "grad") {
        throw ParseError(line_no, "expected 'grad <leaf> <node>'");
      }
      const std::int64_t leaf = parse_id(toks[1], line_no, "grad");
      const std::int64_t node = parse_id(toks[2], line_no, "grad");
      if (!grads.emplace(leaf, node).second) {
        throw ParseError(line_no, "duplicate grad for node " + std::to_string(leaf));
      }
    }
  }
  if (section < 0) throw ParseError(line_no, "empty program; expected FORWARD header");

  StaticGraph g;
  g.nodes.reserve(pending.size());
  std::int64_t want = 0;
  for (auto& [id, n] : pending) {
    if (id != want) {
      throw ParseError(line_no, "node ids are not dense: missing id " + std::to_string(want));
    }
    want += 1;
    g.nodes.push_back(std::move(n));
  }
  const std::int64_t count = static_cast<std::int64_t>(g.nodes.size());
  auto check_ref = [&](std::int64_t id, const char* what) {
    if (id < 0 || id >= count) {
      throw ParseError(line_no, std::string(what) + " references unknown node " +
                                    std::to_string(id));
    }
  };
  for (const StaticNode& n : g.nodes) {
    for (std::int64_t a : n.args) check_ref(a, "node");
  }
  for (std::int64_t o : outputs) check_ref(o, "out");
  for (const auto& [leaf, node] : grads) {
    check_ref(leaf, "grad");
    check_ref(node, "grad");
  }
  g.outputs = std::move(outputs);
  g.grad_outputs = std::move(grads);

  const auto derived = derive_save_edges(g);
  const std::set<std::pair<std::int64_t, std::int64_t>> derived_set(derived.begin(),
                                                                    derived.end());
  if (derived_set != claimed_edges) {
    const std::int64_t at = save_section_line >= 0 ? save_section_line : line_no;
    throw ParseError(at, "save edges do not match the node list (listed " +
                             std::to_string(claimed_edges.size()) + ", derived " +
                             std::to_string(derived_set.size()) + ")");
  }
  return g;
}

// ---- evaluation -------------------------------------------------------------

std::vector<Shape> infer_shapes(const StaticGraph& g) {
  const Registry& reg = g.reg();
  std::vector<Shape> shapes(g.nodes.size());
  for (std::int64_t id : topo_order(g)) {
    const StaticNode& n = g.nodes[static_cast<std::size_t>(id)];
    const std::string where = "node " + std::to_string(id) + " (" + n.op + ")";
    if (n.op == "input") {
      shapes[static_cast<std::size_t>(id)] = shape_from_attrs(n.attrs, 0, where);
    } else if (n.op == "const_fill") {
      shapes[static_cast<std::size_t>(id)] = shape_from_attrs(n.attrs, 1, where);
    } else if (n.op == "expand") {
      const Shape target = shape_from_attrs(n.attrs, 0, where);
      const Shape& src = shapes[static_cast<std::size_t>(n.args[0])];
      const bool scalar = src.numel() == 1;
      const bool row = src.rank() == 1 && target.rank() == 2 && src.dim(0) == target.dim(1);
      if (!scalar && !row) {
        throw std::invalid_argument(where + ": cannot expand " + src.to_string() + " to " +
                                    target.to_string());
      }
      shapes[static_cast<std::size_t>(id)] = target;
    } else {
      const OpDef& def = reg.at(n.op);
      const Shape& a = shapes[static_cast<std::size_t>(n.args[0])];
      const Shape* b =
          def.arity == 2 ? &shapes[static_cast<std::size_t>(n.args[1])] : nullptr;
      shapes[static_cast<std::size_t>(id)] = def.infer(a, b, n.attrs.empty() ? 0.0 : n.attrs[0]);
    }
  }
  return shapes;
}

EvalResult interpret(const StaticGraph& g,
                     const std::map<std::int64_t, std::vector<double>>& inputs,
                     kernels::Exec exec) {
  const Registry& reg = g.reg();
  EvalResult r;
  r.shapes = infer_shapes(g);
  r.values.resize(g.nodes.size());
  for (std::int64_t id : topo_order(g)) {
    const StaticNode& n = g.nodes[static_cast<std::size_t>(id)];
    const Shape& shape = r.shapes[static_cast<std::size_t>(id)];
    std::vector<double>& out = r.values[static_cast<std::size_t>(id)];
    out.assign(static_cast<std::size_t>(shape.numel()), 0.0);
    if (n.op == "input") {
      auto it = inputs.find(id);
      if (it == inputs.end()) {
        throw std::invalid_argument("no value supplied for input node " + std::to_string(id));
      }
      if (it->second.size() != out.size()) {
        throw std::invalid_argument("input node " + std::to_string(id) + " expects " +
                                    std::to_string(out.size()) + " values, got " +
                                    std::to_string(it->second.size()));
      }
      out = it->second;
    } else if (n.op == "const_fill") {
      std::fill(out.begin(), out.end(), n.attrs[0]);
    } else if (n.op == "expand") {
      const std::vector<double>& src = r.values[static_cast<std::size_t>(n.args[0])];
      if (src.size() == 1) {
        std::fill(out.begin(), out.end(), src[0]);
      } else {
        const std::size_t cols = src.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i % cols];
      }
    } else {
      const OpDef& def = reg.at(n.op);
      const std::vector<double>& a = r.values[static_cast<std::size_t>(n.args[0])];
      ForwardCtx fc;
      fc.a = a;
      fc.a_shape = &r.shapes[static_cast<std::size_t>(n.args[0])];
      if (def.arity == 2) {
        fc.b = r.values[static_cast<std::size_t>(n.args[1])];
        fc.b_shape = &r.shapes[static_cast<std::size_t>(n.args[1])];
      }
      fc.attr = n.attrs.empty() ? 0.0 : n.attrs[0];
      fc.out = out;
      fc.out_shape = &shape;
      fc.exec = exec;
      def.forward(fc);
    }
  }
  return r;
}

// ---- differentiation --------------------------------------------------------

PartialVal emit_partial(StaticGraph& g, std::int64_t id, int slot, Phase phase,
                        std::int64_t serves) {
  const StaticNode n = g.nodes.at(static_cast<std::size_t>(id));  // copy; adds invalidate refs
  const std::string& op = n.op;
  const double attr = n.attrs.empty() ? 0.0 : n.attrs[0];
  auto constant = [](double c) { return PartialVal{true, c, -1}; };
  auto existing = [](std::int64_t node) { return PartialVal{false, 0.0, node}; };
  auto emit = [&](std::string eop, std::vector<std::int64_t> args,
                  std::vector<double> attrs = {}) {
    const std::int64_t e = g.add(std::move(eop), std::move(args), std::move(attrs), phase);
    g.nodes.back().serves = serves;
    return e;
  };

  if (op == "add") return constant(1.0);
  if (op == "sub") return constant(slot == 0 ? 1.0 : -1.0);
  if (op == "neg") return constant(-1.0);
  if (op == "heaviside") return constant(0.0);
  if (op == "const_add") return constant(1.0);
  if (op == "const_mul") return constant(attr);
  if (op == "mul") return existing(n.args[slot == 0 ? 1 : 0]);
  if (op == "div") {
    if (slot == 0) return existing(emit("pow_const", {n.args[1]}, {-1.0}));
    return existing(emit("neg", {emit("div", {id, n.args[1]})}));
  }
  if (op == "exp") return existing(id);
  if (op == "tanh") {
    return existing(emit("const_add", {emit("neg", {emit("mul", {id, id})})}, {1.0}));
  }
  if (op == "sigmoid") {
    return existing(emit("mul", {id, emit("const_add", {emit("neg", {id})}, {1.0})}));
  }
  if (op == "softplus") {
    return existing(emit("const_add", {emit("neg", {emit("exp", {emit("neg", {id})})})}, {1.0}));
  }
  if (op == "relu") return existing(emit("heaviside", {id}));
  if (op == "pow_const") {
    if (attr == 0.0) return constant(0.0);
    if (attr == 1.0) return constant(1.0);
    return existing(emit("const_mul", {emit("pow_const", {n.args[0]}, {attr - 1.0})}, {attr}));
  }
  throw std::logic_error("no per-element partial for op '" + op + "'");
}

void build_backward(StaticGraph& g, std::int64_t loss, const std::vector<std::int64_t>& wrt) {
  if (loss < 0 || loss >= static_cast<std::int64_t>(g.nodes.size()) ||
      g.nodes[static_cast<std::size_t>(loss)].dead) {
    throw std::invalid_argument("build_backward: bad loss node " + std::to_string(loss));
  }
  if (g.nodes[static_cast<std::size_t>(loss)].phase != Phase::kForward) {
    throw std::invalid_argument("build_backward: loss is not a forward node");
  }
  if (!g.grad_outputs.empty() || g.loss_node >= 0) {
    throw std::logic_error("build_backward: graph already has gradient machinery");
  }
  const Registry& reg = g.reg();
  const std::vector<Shape> shapes = infer_shapes(g);
  if (shapes[static_cast<std::size_t>(loss)].numel() != 1) {
    throw std::invalid_argument("build_backward: loss must be scalar, got " +
                                shapes[static_cast<std::size_t>(loss)].to_string());
  }
  g.loss_node = loss;

  std::vector<std::int64_t> forward_topo;
  for (std::int64_t id : topo_order(g)) {
    if (g.nodes[static_cast<std::size_t>(id)].phase == Phase::kForward) {
      forward_topo.push_back(id);
    }
  }

  auto emit = [&](std::string op, std::vector<std::int64_t> args, std::vector<double> attrs,
                  std::int64_t serves) {
    const std::int64_t e = g.add(std::move(op), std::move(args), std::move(attrs),
                                 Phase::kBackward);
    g.nodes.back().serves = serves;
    return e;
  };
  auto dims_attr = [&](std::int64_t of) {
    std::vector<double> a;
    for (std::int64_t d : shapes[static_cast<std::size_t>(of)].dims()) {
      a.push_back(static_cast<double>(d));
    }
    return a;
  };

  const std::int64_t seed = emit("const_fill", {}, {1.0, 1.0}, -1);
  g.contribs[loss].push_back({seed, -1});
  g.grad_node[loss] = seed;

  for (auto it = forward_topo.rbegin(); it != forward_topo.rend(); ++it) {
    const std::int64_t f = *it;
    const auto cit = g.contribs.find(f);
    if (cit == g.contribs.end() || cit->second.empty()) continue;

    // Fold the contributions into this node's gradient.
    std::int64_t grad = cit->second[0].node;
    for (std::size_t i = 1; i < cit->second.size(); ++i) {
      grad = g.add("add", {grad, cit->second[i].node}, {}, Phase::kBackward);
      g.nodes.back().grad_for = f;
    }
    g.grad_node[f] = grad;

    const StaticNode node = g.nodes[static_cast<std::size_t>(f)];  // copy
    if (node.op == "input" || node.op == "const_fill") continue;
    if (node.op == "expand") {
      throw std::invalid_argument("build_backward: cannot differentiate expand");
    }
    const OpDef& def = reg.at(node.op);
    auto contribute = [&](std::int64_t arg, std::int64_t cnode) {
      g.contribs[arg].push_back({cnode, f});
    };

    if (def.fad_capable()) {
      for (int slot = 0; slot < def.arity; ++slot) {
        const PartialVal p = emit_partial(g, f, slot, Phase::kBackward, f);
        if (p.is_const) {
          if (p.c == 0.0) continue;
          if (p.c == 1.0) {
            contribute(node.args[static_cast<std::size_t>(slot)], grad);
          } else {
            contribute(node.args[static_cast<std::size_t>(slot)],
                       emit("const_mul", {grad}, {p.c}, f));
          }
        } else {
          contribute(node.args[static_cast<std::size_t>(slot)],
                     emit("mul", {grad, p.node}, {}, f));
        }
      }
    } else if (node.op == "matmul") {
      contribute(node.args[0], emit("matmul", {grad, emit("transpose", {node.args[1]}, {}, f)},
                                    {}, f));
      contribute(node.args[1], emit("matmul", {emit("transpose", {node.args[0]}, {}, f), grad},
                                    {}, f));
    } else if (node.op == "bias_add") {
      contribute(node.args[0], grad);
      contribute(node.args[1], emit("col_sum", {grad}, {}, f));
    } else if (node.op == "reduce_sum") {
      contribute(node.args[0], emit("expand", {grad}, dims_attr(node.args[0]), f));
    } else if (node.op == "mse_loss") {
      const std::int64_t ge = emit("expand", {grad}, dims_attr(node.args[0]), f);
      const std::int64_t diff = emit("sub", {node.args[0], node.args[1]}, {}, f);
      const double scale =
          2.0 / static_cast<double>(shapes[static_cast<std::size_t>(node.args[0])].numel());
      const std::int64_t dp = emit("const_mul", {emit("mul", {ge, diff}, {}, f)}, {scale}, f);
      contribute(node.args[0], dp);
      contribute(node.args[1], emit("neg", {dp}, {}, f));
    } else if (node.op == "transpose") {
      contribute(node.args[0], emit("transpose", {grad}, {}, f));
    } else if (node.op == "col_sum") {
      contribute(node.args[0], emit("expand", {grad}, dims_attr(node.args[0]), f));
    } else {
      throw std::logic_error("build_backward: no gradient rule for op '" + node.op + "'");
    }
  }

  for (std::int64_t w : wrt) {
    if (w < 0 || w >= static_cast<std::int64_t>(g.nodes.size()) ||
        g.nodes[static_cast<std::size_t>(w)].phase != Phase::kForward) {
      throw std::invalid_argument("build_backward: bad wrt node " + std::to_string(w));
    }
    auto it = g.grad_node.find(w);
    if (it != g.grad_node.end()) {
      g.grad_outputs[w] = it->second;
    } else {
      // No path to the loss; the gradient is identically zero.
      std::vector<double> attrs{0.0};
      for (double d : dims_attr(w)) attrs.push_back(d);
      const std::int64_t z = emit("const_fill", {}, std::move(attrs), -1);
      g.nodes.back().grad_for = w;
      g.grad_node[w] = z;
      g.grad_outputs[w] = z;
    }
  }
}

}  // namespace nestad
