#include "nestad/static_optimizer.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <utility>

namespace nestad {

namespace {

// Per-member tangent w.r.t. the chain source. Constants stay symbolic so a
// multiply by 1 or an add of 0 never reaches the graph.
struct TangentVal {
  enum class Kind { kZero, kConst, kNode } kind = Kind::kZero;
  double c = 0.0;
  std::int64_t node = -1;

  static TangentVal zero() { return {}; }
  static TangentVal constant(double v) { return {Kind::kConst, v, -1}; }
  static TangentVal of_node(std::int64_t n) { return {Kind::kNode, 0.0, n}; }
};

std::vector<double> dims_attr(const Shape& s, double head) {
  std::vector<double> a{head};
  for (std::int64_t d : s.dims()) a.push_back(static_cast<double>(d));
  return a;
}

}  // namespace

std::vector<FadSubgraph> partition(const StaticGraph& g) {
  const Registry& reg = g.reg();
  std::map<std::int64_t, std::int64_t> member_source;  // member -> chain source
  auto token = [&](std::int64_t id) {
    auto it = member_source.find(id);
    return it == member_source.end() ? id : it->second;
  };

  std::vector<std::int64_t> forward;
  {
    // topo over live nodes, restricted to the forward phase
    std::vector<std::int64_t> order;
    std::map<std::int64_t, std::vector<std::int64_t>> consumers;
    std::map<std::int64_t, int> indeg;
    for (const StaticNode& n : g.nodes) {
      if (n.dead || n.phase != Phase::kForward) continue;
      indeg[n.id] += 0;
      for (std::int64_t a : n.args) {
        indeg[n.id] += 1;
        consumers[a].push_back(n.id);
      }
    }
    std::vector<std::int64_t> ready;
    for (const auto& [id, d] : indeg) {
      if (d == 0) ready.push_back(id);
    }
    while (!ready.empty()) {
      std::sort(ready.begin(), ready.end(), std::greater<>());
      const std::int64_t id = ready.back();
      ready.pop_back();
      order.push_back(id);
      for (std::int64_t c : consumers[id]) {
        if (--indeg[c] == 0) ready.push_back(c);
      }
    }
    forward = std::move(order);
  }

  std::map<std::int64_t, FadSubgraph> groups;
  for (std::int64_t id : forward) {
    const StaticNode& n = g.nodes[static_cast<std::size_t>(id)];
    if (g.is_pseudo(id)) continue;
    const OpDef* def = reg.find(n.op);
    if (def == nullptr || !def->fad_capable()) continue;
    std::int64_t src = token(n.args[0]);
    if (def->arity == 2 && token(n.args[1]) != src) continue;
    if (src == id) continue;  // would be its own source; cannot happen in a DAG
    member_source[id] = src;
    FadSubgraph& sub = groups[src];
    sub.source = src;
    sub.members.push_back(id);
  }

  std::set<std::int64_t> output_set(g.outputs.begin(), g.outputs.end());
  for (auto& [src, sub] : groups) {
    const std::set<std::int64_t> members(sub.members.begin(), sub.members.end());
    std::set<std::int64_t> boundary;
    std::set<std::int64_t> producers;
    for (std::int64_t m : sub.members) {
      for (std::int64_t a : g.nodes[static_cast<std::size_t>(m)].args) {
        if (!members.count(a)) producers.insert(a);
      }
      if (output_set.count(m) || m == g.loss_node) boundary.insert(m);
    }
    for (const StaticNode& c : g.nodes) {
      if (c.dead) continue;
      const bool external_forward = c.phase == Phase::kForward && !members.count(c.id);
      const bool tangent_consumer = c.phase == Phase::kFadAppended;
      if (!external_forward && !tangent_consumer) continue;
      for (std::int64_t a : c.args) {
        if (!members.count(a)) continue;
        if (external_forward) boundary.insert(a);
        if (tangent_consumer) sub.stale = true;
      }
    }
    sub.boundary.assign(boundary.begin(), boundary.end());
    sub.in_degree = static_cast<int>(producers.size());
    sub.out_degree = static_cast<int>(sub.boundary.size());
    if (g.rewritten_sources.count(src)) sub.stale = true;
  }

  std::vector<FadSubgraph> out;
  out.reserve(groups.size());
  for (auto& [src, sub] : groups) out.push_back(std::move(sub));
  return out;
}

std::vector<FadSubgraph> select_candidates(const StaticGraph& g,
                                           const std::vector<FadSubgraph>& subs) {
  std::vector<FadSubgraph> chosen;
  for (const FadSubgraph& sub : subs) {
    if (sub.stale || sub.in_degree != 1 || sub.out_degree < 1) continue;
    bool member_is_grad_output = false;
    for (std::int64_t m : sub.members) {
      if (g.grad_outputs.count(m)) member_is_grad_output = true;
    }
    if (member_is_grad_output) continue;
    chosen.push_back(sub);
  }
  return chosen;
}

void rewrite(StaticGraph& g, const FadSubgraph& sub) {
  if (sub.stale || g.rewritten_sources.count(sub.source)) {
    throw std::logic_error("rewrite: subgraph of node " + std::to_string(sub.source) +
                           " is stale");
  }
  const std::int64_t source = sub.source;
  const std::set<std::int64_t> members(sub.members.begin(), sub.members.end());
  const std::vector<Shape> shapes = infer_shapes(g);
  const std::int64_t start_id = static_cast<std::int64_t>(g.nodes.size());
  auto is_member = [&](std::int64_t id) { return id >= 0 && members.count(id) > 0; };

  // Decide up front what survives, so the deletion scan below knows whether
  // the source's gradient sum gets rebuilt.
  std::map<std::int64_t, std::vector<Contribution>> kept;
  for (std::int64_t b : sub.boundary) {
    auto it = g.contribs.find(b);
    if (it == g.contribs.end()) continue;
    for (const Contribution& c : it->second) {
      if (!is_member(c.emitted_by)) kept[b].push_back(c);
    }
  }
  std::vector<Contribution> kept_source;
  std::size_t source_contrib_count = 0;
  if (auto it = g.contribs.find(source); it != g.contribs.end()) {
    source_contrib_count = it->second.size();
    for (const Contribution& c : it->second) {
      if (!is_member(c.emitted_by)) kept_source.push_back(c);
    }
  }
  // Every boundary feeds the source through its tangent below, so any
  // boundary at all forces a rebuilt source gradient.
  const bool rebuild_source =
      !sub.boundary.empty() || kept_source.size() != source_contrib_count;

  // Tangent pass: d(member)/d(source), element-wise, built from the members'
  // own forward values.
  std::map<std::int64_t, TangentVal> tangent;
  auto tangent_of = [&](std::int64_t arg) {
    if (arg == source) return TangentVal::constant(1.0);
    auto it = tangent.find(arg);
    if (it == tangent.end()) {
      throw std::logic_error("rewrite: chain argument " + std::to_string(arg) +
                             " has no tangent");
    }
    return it->second;
  };
  auto term = [&](std::int64_t m, int slot, const TangentVal& tin) {
    if (tin.kind == TangentVal::Kind::kZero) return TangentVal::zero();
    const PartialVal p = emit_partial(g, m, slot, Phase::kFadAppended, -1);
    if (p.is_const) {
      if (p.c == 0.0) return TangentVal::zero();
      if (tin.kind == TangentVal::Kind::kConst) return TangentVal::constant(p.c * tin.c);
      if (p.c == 1.0) return tin;
      return TangentVal::of_node(g.add("const_mul", {tin.node}, {p.c}, Phase::kFadAppended));
    }
    if (tin.kind == TangentVal::Kind::kConst) {
      if (tin.c == 1.0) return TangentVal::of_node(p.node);
      return TangentVal::of_node(g.add("const_mul", {p.node}, {tin.c}, Phase::kFadAppended));
    }
    return TangentVal::of_node(g.add("mul", {p.node, tin.node}, {}, Phase::kFadAppended));
  };
  auto sum = [&](const TangentVal& x, const TangentVal& y) {
    if (x.kind == TangentVal::Kind::kZero) return y;
    if (y.kind == TangentVal::Kind::kZero) return x;
    if (x.kind == TangentVal::Kind::kConst && y.kind == TangentVal::Kind::kConst) {
      return TangentVal::constant(x.c + y.c);
    }
    if (x.kind == TangentVal::Kind::kConst || y.kind == TangentVal::Kind::kConst) {
      const double c = x.kind == TangentVal::Kind::kConst ? x.c : y.c;
      const std::int64_t n = x.kind == TangentVal::Kind::kNode ? x.node : y.node;
      if (c == 0.0) return TangentVal::of_node(n);
      return TangentVal::of_node(g.add("const_add", {n}, {c}, Phase::kFadAppended));
    }
    return TangentVal::of_node(g.add("add", {x.node, y.node}, {}, Phase::kFadAppended));
  };
  for (std::int64_t m : sub.members) {
    const StaticNode& n = g.nodes[static_cast<std::size_t>(m)];
    const int arity = g.reg().at(n.op).arity;
    const std::vector<std::int64_t> args = n.args;  // adds below invalidate n
    TangentVal t = term(m, 0, tangent_of(args[0]));
    if (arity == 2) t = sum(t, term(m, 1, tangent_of(args[1])));
    tangent[m] = t;
  }

  // Materialize one tangent node per boundary member.
  std::map<std::int64_t, std::int64_t> ftr;
  for (std::int64_t b : sub.boundary) {
    const TangentVal& t = tangent.at(b);
    if (t.kind == TangentVal::Kind::kNode) {
      ftr[b] = t.node;
    } else {
      const double v = t.kind == TangentVal::Kind::kConst ? t.c : 0.0;
      ftr[b] = g.add("const_fill", {},
                     dims_attr(shapes[static_cast<std::size_t>(b)], v), Phase::kFadAppended);
    }
  }

  // Retire the per-member gradient machinery. The source's gradient sum dies
  // only when a replacement is built below.
  for (StaticNode& n : g.nodes) {
    if (n.dead || n.id >= start_id) continue;
    if (is_member(n.serves) || is_member(n.grad_for) ||
        (n.grad_for == source && rebuild_source)) {
      n.dead = true;
    }
  }

  // Gradient inflow at each boundary jumps straight to the source through
  // the tangent.
  std::vector<Contribution> source_contribs = std::move(kept_source);
  auto fold = [&](const std::vector<Contribution>& parts, std::int64_t tag) {
    std::int64_t acc = parts[0].node;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      acc = g.add("add", {acc, parts[i].node}, {}, Phase::kBackward);
      g.nodes.back().grad_for = tag;
    }
    return acc;
  };
  for (std::int64_t b : sub.boundary) {
    auto it = kept.find(b);
    std::int64_t gb = -1;
    if (it == kept.end() || it->second.empty()) {
      // Reachable end whose gradient inflow is structurally zero (a kink cut
      // the path). The zero still rides the tangent so every end costs
      // exactly one saved edge, the same as a live inflow.
      gb = g.add("const_fill", {}, dims_attr(shapes[static_cast<std::size_t>(b)], 0.0),
                 Phase::kBackward);
      g.nodes.back().grad_for = b;
      g.contribs.erase(b);
      g.grad_node[b] = gb;
    } else {
      gb = fold(it->second, b);
      g.grad_node[b] = gb;
      g.contribs[b] = it->second;
    }
    const std::int64_t mul = g.add("mul", {gb, ftr.at(b)}, {}, Phase::kBackward);
    source_contribs.push_back({mul, -1});
  }
  for (std::int64_t m : sub.members) {
    if (!ftr.count(m)) {  // non-boundary
      g.contribs.erase(m);
      g.grad_node.erase(m);
    }
  }

  if (rebuild_source) {
    if (source_contribs.empty()) {
      throw std::logic_error("rewrite: source gradient of node " + std::to_string(source) +
                             " lost");
    }
    const std::int64_t new_g = fold(source_contribs, source);
    const auto old_it = g.grad_node.find(source);
    const std::int64_t old_g = old_it == g.grad_node.end() ? -1 : old_it->second;
    if (old_g >= 0 && old_g != new_g) {
      // Pass-through consumers (bias_add, mixed-source add/sub) hand a
      // gradient onward without emitting a node, so one node can hold the
      // gradient of several nodes at once. Only references that mean "the
      // source's gradient", directly or through such pass-through hops, may
      // repoint to the replacement; the same node reached through an
      // unrelated gradient role keeps its old meaning.
      std::set<std::int64_t> tracking{source};
      bool grew = true;
      while (grew) {
        grew = false;
        for (const auto& [y, parts] : g.contribs) {
          if (tracking.count(y)) continue;
          const auto gy = g.grad_node.find(y);
          if (gy == g.grad_node.end() || gy->second != old_g) continue;
          for (const Contribution& c : parts) {
            if (c.node == old_g && tracking.count(c.emitted_by)) {
              tracking.insert(y);
              grew = true;
              break;
            }
          }
        }
      }
      std::set<std::int64_t> refolded;
      for (auto& [y, parts] : g.contribs) {
        for (Contribution& c : parts) {
          if (c.node == old_g && tracking.count(c.emitted_by)) {
            c.node = new_g;
            refolded.insert(y);
          }
        }
      }
      for (StaticNode& n : g.nodes) {
        if (n.dead || n.id >= start_id) continue;
        const bool consumes_role = n.serves >= 0 && tracking.count(n.serves) > 0;
        const bool mirrors_fold = n.grad_for >= 0 && refolded.count(n.grad_for) > 0;
        if (!consumes_role && !mirrors_fold) continue;
        for (std::int64_t& a : n.args) {
          if (a == old_g) a = new_g;
        }
      }
      for (std::int64_t y : tracking) {
        auto gy = g.grad_node.find(y);
        if (gy != g.grad_node.end() && gy->second == old_g) gy->second = new_g;
        auto go = g.grad_outputs.find(y);
        if (go != g.grad_outputs.end() && go->second == old_g) go->second = new_g;
      }
    }
    g.grad_node[source] = new_g;
    g.contribs[source] = std::move(source_contribs);
  }

  g.rewritten_sources.insert(source);
}

RewriteStats rewrite_all(StaticGraph& g) {
  RewriteStats stats;
  const std::vector<FadSubgraph> subs = partition(g);
  for (const FadSubgraph& sub : subs) {
    if (sub.stale) stats.skipped_stale += 1;
    else if (sub.out_degree == 0) stats.skipped_dead += 1;
  }
  for (const FadSubgraph& sub : select_candidates(g, subs)) {
    rewrite(g, sub);
    stats.rewritten += 1;
  }
  compact(g);
  return stats;
}

void compact(StaticGraph& g) {
  auto rank = [](Phase p) { return p == Phase::kForward ? 0 : p == Phase::kFadAppended ? 1 : 2; };
  std::vector<std::int64_t> live;
  for (const StaticNode& n : g.nodes) {
    if (!n.dead) live.push_back(n.id);
  }
  std::stable_sort(live.begin(), live.end(), [&](std::int64_t a, std::int64_t b) {
    return rank(g.nodes[static_cast<std::size_t>(a)].phase) <
           rank(g.nodes[static_cast<std::size_t>(b)].phase);
  });

  std::map<std::int64_t, std::int64_t> remap;
  for (std::size_t i = 0; i < live.size(); ++i) remap[live[i]] = static_cast<std::int64_t>(i);
  auto map_live = [&](std::int64_t id, const char* what) {
    auto it = remap.find(id);
    if (it == remap.end()) {
      throw std::logic_error(std::string("compact: ") + what + " references dead node " +
                             std::to_string(id));
    }
    return it->second;
  };
  auto map_tag = [&](std::int64_t id) {
    auto it = remap.find(id);
    return it == remap.end() ? -1 : it->second;
  };

  std::vector<StaticNode> nodes;
  nodes.reserve(live.size());
  for (std::int64_t old : live) {
    StaticNode n = std::move(g.nodes[static_cast<std::size_t>(old)]);
    n.id = remap.at(old);
    for (std::int64_t& a : n.args) a = map_live(a, "arg");
    n.serves = map_tag(n.serves);
    n.grad_for = map_tag(n.grad_for);
    nodes.push_back(std::move(n));
  }
  g.nodes = std::move(nodes);

  for (std::int64_t& o : g.outputs) o = map_live(o, "output");
  if (g.loss_node >= 0) g.loss_node = map_live(g.loss_node, "loss");
  {
    std::map<std::int64_t, std::int64_t> grads;
    for (const auto& [leaf, node] : g.grad_outputs) {
      grads[map_live(leaf, "grad leaf")] = map_live(node, "grad node");
    }
    g.grad_outputs = std::move(grads);
  }
  {
    std::map<std::int64_t, std::vector<Contribution>> contribs;
    for (const auto& [node, parts] : g.contribs) {
      if (!remap.count(node)) continue;
      std::vector<Contribution> mapped;
      for (const Contribution& c : parts) {
        if (!remap.count(c.node)) continue;
        mapped.push_back({remap.at(c.node), map_tag(c.emitted_by)});
      }
      if (!mapped.empty()) contribs[remap.at(node)] = std::move(mapped);
    }
    g.contribs = std::move(contribs);
  }
  {
    std::map<std::int64_t, std::int64_t> grad_node;
    for (const auto& [node, grad] : g.grad_node) {
      if (remap.count(node) && remap.count(grad)) grad_node[remap.at(node)] = remap.at(grad);
    }
    g.grad_node = std::move(grad_node);
  }
  {
    std::set<std::int64_t> sources;
    for (std::int64_t s : g.rewritten_sources) {
      if (remap.count(s)) sources.insert(remap.at(s));
    }
    g.rewritten_sources = std::move(sources);
  }
}

}  // namespace nestad
