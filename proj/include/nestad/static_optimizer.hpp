#pragma once

#include <cstdint>
#include <vector>

#include "nestad/static_graph.hpp"

namespace nestad {

// A maximal single-source chain of fad-capable forward nodes. Binary members
// have both operands inside the chain (or equal to the source), so every
// member is an element-wise function of the source alone.
struct FadSubgraph {
  std::int64_t source = -1;
  std::vector<std::int64_t> members;   // topological order
  std::vector<std::int64_t> boundary;  // members whose value escapes the chain
  int in_degree = 0;                   // distinct producers outside the chain
  int out_degree = 0;                  // == boundary.size()
  bool stale = false;                  // already rewritten, or fed into tangent nodes
};

std::vector<FadSubgraph> partition(const StaticGraph& g);

// Rewritable subgraphs: single producer, at least one escaping value, not
// stale, and no member directly requested as a gradient output.
std::vector<FadSubgraph> select_candidates(const StaticGraph& g,
                                           const std::vector<FadSubgraph>& subs);

// Replaces the chain's per-member gradient machinery with forward tangents:
// appends nodes computing d(member)/d(source) for each boundary member,
// multiplies each boundary's surviving gradient inflow by its tangent, and
// accumulates the products into the source's gradient. Marks the replaced
// backward nodes dead; call compact() to renumber. Throws on stale input.
void rewrite(StaticGraph& g, const FadSubgraph& sub);

struct RewriteStats {
  int rewritten = 0;
  int skipped_stale = 0;
  int skipped_dead = 0;  // chains whose value never escapes
};

// partition + select + rewrite each + compact.
RewriteStats rewrite_all(StaticGraph& g);

// Drops dead nodes and renumbers the rest, ordering forward, fad-appended,
// then backward nodes. All id-bearing bookkeeping is remapped.
void compact(StaticGraph& g);

}  // namespace nestad
