#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "nestad/kernels.hpp"
#include "nestad/ops.hpp"
#include "nestad/shape.hpp"

namespace nestad {

// Which section of a program a node belongs to. Forward nodes compute
// values, backward nodes compute gradients, fad-appended nodes compute
// forward tangents spliced in by the rewrite pass.
enum class Phase { kForward, kFadAppended, kBackward };
const char* to_string(Phase p);

// A node in a static program. Besides registry ops there are three
// pseudo-ops the interpreter handles directly:
//   input       leaf fed by the caller; attrs = dims
//   const_fill  constant tensor; attrs = value, dims...
//   expand      broadcast [1] to dims, or [c] to [r,c]; attrs = dims
struct StaticNode {
  std::int64_t id = -1;
  std::string op;
  std::vector<std::int64_t> args;
  std::vector<double> attrs;
  Phase phase = Phase::kForward;
  bool dead = false;  // marked by the rewrite pass, removed by compact()

  // Rewrite bookkeeping, never serialized. `serves` is the node whose
  // differentiation emitted this one; `grad_for` marks gradient-sum nodes.
  std::int64_t serves = -1;
  std::int64_t grad_for = -1;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::int64_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::int64_t line() const { return line_; }

 private:
  std::int64_t line_;
};

// One summand of a node's gradient: `node` holds the values, `emitted_by`
// is the consumer whose differentiation produced it (-1 for the seed). The
// rewrite pass keeps or drops contributions by provenance, not by node
// identity, since a gradient node can survive while its role as a
// contribution does not.
struct Contribution {
  std::int64_t node = -1;
  std::int64_t emitted_by = -1;
};

struct StaticGraph {
  std::vector<StaticNode> nodes;  // id == index
  std::vector<std::int64_t> outputs;
  std::map<std::int64_t, std::int64_t> grad_outputs;  // leaf -> gradient node

  // Populated by build_backward / the rewrite pass; in-memory only.
  std::int64_t loss_node = -1;
  std::map<std::int64_t, std::vector<Contribution>> contribs;
  std::map<std::int64_t, std::int64_t> grad_node;  // node -> folded gradient
  std::set<std::int64_t> rewritten_sources;

  const Registry* registry = nullptr;  // null means the builtin registry

  const Registry& reg() const { return registry != nullptr ? *registry : Registry::builtin(); }

  std::int64_t add(std::string op, std::vector<std::int64_t> args,
                   std::vector<double> attrs = {}, Phase phase = Phase::kForward);

  bool is_pseudo(std::int64_t id) const;
};

// Node identity, outputs and requested gradients; tags are ignored.
bool structurally_equal(const StaticGraph& a, const StaticGraph& b);

// Canonical text form. Sections in fixed order (FORWARD, FORWARD-AD,
// BACKWARD, SAVE-EDGES, OUTPUTS, GRADS), nodes in ascending id, attrs
// printed with 17 significant digits so doubles round-trip exactly. The
// save-edge section is derived (backward nodes referencing earlier-phase
// nodes) and verified against the node list when parsed.
std::string serialize(const StaticGraph& g);
StaticGraph parse_graph(const std::string& text);  // throws ParseError

std::vector<Shape> infer_shapes(const StaticGraph& g);

struct EvalResult {
  std::vector<std::vector<double>> values;  // indexed by node id
  std::vector<Shape> shapes;
};

// Evaluates every node. Works on any id order (nodes are scheduled
// topologically), so graphs that went through surgery interpret fine.
EvalResult interpret(const StaticGraph& g,
                     const std::map<std::int64_t, std::vector<double>>& inputs,
                     kernels::Exec exec = kernels::Exec::kSerial);

// Appends gradient machinery computing d(loss)/d(node) for each node in
// `wrt`, tagging every emitted node for the rewrite pass. The loss must be
// scalar. Leaves without a path to the loss get a zero-filled gradient.
void build_backward(StaticGraph& g, std::int64_t loss, const std::vector<std::int64_t>& wrt);

// Per-element partial of node `id`'s op w.r.t. one input slot, emitted as
// graph nodes. Constant partials are returned as values instead of nodes so
// callers can fold or elide them.
struct PartialVal {
  bool is_const = false;
  double c = 0.0;
  std::int64_t node = -1;
};
PartialVal emit_partial(StaticGraph& g, std::int64_t id, int slot, Phase phase,
                        std::int64_t serves);

}  // namespace nestad
