#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nestad/kernels.hpp"
#include "nestad/ledger.hpp"
#include "nestad/ops.hpp"
#include "nestad/shape.hpp"
#include "nestad/tensor.hpp"

namespace nestad {

// What the backward pass keeps around during the forward pass.
//   kBackprop:  every op retains the tensors its VJP needs.
//   kFad:       single-source element-wise chains carry a forward tangent
//               instead; only the tangent (and the chain source's upstream
//               link) survives to backward.
//   kRecompute: chains retain only their source and are replayed on demand
//               during backward.
enum class Mode { kBackprop, kFad, kRecompute };
const char* to_string(Mode m);
Mode mode_from_string(std::string_view s);

// Detection state for one op application. First letter: does any input
// already carry a forward tangent. Second: is the op itself chain-eligible
// here. NY starts a chain, YY extends one, YN ends one, NN is untouched.
enum class FsmState { kNN, kNY, kYY, kYN };
const char* to_string(FsmState s);

inline FsmState fsm_state(bool any_input_fad, bool op_fad) {
  if (any_input_fad) return op_fad ? FsmState::kYY : FsmState::kYN;
  return op_fad ? FsmState::kNY : FsmState::kNN;
}

struct EngineConfig {
  Mode mode = Mode::kBackprop;
  kernels::Exec exec = kernels::Exec::kSerial;
  // Accounting switch: values still compute in double but every stored
  // tensor is rounded through float and the ledger charges 4 bytes/element.
  bool f32_storage = false;
  bool event_log = false;  // keep a ledger event history
  bool trace = false;      // keep a per-op detection trace
  const Registry* registry = nullptr;  // null means the builtin registry
};

struct EngineStats {
  std::int64_t forward_kernel_count = 0;  // forward dispatches, replays included
  std::int64_t recompute_count = 0;       // kernels run again during backward
  std::int64_t tape_node_count = 0;       // backward nodes recorded
  std::int64_t backward_node_count = 0;   // backward nodes actually executed
  std::int64_t collapsed_node_count = 0;  // chain-end nodes created
};

struct TraceEntry {
  std::int64_t step_id = 0;
  std::string op;
  FsmState state = FsmState::kNN;
  TensorId src_token = kNoTensor;  // chain source, when one is involved
  std::vector<TensorId> input_ids;
  TensorId output_id = kNoTensor;
  TensorId ftr_id = kNoTensor;  // materialized tangent, when one exists
  std::int64_t retained_bytes = 0;
};

// Where a gradient flows once computed for an input slot.
struct GradTarget {
  enum class Kind { kNone, kNode, kLeaf };
  Kind kind = Kind::kNone;
  std::int64_t node = -1;
  TensorId leaf = kNoTensor;

  static GradTarget none() { return {}; }
  static GradTarget to_node(std::int64_t n) { return {Kind::kNode, n, kNoTensor}; }
  static GradTarget to_leaf(TensorId t) { return {Kind::kLeaf, -1, t}; }
};

enum class BackwardKind {
  kVjp,           // run the op's VJP against retained tensors
  kMultiplyFtr,   // multiply incoming grad by a retained tangent
  kRecomputeVjp,  // run the op's VJP against replayed region values
};
const char* to_string(BackwardKind k);

struct TapeNode {
  std::int64_t id = -1;
  const OpDef* op = nullptr;  // null for kMultiplyFtr
  double attr = 0.0;
  BackwardKind kind = BackwardKind::kVjp;
  bool was_fad = false;  // op application was chain-eligible when recorded
  std::vector<Tensor> stn;  // retained tensors; kVjp: slot order = op saves
  std::vector<GradTarget> nxn;  // grad destination per input slot
  std::vector<TensorId> in_ids;
  std::vector<Shape> in_shapes;
  TensorId out_id = kNoTensor;
  Shape out_shape;
  std::int64_t region = -1;  // kRecomputeVjp: replay region index
  std::int64_t step = -1;    // kRecomputeVjp: step within region
  std::vector<double> grad;  // output-grad accumulator, raw workspace
};

// Chain bookkeeping attached to a tensor. A chain member knows its source
// and where the source's own gradient must flow (head). In kFad mode it
// additionally carries either a symbolic seed (NY output: tangent is
// recoverable from the producer op and its saved tensors) or a materialized
// tangent (YY output). In kRecompute mode it references its replay region
// instead.
struct FadMeta {
  bool is_fad = false;
  bool seed = false;  // tangent is symbolic: d_elem of producer, seeded by 1
  Tensor ftr;         // materialized tangent (kFad YY outputs)
  const OpDef* producer_op = nullptr;
  double producer_attr = 0.0;
  std::vector<Tensor> stt;     // producer's saved tensors, slot order = saves
  std::vector<bool> stt_self;  // slot refers to this very tensor (no handle)
  GradTarget head;             // upstream destination of the source's grad
  TensorId source = kNoTensor;
  std::int64_t collapsed_node = -1;  // chain-end node, once created
  std::int64_t region = -1;          // kRecompute: replay region index
  std::int64_t region_step = -1;     // kRecompute: step that makes this tensor
};

struct TensorRecord {
  TensorId id = kNoTensor;
  Shape shape;
  std::vector<double> data;
  Category category = Category::kIntermediate;
  std::string label;
  std::int64_t holders = 0;
  bool live = false;  // storage allocated and not yet released
  GradTarget producer;
  FadMeta fad;
};

// One element-wise op inside a replay region. Args index earlier steps;
// -1 is the region's source tensor.
struct RegionStep {
  const OpDef* op = nullptr;
  double attr = 0.0;
  std::int64_t arg_step[2] = {-1, -1};
  TensorId out_id = kNoTensor;
};

struct Region {
  TensorId source_token = kNoTensor;
  Tensor source;  // keeps the source alive until the region is done
  Shape shape;    // every step shares the source's shape
  std::vector<RegionStep> steps;
  std::vector<std::vector<double>> cache;  // per-step values while replayed
  bool materialized = false;
  std::int64_t pending_nodes = 0;  // backward nodes still needing the cache
};

// End-of-forward attribution of live intermediate storage. A tensor counts
// as activation-retained when backward machinery created by chain-eligible
// ops holds it (retained tensors of chain-eligible nodes, materialized
// tangents, region sources); tensors held only by other ops' retained sets
// count separately. Weights, inputs and gradients are excluded.
struct RetainedSnapshot {
  std::int64_t im_act_bytes = 0;
  std::int64_t im_other_bytes = 0;
  std::vector<TensorId> im_act_ids;    // sorted
  std::vector<TensorId> im_other_ids;  // sorted
};

using Gradients = std::map<TensorId, Tensor>;

class Engine {
 public:
  explicit Engine(EngineConfig cfg = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  Tensor input(const Shape& shape, std::vector<double> data, std::string label = {});
  Tensor weight(const Shape& shape, std::vector<double> data, std::string label = {});

  Tensor apply(std::string_view op, const Tensor& a, double attr = 0.0);
  Tensor apply(std::string_view op, const Tensor& a, const Tensor& b);

  // Runs the tape once, releasing retained tensors as nodes finish. Returns
  // gradients keyed by leaf tensor id. A second call throws.
  Gradients backward(const Tensor& loss);

  // Drops the handle; throws on an empty handle or a released tensor, so a
  // double release is a hard error rather than a silent no-op.
  void release(Tensor& t);

  // Materializes the forward tangent of a chain member (resolves symbolic
  // seeds). Throws for tensors outside a chain.
  std::vector<double> resolve_ftr(const Tensor& t) const;

  const EngineConfig& config() const { return cfg_; }
  const EngineStats& stats() const { return stats_; }
  FootprintLedger& ledger() { return ledger_; }
  const FootprintLedger& ledger() const { return ledger_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

  std::size_t tape_size() const { return tape_.size(); }
  const TapeNode& node(std::size_t i) const { return tape_.at(i); }
  const TensorRecord& record(TensorId id) const;
  std::size_t region_count() const { return regions_.size(); }
  const Region& region(std::size_t i) const { return regions_.at(i); }

  RetainedSnapshot retained_snapshot() const;

  std::int64_t bytes_of(const Shape& s) const {
    return s.numel() * (cfg_.f32_storage ? 4 : 8);
  }

 private:
  friend class Tensor;

  void add_holder(TensorId id);
  void drop_holder(TensorId id);

  TensorRecord& rec(TensorId id);
  const TensorRecord& rec(TensorId id) const;
  Tensor make_handle(TensorId id);
  Tensor make_leaf(const Shape& shape, std::vector<double> data, Category cat,
                   std::string label);
  Tensor alloc_tensor(const Shape& shape, Category cat, std::string label = {});
  void release_data(TensorRecord& r);
  void round_storage(std::span<double> v) const;

  Tensor apply_impl(const OpDef& op, const Tensor* pa, const Tensor* pb, double attr);
  GradTarget grad_target_of(const TensorRecord& r) const;
  std::int64_t push_node(const OpDef* op, double attr, BackwardKind kind,
                         const Tensor* const* ins, int n_in, const Tensor& out,
                         bool was_fad);
  void record_saves(TapeNode& n, const OpDef& op, const Tensor* pa, const Tensor* pb,
                    const Tensor& out);

  // Chain bookkeeping per mode (engine_fad.cpp).
  void fad_start(const OpDef& op, const Tensor* pa, const Tensor* pb, Tensor& out,
                 double attr);
  void fad_extend(const OpDef& op, const Tensor* pa, const Tensor* pb, Tensor& out,
                  double attr);
  std::int64_t ensure_collapsed(const Tensor& t);
  void recompute_step(const OpDef& op, const Tensor* pa, const Tensor* pb, Tensor& out,
                      double attr, bool starts_chain);
  std::vector<double> resolve_seed(const TensorRecord& r) const;
  std::size_t region_for(const Tensor& source);

  // Backward helpers.
  void run_node_backward(TapeNode& n, std::map<TensorId, std::vector<double>>& leaf_acc);
  void route_grad(const GradTarget& t, std::int64_t limit_node, std::vector<double>&& v,
                  std::map<TensorId, std::vector<double>>& leaf_acc);
  void replay_region(Region& rg);
  void free_region_cache(Region& rg);

  EngineConfig cfg_;
  const Registry* reg_ = nullptr;
  FootprintLedger ledger_;
  EngineStats stats_;
  std::vector<std::unique_ptr<TensorRecord>> records_;  // id = index, never erased
  std::vector<TapeNode> tape_;
  std::vector<Region> regions_;
  std::map<TensorId, std::size_t> region_by_source_;
  std::vector<TraceEntry> trace_;
  std::int64_t next_step_ = 0;
  bool backward_ran_ = false;
};

inline const Shape& shape_of(const Tensor& t) { return t.engine()->record(t.id()).shape; }
inline std::span<const double> data_of(const Tensor& t) {
  return t.engine()->record(t.id()).data;
}

}  // namespace nestad
