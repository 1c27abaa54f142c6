#include <stdexcept>

#include "nestad/engine.hpp"

namespace nestad {

// Materializes the symbolic tangent of an NY output: d_elem of the producer
// evaluated from its saved tensors, seeded by the implicit ones vector.
std::vector<double> Engine::resolve_seed(const TensorRecord& r) const {
  const OpDef& op = *r.fad.producer_op;
  std::span<const double> a, b, out;
  for (std::size_t i = 0; i < op.saves.size(); ++i) {
    const std::span<const double> v = r.fad.stt_self[i]
                                          ? std::span<const double>(r.data)
                                          : std::span<const double>(rec(r.fad.stt[i].id()).data);
    switch (op.saves[i]) {
      case SaveSlot::kIn0: a = v; break;
      case SaveSlot::kIn1: b = v; break;
      case SaveSlot::kOut: out = v; break;
    }
  }
  return local_jvp(op, r.shape.numel(), a, b, out, r.fad.producer_attr, {}, {}, cfg_.exec);
}

std::vector<double> Engine::resolve_ftr(const Tensor& t) const {
  const TensorRecord& r = rec(t.id());
  if (!r.fad.is_fad) {
    throw std::logic_error("tensor " + std::to_string(t.id()) + " is not a chain member");
  }
  if (r.fad.ftr.valid()) {
    const std::vector<double>& d = rec(r.fad.ftr.id()).data;
    return std::vector<double>(d.begin(), d.end());
  }
  if (r.fad.seed && r.fad.producer_op != nullptr) return resolve_seed(r);
  throw std::logic_error("no tangent recorded for tensor " + std::to_string(t.id()) +
                         " in mode " + std::string(to_string(cfg_.mode)));
}

void Engine::fad_start(const OpDef& op, const Tensor* pa, const Tensor* pb, Tensor& out,
                       double attr) {
  TensorRecord& ro = rec(out.id());
  const TensorRecord& rsrc = rec(pa->id());  // every tensor input is the source here
  const GradTarget head = grad_target_of(rsrc);
  if (head.kind == GradTarget::Kind::kNone) {
    throw std::logic_error("chain source " + std::to_string(rsrc.id) +
                           " has no gradient destination");
  }
  ro.fad.is_fad = true;
  ro.fad.seed = true;
  ro.fad.producer_op = &op;
  ro.fad.producer_attr = attr;
  ro.fad.source = rsrc.id;
  ro.fad.head = head;
  for (SaveSlot s : op.saves) {
    switch (s) {
      case SaveSlot::kIn0:
        ro.fad.stt.push_back(*pa);
        ro.fad.stt_self.push_back(false);
        break;
      case SaveSlot::kIn1:
        ro.fad.stt.push_back(*pb);
        ro.fad.stt_self.push_back(false);
        break;
      case SaveSlot::kOut:
        // The slot names the output itself; a handle here would keep the
        // tensor alive through its own metadata. Marked instead.
        ro.fad.stt.emplace_back();
        ro.fad.stt_self.push_back(true);
        break;
    }
  }
}

void Engine::fad_extend(const OpDef& op, const Tensor* pa, const Tensor* pb, Tensor& out,
                        double attr) {
  TensorRecord& ro = rec(out.id());
  const Tensor* ins[2] = {pa, pb};
  std::vector<double> t_store[2];
  std::span<const double> t[2];  // empty span = the source itself, tangent 1
  TensorId source = kNoTensor;
  GradTarget head;
  for (int i = 0; i < op.arity; ++i) {
    const TensorRecord& r = rec(ins[i]->id());
    if (!r.fad.is_fad) continue;
    if (r.fad.seed) {
      t_store[i] = resolve_seed(r);
      t[i] = t_store[i];
    } else {
      t[i] = rec(r.fad.ftr.id()).data;
    }
    source = r.fad.source;
    head = r.fad.head;
  }
  const TensorRecord& ra = rec(pa->id());
  const TensorRecord* rb = pb != nullptr ? &rec(pb->id()) : nullptr;

  Tensor ftr = alloc_tensor(ro.shape, Category::kFadDerivative);
  std::vector<double> vals = local_jvp(
      op, ro.shape.numel(), ra.data,
      rb != nullptr ? std::span<const double>(rb->data) : std::span<const double>(), ro.data,
      attr, t[0], t[1], cfg_.exec);
  TensorRecord& rf = rec(ftr.id());
  rf.data = std::move(vals);
  round_storage(rf.data);

  ro.fad.is_fad = true;
  ro.fad.seed = false;
  ro.fad.producer_op = &op;
  ro.fad.producer_attr = attr;
  ro.fad.ftr = std::move(ftr);
  ro.fad.source = source;
  ro.fad.head = head;
}

std::int64_t Engine::ensure_collapsed(const Tensor& t) {
  TensorRecord& r = rec(t.id());
  if (!r.fad.is_fad) {
    throw std::logic_error("collapse of non-chain tensor " + std::to_string(t.id()));
  }
  if (r.fad.collapsed_node >= 0) return r.fad.collapsed_node;
  if (cfg_.mode != Mode::kFad) {
    throw std::logic_error("collapse outside fad mode for tensor " + std::to_string(t.id()));
  }

  TapeNode n;
  n.id = static_cast<std::int64_t>(tape_.size());
  n.was_fad = true;
  n.out_id = r.id;
  n.out_shape = r.shape;
  if (r.fad.seed) {
    // Length-1 chain. The tangent is d_elem of the producer seeded by 1, so
    // multiplying the incoming grad by it is exactly the producer's VJP;
    // degenerate to that VJP and adopt the saved-tensor set unchanged.
    n.op = r.fad.producer_op;
    n.attr = r.fad.producer_attr;
    n.kind = BackwardKind::kVjp;
    for (int i = 0; i < n.op->arity; ++i) {
      n.in_ids.push_back(r.fad.source);
      n.in_shapes.push_back(rec(r.fad.source).shape);
      n.nxn.push_back(r.fad.head);
    }
    for (std::size_t i = 0; i < r.fad.stt.size(); ++i) {
      n.stn.push_back(r.fad.stt_self[i] ? make_handle(r.id) : r.fad.stt[i]);
    }
  } else {
    n.kind = BackwardKind::kMultiplyFtr;
    n.in_ids.push_back(r.fad.source);
    n.in_shapes.push_back(rec(r.fad.source).shape);
    n.nxn.push_back(r.fad.head);
    n.stn.push_back(r.fad.ftr);
  }
  tape_.push_back(std::move(n));
  const std::int64_t idx = tape_.back().id;
  stats_.tape_node_count += 1;
  stats_.collapsed_node_count += 1;
  r.fad.collapsed_node = idx;
  r.producer = GradTarget::to_node(idx);
  ledger_.mark("collapse t" + std::to_string(r.id));
  return idx;
}

std::size_t Engine::region_for(const Tensor& source) {
  auto it = region_by_source_.find(source.id());
  if (it != region_by_source_.end()) return it->second;
  Region rg;
  rg.source_token = source.id();
  rg.source = source;
  rg.shape = rec(source.id()).shape;
  regions_.push_back(std::move(rg));
  region_by_source_.emplace(source.id(), regions_.size() - 1);
  return regions_.size() - 1;
}

void Engine::recompute_step(const OpDef& op, const Tensor* pa, const Tensor* pb, Tensor& out,
                            double attr, bool starts_chain) {
  const Tensor* ins[2] = {pa, pb};
  std::size_t rgi = 0;
  TensorId source = kNoTensor;
  GradTarget head;
  if (starts_chain) {
    const TensorRecord& rsrc = rec(pa->id());
    head = grad_target_of(rsrc);
    if (head.kind == GradTarget::Kind::kNone) {
      throw std::logic_error("chain source " + std::to_string(rsrc.id) +
                             " has no gradient destination");
    }
    source = rsrc.id;
    rgi = region_for(*pa);
  } else {
    for (int i = 0; i < op.arity; ++i) {
      const TensorRecord& r = rec(ins[i]->id());
      if (!r.fad.is_fad) continue;
      source = r.fad.source;
      head = r.fad.head;
      rgi = static_cast<std::size_t>(r.fad.region);
    }
  }
  Region& rg = regions_[rgi];
  RegionStep st;
  st.op = &op;
  st.attr = attr;
  for (int i = 0; i < op.arity; ++i) {
    const TensorRecord& r = rec(ins[i]->id());
    st.arg_step[i] = r.fad.is_fad ? r.fad.region_step : -1;
  }
  st.out_id = out.id();
  const std::int64_t step_idx = static_cast<std::int64_t>(rg.steps.size());
  rg.steps.push_back(st);

  const std::int64_t node_idx =
      push_node(&op, attr, BackwardKind::kRecomputeVjp, ins, op.arity, out, true);
  TapeNode& n = tape_[static_cast<std::size_t>(node_idx)];
  n.region = static_cast<std::int64_t>(rgi);
  n.step = step_idx;
  rg.pending_nodes += 1;

  TensorRecord& ro = rec(out.id());
  ro.fad.is_fad = true;
  ro.fad.seed = false;
  ro.fad.source = source;
  ro.fad.head = head;
  ro.fad.region = static_cast<std::int64_t>(rgi);
  ro.fad.region_step = step_idx;
}

}  // namespace nestad
