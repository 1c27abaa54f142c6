#include "nestad/engine.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace nestad {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::kBackprop: return "backprop";
    case Mode::kFad: return "fad";
    case Mode::kRecompute: return "recompute";
  }
  return "?";
}

Mode mode_from_string(std::string_view s) {
  if (s == "backprop") return Mode::kBackprop;
  if (s == "fad") return Mode::kFad;
  if (s == "recompute") return Mode::kRecompute;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

const char* to_string(FsmState s) {
  switch (s) {
    case FsmState::kNN: return "NN";
    case FsmState::kNY: return "NY";
    case FsmState::kYY: return "YY";
    case FsmState::kYN: return "YN";
  }
  return "?";
}

const char* to_string(BackwardKind k) {
  switch (k) {
    case BackwardKind::kVjp: return "vjp";
    case BackwardKind::kMultiplyFtr: return "multiply-ftr";
    case BackwardKind::kRecomputeVjp: return "recompute-vjp";
  }
  return "?";
}

Engine::Engine(EngineConfig cfg) : cfg_(cfg) {
  reg_ = cfg_.registry != nullptr ? cfg_.registry : &Registry::builtin();
  ledger_.set_logging(cfg_.event_log);
}

Engine::~Engine() {
  // Handles held by nodes, regions and chain metadata point back into this
  // engine; drop them all while the record table is still intact. Records
  // are never erased, so cascaded drops during the sweep are safe.
  for (auto& n : tape_) n.stn.clear();
  for (auto& rg : regions_) rg.source.reset();
  for (auto& r : records_) {
    if (!r) continue;
    Tensor ftr = std::move(r->fad.ftr);
    std::vector<Tensor> stt = std::move(r->fad.stt);
  }
}

// ---- tensor lifecycle -----------------------------------------------------

TensorRecord& Engine::rec(TensorId id) {
  if (id < 0 || id >= static_cast<TensorId>(records_.size())) {
    throw std::invalid_argument("unknown tensor id " + std::to_string(id));
  }
  return *records_[static_cast<std::size_t>(id)];
}

const TensorRecord& Engine::rec(TensorId id) const {
  return const_cast<Engine*>(this)->rec(id);
}

const TensorRecord& Engine::record(TensorId id) const { return rec(id); }

Tensor Engine::make_handle(TensorId id) {
  rec(id).holders += 1;
  return Tensor(this, id);
}

void Engine::add_holder(TensorId id) { rec(id).holders += 1; }

void Engine::drop_holder(TensorId id) {
  TensorRecord& r = rec(id);
  if (r.holders <= 0) throw std::logic_error("holder count underflow on tensor " + std::to_string(id));
  r.holders -= 1;
  if (r.holders == 0 && r.live) release_data(r);
}

void Engine::release_data(TensorRecord& r) {
  r.live = false;
  ledger_.on_release(r.id, r.category, bytes_of(r.shape));
  r.data.clear();
  r.data.shrink_to_fit();
  // Drop chain metadata handles after the record is marked dead; the moved
  // locals cascade further releases on destruction.
  Tensor ftr = std::move(r.fad.ftr);
  std::vector<Tensor> stt = std::move(r.fad.stt);
  r.fad.stt_self.clear();
}

void Engine::release(Tensor& t) {
  if (!t.valid()) throw std::logic_error("release of an empty tensor handle");
  if (t.engine() != this) throw std::logic_error("release of a foreign tensor handle");
  if (!rec(t.id()).live) {
    throw std::logic_error("double release of tensor " + std::to_string(t.id()));
  }
  t.reset();
}

Tensor Engine::make_leaf(const Shape& shape, std::vector<double> data, Category cat,
                         std::string label) {
  if (static_cast<std::int64_t>(data.size()) != shape.numel()) {
    throw std::invalid_argument("leaf: data size " + std::to_string(data.size()) +
                                " does not match shape " + shape.to_string());
  }
  Tensor t = alloc_tensor(shape, cat, std::move(label));
  TensorRecord& r = rec(t.id());
  r.data = std::move(data);
  round_storage(r.data);
  r.producer = GradTarget::to_leaf(t.id());
  return t;
}

Tensor Engine::input(const Shape& shape, std::vector<double> data, std::string label) {
  return make_leaf(shape, std::move(data), Category::kInput, std::move(label));
}

Tensor Engine::weight(const Shape& shape, std::vector<double> data, std::string label) {
  return make_leaf(shape, std::move(data), Category::kWeight, std::move(label));
}

Tensor Engine::alloc_tensor(const Shape& shape, Category cat, std::string label) {
  auto rp = std::make_unique<TensorRecord>();
  TensorRecord& r = *rp;
  r.id = static_cast<TensorId>(records_.size());
  r.shape = shape;
  r.data.assign(static_cast<std::size_t>(shape.numel()), 0.0);
  r.category = cat;
  r.label = std::move(label);
  r.live = true;
  records_.push_back(std::move(rp));
  ledger_.on_alloc(r.id, cat, bytes_of(shape));
  return make_handle(r.id);
}

void Engine::round_storage(std::span<double> v) const {
  if (!cfg_.f32_storage) return;
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

// ---- forward --------------------------------------------------------------

Tensor Engine::apply(std::string_view op, const Tensor& a, double attr) {
  const OpDef& def = reg_->at(op);
  if (def.arity != 1) {
    throw std::invalid_argument("op '" + def.name + "' takes 2 tensors, got 1");
  }
  return apply_impl(def, &a, nullptr, attr);
}

Tensor Engine::apply(std::string_view op, const Tensor& a, const Tensor& b) {
  const OpDef& def = reg_->at(op);
  if (def.arity != 2) {
    throw std::invalid_argument("op '" + def.name + "' takes 1 tensor, got 2");
  }
  return apply_impl(def, &a, &b, 0.0);
}

GradTarget Engine::grad_target_of(const TensorRecord& r) const {
  return r.producer;
}

std::int64_t Engine::push_node(const OpDef* op, double attr, BackwardKind kind,
                               const Tensor* const* ins, int n_in, const Tensor& out,
                               bool was_fad) {
  TapeNode n;
  n.id = static_cast<std::int64_t>(tape_.size());
  n.op = op;
  n.attr = attr;
  n.kind = kind;
  n.was_fad = was_fad;
  n.out_id = out.id();
  n.out_shape = rec(out.id()).shape;
  for (int i = 0; i < n_in; ++i) {
    const TensorRecord& r = rec(ins[i]->id());
    n.in_ids.push_back(r.id);
    n.in_shapes.push_back(r.shape);
    n.nxn.push_back(grad_target_of(r));
  }
  tape_.push_back(std::move(n));
  stats_.tape_node_count += 1;
  rec(out.id()).producer = GradTarget::to_node(tape_.back().id);
  return tape_.back().id;
}

void Engine::record_saves(TapeNode& n, const OpDef& op, const Tensor* pa, const Tensor* pb,
                          const Tensor& out) {
  for (SaveSlot s : op.saves) {
    switch (s) {
      case SaveSlot::kIn0: n.stn.push_back(*pa); break;
      case SaveSlot::kIn1: n.stn.push_back(*pb); break;
      case SaveSlot::kOut: n.stn.push_back(out); break;
    }
  }
}

Tensor Engine::apply_impl(const OpDef& op, const Tensor* pa, const Tensor* pb, double attr) {
  for (const Tensor* p : {pa, pb}) {
    if (p == nullptr) continue;
    if (!p->valid() || p->engine() != this) {
      throw std::invalid_argument("op '" + op.name + "': invalid input handle");
    }
    if (!rec(p->id()).live) {
      throw std::logic_error("op '" + op.name + "': input tensor " + std::to_string(p->id()) +
                             " was released");
    }
  }
  const TensorRecord& ra = rec(pa->id());
  const TensorRecord* rb = pb != nullptr ? &rec(pb->id()) : nullptr;
  const Shape out_shape = op.infer(ra.shape, rb != nullptr ? &rb->shape : nullptr, attr);

  Tensor out = alloc_tensor(out_shape, Category::kIntermediate);
  TensorRecord& ro = rec(out.id());
  ForwardCtx fc;
  fc.a = ra.data;
  fc.b = rb != nullptr ? std::span<const double>(rb->data) : std::span<const double>();
  fc.a_shape = &ra.shape;
  fc.b_shape = rb != nullptr ? &rb->shape : nullptr;
  fc.attr = attr;
  fc.out = ro.data;
  fc.out_shape = &ro.shape;
  fc.exec = cfg_.exec;
  op.forward(fc);
  round_storage(ro.data);
  stats_.forward_kernel_count += 1;

  // Detection runs in every mode so traces and attribution are comparable;
  // only the bookkeeping below differs.
  InputMeta metas[2];
  const int n_in = op.arity;
  const Tensor* ins[2] = {pa, pb};
  bool any_fad = false;
  for (int i = 0; i < n_in; ++i) {
    const TensorRecord& r = rec(ins[i]->id());
    metas[i].is_fad = r.fad.is_fad;
    metas[i].token = r.fad.is_fad ? r.fad.source : r.id;
    any_fad = any_fad || r.fad.is_fad;
  }
  const FadClassification cls = classify(op, std::span<const InputMeta>(metas, n_in));
  const FsmState state = fsm_state(any_fad, cls.fad);

  switch (cfg_.mode) {
    case Mode::kBackprop: {
      const std::int64_t idx = push_node(&op, attr, BackwardKind::kVjp, ins, n_in, out, cls.fad);
      record_saves(tape_[static_cast<std::size_t>(idx)], op, pa, pb, out);
      if (cls.fad) {
        // Chain membership still propagates so downstream detection matches
        // the other modes; storage behaves as plain backprop.
        ro.fad.is_fad = true;
        ro.fad.seed = state == FsmState::kNY;
        ro.fad.source = metas[0].token;
        for (int i = 0; i < n_in; ++i) {
          if (metas[i].is_fad) ro.fad.source = metas[i].token;
        }
      }
      break;
    }
    case Mode::kFad: {
      switch (state) {
        case FsmState::kNN: {
          const std::int64_t idx = push_node(&op, attr, BackwardKind::kVjp, ins, n_in, out, false);
          record_saves(tape_[static_cast<std::size_t>(idx)], op, pa, pb, out);
          break;
        }
        case FsmState::kNY:
          fad_start(op, pa, pb, out, attr);
          break;
        case FsmState::kYY:
          fad_extend(op, pa, pb, out, attr);
          break;
        case FsmState::kYN: {
          for (int i = 0; i < n_in; ++i) {
            if (rec(ins[i]->id()).fad.is_fad) ensure_collapsed(*ins[i]);
          }
          const std::int64_t idx = push_node(&op, attr, BackwardKind::kVjp, ins, n_in, out, false);
          record_saves(tape_[static_cast<std::size_t>(idx)], op, pa, pb, out);
          break;
        }
      }
      break;
    }
    case Mode::kRecompute: {
      switch (state) {
        case FsmState::kNN:
        case FsmState::kYN: {
          const std::int64_t idx = push_node(&op, attr, BackwardKind::kVjp, ins, n_in, out, false);
          record_saves(tape_[static_cast<std::size_t>(idx)], op, pa, pb, out);
          break;
        }
        case FsmState::kNY:
          recompute_step(op, pa, pb, out, attr, /*starts_chain=*/true);
          break;
        case FsmState::kYY:
          recompute_step(op, pa, pb, out, attr, /*starts_chain=*/false);
          break;
      }
      break;
    }
  }

  if (cfg_.trace) {
    TraceEntry e;
    e.step_id = next_step_;
    e.op = op.name;
    e.state = state;
    if (state == FsmState::kNY) {
      e.src_token = metas[0].token;
    } else if (state != FsmState::kNN) {
      for (int i = 0; i < n_in; ++i) {
        if (metas[i].is_fad) {
          e.src_token = metas[i].token;
          break;
        }
      }
    }
    for (int i = 0; i < n_in; ++i) e.input_ids.push_back(ins[i]->id());
    e.output_id = out.id();
    if (ro.fad.ftr.valid()) e.ftr_id = ro.fad.ftr.id();
    e.retained_bytes = ledger_.live_retained();
    trace_.push_back(std::move(e));
  }
  next_step_ += 1;
  return out;
}

// ---- backward -------------------------------------------------------------

void Engine::route_grad(const GradTarget& t, std::int64_t limit_node, std::vector<double>&& v,
                        std::map<TensorId, std::vector<double>>& leaf_acc) {
  switch (t.kind) {
    case GradTarget::Kind::kNone:
      return;
    case GradTarget::Kind::kLeaf: {
      auto [it, fresh] = leaf_acc.try_emplace(t.leaf, std::move(v));
      if (!fresh) {
        std::vector<double>& acc = it->second;
        if (acc.size() != v.size()) throw std::logic_error("leaf grad size mismatch");
        for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
      }
      return;
    }
    case GradTarget::Kind::kNode: {
      if (t.node >= limit_node) {
        throw std::logic_error("grad routed forward in the tape; node order broken");
      }
      TapeNode& dst = tape_[static_cast<std::size_t>(t.node)];
      if (dst.grad.empty()) {
        if (static_cast<std::int64_t>(v.size()) != dst.out_shape.numel()) {
          throw std::logic_error("grad size mismatch for node " + std::to_string(t.node));
        }
        dst.grad = std::move(v);
      } else {
        for (std::size_t i = 0; i < v.size(); ++i) dst.grad[i] += v[i];
      }
      return;
    }
  }
}

void Engine::run_node_backward(TapeNode& n,
                               std::map<TensorId, std::vector<double>>& leaf_acc) {
  switch (n.kind) {
    case BackwardKind::kVjp: {
      std::vector<std::span<const double>> saved;
      saved.reserve(n.stn.size());
      for (const Tensor& h : n.stn) saved.emplace_back(rec(h.id()).data);
      std::vector<double> g0, g1;
      if (!n.nxn.empty() && n.nxn[0].kind != GradTarget::Kind::kNone) {
        g0.assign(static_cast<std::size_t>(n.in_shapes[0].numel()), 0.0);
      }
      if (n.nxn.size() > 1 && n.nxn[1].kind != GradTarget::Kind::kNone) {
        g1.assign(static_cast<std::size_t>(n.in_shapes[1].numel()), 0.0);
      }
      local_vjp(*n.op, saved, n.in_shapes[0],
                n.in_shapes.size() > 1 ? &n.in_shapes[1] : nullptr, n.out_shape, n.attr,
                n.grad, g0, g1, cfg_.exec);
      if (!g0.empty()) route_grad(n.nxn[0], n.id, std::move(g0), leaf_acc);
      if (!g1.empty()) route_grad(n.nxn[1], n.id, std::move(g1), leaf_acc);
      return;
    }
    case BackwardKind::kMultiplyFtr: {
      const std::vector<double>& ftr = rec(n.stn.at(0).id()).data;
      std::vector<double> g(n.grad.size());
      kernels::zip(cfg_.exec, n.grad, ftr, g, [](double x, double y) { return x * y; });
      route_grad(n.nxn.at(0), n.id, std::move(g), leaf_acc);
      return;
    }
    case BackwardKind::kRecomputeVjp: {
      Region& rg = regions_.at(static_cast<std::size_t>(n.region));
      if (!rg.materialized) replay_region(rg);
      const RegionStep& st = rg.steps.at(static_cast<std::size_t>(n.step));
      auto arg_values = [&](std::int64_t which) -> std::span<const double> {
        return which < 0 ? std::span<const double>(rec(rg.source.id()).data)
                         : std::span<const double>(rg.cache[static_cast<std::size_t>(which)]);
      };
      std::vector<std::span<const double>> saved;
      saved.reserve(n.op->saves.size());
      for (SaveSlot s : n.op->saves) {
        switch (s) {
          case SaveSlot::kIn0: saved.push_back(arg_values(st.arg_step[0])); break;
          case SaveSlot::kIn1: saved.push_back(arg_values(st.arg_step[1])); break;
          case SaveSlot::kOut:
            saved.emplace_back(rg.cache[static_cast<std::size_t>(n.step)]);
            break;
        }
      }
      std::vector<double> g0, g1;
      if (!n.nxn.empty() && n.nxn[0].kind != GradTarget::Kind::kNone) {
        g0.assign(static_cast<std::size_t>(n.in_shapes[0].numel()), 0.0);
      }
      if (n.nxn.size() > 1 && n.nxn[1].kind != GradTarget::Kind::kNone) {
        g1.assign(static_cast<std::size_t>(n.in_shapes[1].numel()), 0.0);
      }
      local_vjp(*n.op, saved, n.in_shapes[0],
                n.in_shapes.size() > 1 ? &n.in_shapes[1] : nullptr, n.out_shape, n.attr,
                n.grad, g0, g1, cfg_.exec);
      if (!g0.empty()) route_grad(n.nxn[0], n.id, std::move(g0), leaf_acc);
      if (!g1.empty()) route_grad(n.nxn[1], n.id, std::move(g1), leaf_acc);
      rg.pending_nodes -= 1;
      if (rg.pending_nodes == 0) free_region_cache(rg);
      return;
    }
  }
}

void Engine::replay_region(Region& rg) {
  rg.cache.resize(rg.steps.size());
  const std::int64_t n = rg.shape.numel();
  for (std::size_t s = 0; s < rg.steps.size(); ++s) {
    const RegionStep& st = rg.steps[s];
    rg.cache[s].assign(static_cast<std::size_t>(n), 0.0);
    auto arg_values = [&](std::int64_t which) -> std::span<const double> {
      return which < 0 ? std::span<const double>(rec(rg.source.id()).data)
                       : std::span<const double>(rg.cache[static_cast<std::size_t>(which)]);
    };
    ForwardCtx fc;
    fc.a = arg_values(st.arg_step[0]);
    fc.a_shape = &rg.shape;
    if (st.op->arity == 2) {
      fc.b = arg_values(st.arg_step[1]);
      fc.b_shape = &rg.shape;
    }
    fc.attr = st.attr;
    fc.out = rg.cache[s];
    fc.out_shape = &rg.shape;
    fc.exec = cfg_.exec;
    st.op->forward(fc);
    round_storage(rg.cache[s]);
    stats_.forward_kernel_count += 1;
    stats_.recompute_count += 1;
    ledger_.on_alloc(st.out_id, Category::kIntermediate, bytes_of(rg.shape));
  }
  rg.materialized = true;
}

void Engine::free_region_cache(Region& rg) {
  for (std::size_t s = 0; s < rg.steps.size(); ++s) {
    ledger_.on_release(rg.steps[s].out_id, Category::kIntermediate, bytes_of(rg.shape));
    rg.cache[s].clear();
    rg.cache[s].shrink_to_fit();
  }
  rg.cache.clear();
  rg.materialized = false;
  rg.source.reset();
}

Gradients Engine::backward(const Tensor& loss) {
  if (!loss.valid() || loss.engine() != this) {
    throw std::invalid_argument("backward: invalid loss handle");
  }
  if (backward_ran_) throw std::logic_error("backward: already ran on this engine");
  TensorRecord& lr = rec(loss.id());
  if (lr.shape.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + lr.shape.to_string());
  }
  backward_ran_ = true;

  // A loss that is still a chain member gets its chain ended here, exactly
  // as if a consumer had forced it.
  if (lr.fad.is_fad && cfg_.mode == Mode::kFad && lr.fad.collapsed_node < 0) {
    ensure_collapsed(loss);
  }
  if (lr.fad.is_fad && cfg_.trace) {
    TraceEntry e;
    e.step_id = next_step_;
    e.op = "backward_seed";
    e.state = FsmState::kYN;
    e.src_token = lr.fad.source;
    e.input_ids.push_back(loss.id());
    e.retained_bytes = ledger_.live_retained();
    trace_.push_back(std::move(e));
    next_step_ += 1;
  }

  std::map<TensorId, std::vector<double>> leaf_acc;
  switch (lr.producer.kind) {
    case GradTarget::Kind::kLeaf:
      leaf_acc[loss.id()] = {1.0};
      break;
    case GradTarget::Kind::kNode:
      tape_[static_cast<std::size_t>(lr.producer.node)].grad = {1.0};
      break;
    case GradTarget::Kind::kNone:
      throw std::logic_error("backward: loss has no recorded producer");
  }

  for (std::size_t i = tape_.size(); i-- > 0;) {
    TapeNode& n = tape_[i];
    if (!n.grad.empty()) {
      stats_.backward_node_count += 1;
      run_node_backward(n, leaf_acc);
    }
    n.stn.clear();
    n.grad.clear();
    n.grad.shrink_to_fit();
  }

  Gradients out;
  for (auto& [id, v] : leaf_acc) {
    Tensor g = alloc_tensor(rec(id).shape, Category::kGradient);
    TensorRecord& gr = rec(g.id());
    if (v.size() != gr.data.size()) throw std::logic_error("gradient size mismatch");
    gr.data = std::move(v);
    round_storage(gr.data);
    out.emplace(id, std::move(g));
  }
  return out;
}

// ---- attribution ----------------------------------------------------------

RetainedSnapshot Engine::retained_snapshot() const {
  std::set<TensorId> act, other;
  auto eligible = [&](TensorId id) {
    const Category c = rec(id).category;
    return rec(id).live &&
           (c == Category::kIntermediate || c == Category::kFadDerivative);
  };
  for (const TapeNode& n : tape_) {
    const bool chain = n.was_fad || n.kind == BackwardKind::kMultiplyFtr;
    for (const Tensor& h : n.stn) {
      if (!eligible(h.id())) continue;
      (chain ? act : other).insert(h.id());
    }
  }
  for (const Region& rg : regions_) {
    if (rg.source.valid() && eligible(rg.source.id())) act.insert(rg.source.id());
  }
  RetainedSnapshot snap;
  for (TensorId id : act) {
    snap.im_act_ids.push_back(id);
    snap.im_act_bytes += bytes_of(rec(id).shape);
  }
  for (TensorId id : other) {
    if (act.count(id)) continue;  // activation attribution wins
    snap.im_other_ids.push_back(id);
    snap.im_other_bytes += bytes_of(rec(id).shape);
  }
  return snap;
}

}  // namespace nestad
