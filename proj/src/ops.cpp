#include "nestad/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace nestad {
namespace {

template <class F>
void for_each_index(kernels::Exec exec, std::int64_t n, F f) {
  const bool par = exec == kernels::Exec::kParallel && n >= kernels::kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < n; ++i) f(i);
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// ---- shape inference ----------------------------------------------------

Shape infer_same(const Shape& a, const Shape* b, double) {
  if (b != nullptr && a != *b) {
    throw std::invalid_argument("elementwise op: shape mismatch " + a.to_string() + " vs " +
                                b->to_string());
  }
  return a;
}

Shape infer_matmul(const Shape& a, const Shape* b, double) {
  if (b == nullptr || a.rank() != 2 || b->rank() != 2 || a.dim(1) != b->dim(0)) {
    throw std::invalid_argument("matmul: needs [m,k] x [k,n], got " + a.to_string() +
                                (b ? " x " + b->to_string() : ""));
  }
  return Shape{a.dim(0), b->dim(1)};
}

Shape infer_bias_add(const Shape& a, const Shape* b, double) {
  if (b == nullptr || a.rank() != 2 || b->rank() != 1 || b->dim(0) != a.dim(1)) {
    throw std::invalid_argument("bias_add: needs [m,n] + [n], got " + a.to_string() +
                                (b ? " + " + b->to_string() : ""));
  }
  return a;
}

Shape infer_scalar(const Shape&, const Shape*, double) { return Shape{1}; }

Shape infer_mse(const Shape& a, const Shape* b, double) {
  if (b == nullptr || a != *b) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  return Shape{1};
}

Shape infer_transpose(const Shape& a, const Shape*, double) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: needs rank 2, got " + a.to_string());
  return Shape{a.dim(1), a.dim(0)};
}

Shape infer_col_sum(const Shape& a, const Shape*, double) {
  if (a.rank() != 2) throw std::invalid_argument("col_sum: needs rank 2, got " + a.to_string());
  return Shape{a.dim(1)};
}

// ---- forward kernels ----------------------------------------------------

void fw_add(const ForwardCtx& c) {
  kernels::zip(c.exec, c.a, c.b, c.out, [](double x, double y) { return x + y; });
}
void fw_sub(const ForwardCtx& c) {
  kernels::zip(c.exec, c.a, c.b, c.out, [](double x, double y) { return x - y; });
}
void fw_mul(const ForwardCtx& c) {
  kernels::zip(c.exec, c.a, c.b, c.out, [](double x, double y) { return x * y; });
}
void fw_div(const ForwardCtx& c) {
  kernels::zip(c.exec, c.a, c.b, c.out, [](double x, double y) { return x / y; });
}
void fw_exp(const ForwardCtx& c) {
  kernels::map(c.exec, c.a, c.out, [](double x) { return std::exp(x); });
}
void fw_tanh(const ForwardCtx& c) {
  kernels::map(c.exec, c.a, c.out, [](double x) { return std::tanh(x); });
}
void fw_sigmoid(const ForwardCtx& c) { kernels::map(c.exec, c.a, c.out, sigmoid_scalar); }
void fw_softplus(const ForwardCtx& c) { kernels::map(c.exec, c.a, c.out, softplus_scalar); }
void fw_neg(const ForwardCtx& c) {
  kernels::map(c.exec, c.a, c.out, [](double x) { return -x; });
}
void fw_relu(const ForwardCtx& c) {
  kernels::map(c.exec, c.a, c.out, [](double x) { return x > 0.0 ? x : 0.0; });
}
void fw_heaviside(const ForwardCtx& c) {
  kernels::map(c.exec, c.a, c.out, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}
void fw_const_add(const ForwardCtx& c) {
  const double k = c.attr;
  for_each_index(c.exec, static_cast<std::int64_t>(c.a.size()),
                 [&](std::int64_t i) { c.out[i] = c.a[i] + k; });
}
void fw_const_mul(const ForwardCtx& c) {
  const double k = c.attr;
  for_each_index(c.exec, static_cast<std::int64_t>(c.a.size()),
                 [&](std::int64_t i) { c.out[i] = c.a[i] * k; });
}
void fw_pow_const(const ForwardCtx& c) {
  const double p = c.attr;
  for_each_index(c.exec, static_cast<std::int64_t>(c.a.size()),
                 [&](std::int64_t i) { c.out[i] = std::pow(c.a[i], p); });
}
void fw_matmul(const ForwardCtx& c) {
  kernels::matmul(c.exec, c.a, c.b, c.out, c.a_shape->dim(0), c.a_shape->dim(1),
                  c.b_shape->dim(1));
}
void fw_bias_add(const ForwardCtx& c) {
  kernels::bias_add(c.exec, c.a, c.b, c.out, c.a_shape->dim(0), c.a_shape->dim(1));
}
void fw_reduce_sum(const ForwardCtx& c) { c.out[0] = kernels::reduce_sum(c.exec, c.a); }
void fw_mse_loss(const ForwardCtx& c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < c.a.size(); ++i) {
    const double d = c.a[i] - c.b[i];
    acc += d * d;
  }
  c.out[0] = acc / static_cast<double>(c.a.size());
}
void fw_transpose(const ForwardCtx& c) {
  kernels::transpose(c.exec, c.a, c.out, c.a_shape->dim(0), c.a_shape->dim(1));
}
void fw_col_sum(const ForwardCtx& c) {
  kernels::col_sum(c.exec, c.a, c.out, c.a_shape->dim(0), c.a_shape->dim(1));
}

// ---- per-element partials -----------------------------------------------
// Each function may read only the fields its op declares in `saves` (plus
// attr); the output-based ones (exp, tanh, sigmoid, softplus, relu) need no
// input values at all, which is what keeps their backward saves to one
// tensor.

double d_one(double, double, double, double) { return 1.0; }
double d_neg_one(double, double, double, double) { return -1.0; }
double d_zero(double, double, double, double) { return 0.0; }
double d_mul0(double, double b, double, double) { return b; }
double d_mul1(double a, double, double, double) { return a; }
double d_div0(double, double b, double, double) { return 1.0 / b; }
double d_div1(double, double b, double out, double) { return -out / b; }
double d_exp(double, double, double out, double) { return out; }
double d_tanh(double, double, double out, double) { return 1.0 - out * out; }
double d_sigmoid(double, double, double out, double) { return out * (1.0 - out); }
double d_softplus(double, double, double out, double) { return 1.0 - std::exp(-out); }
double d_relu(double, double, double out, double) { return out > 0.0 ? 1.0 : 0.0; }
double d_const_mul(double, double, double, double attr) { return attr; }
double d_pow_const(double a, double, double, double attr) {
  // exponent 0 is a constant; returning attr * pow(a, -1) would make 0 * inf
  // at a == 0
  if (attr == 0.0) return 0.0;
  return attr * std::pow(a, attr - 1.0);
}

// ---- backward kernels ---------------------------------------------------

std::span<const double> saved_slot(const VjpCtx& c, SaveSlot s) {
  const auto& saves = c.op->saves;
  for (std::size_t i = 0; i < saves.size(); ++i) {
    if (saves[i] == s) return c.saved[i];
  }
  return {};
}

// grad_in = g (*) d_elem, per input slot. Works for every fad op.
void vjp_elementwise(const VjpCtx& c) {
  const std::span<const double> a = saved_slot(c, SaveSlot::kIn0);
  const std::span<const double> b = saved_slot(c, SaveSlot::kIn1);
  const std::span<const double> out = saved_slot(c, SaveSlot::kOut);
  const std::int64_t n = static_cast<std::int64_t>(c.g.size());
  const DElemFn d0 = c.op->d0;
  const DElemFn d1 = c.op->d1;
  if (!c.grad_in0.empty()) {
    for_each_index(c.exec, n, [&](std::int64_t i) {
      c.grad_in0[i] = c.g[i] * d0(a.empty() ? 0.0 : a[i], b.empty() ? 0.0 : b[i],
                                  out.empty() ? 0.0 : out[i], c.attr);
    });
  }
  if (!c.grad_in1.empty() && d1 != nullptr) {
    for_each_index(c.exec, n, [&](std::int64_t i) {
      c.grad_in1[i] = c.g[i] * d1(a.empty() ? 0.0 : a[i], b.empty() ? 0.0 : b[i],
                                  out.empty() ? 0.0 : out[i], c.attr);
    });
  }
}

void vjp_matmul(const VjpCtx& c) {
  const std::int64_t m = c.in_shape[0]->dim(0);
  const std::int64_t k = c.in_shape[0]->dim(1);
  const std::int64_t n = c.in_shape[1]->dim(1);
  const std::span<const double> a = c.saved[0];
  const std::span<const double> b = c.saved[1];
  if (!c.grad_in0.empty()) {
    // dA = G * B^T
    std::vector<double> bt(static_cast<std::size_t>(n * k));
    kernels::transpose(c.exec, b, bt, k, n);
    kernels::matmul(c.exec, c.g, bt, c.grad_in0, m, n, k);
  }
  if (!c.grad_in1.empty()) {
    // dB = A^T * G
    std::vector<double> at(static_cast<std::size_t>(k * m));
    kernels::transpose(c.exec, a, at, m, k);
    kernels::matmul(c.exec, at, c.g, c.grad_in1, k, m, n);
  }
}

void vjp_bias_add(const VjpCtx& c) {
  const std::int64_t rows = c.in_shape[0]->dim(0);
  const std::int64_t cols = c.in_shape[0]->dim(1);
  if (!c.grad_in0.empty()) {
    for_each_index(c.exec, rows * cols, [&](std::int64_t i) { c.grad_in0[i] = c.g[i]; });
  }
  if (!c.grad_in1.empty()) kernels::col_sum(c.exec, c.g, c.grad_in1, rows, cols);
}

void vjp_reduce_sum(const VjpCtx& c) {
  if (c.grad_in0.empty()) return;
  const double g0 = c.g[0];
  for_each_index(c.exec, static_cast<std::int64_t>(c.grad_in0.size()),
                 [&](std::int64_t i) { c.grad_in0[i] = g0; });
}

void vjp_mse_loss(const VjpCtx& c) {
  const std::span<const double> p = c.saved[0];
  const std::span<const double> t = c.saved[1];
  const double scale = 2.0 * c.g[0] / static_cast<double>(p.size());
  const std::int64_t n = static_cast<std::int64_t>(p.size());
  if (!c.grad_in0.empty()) {
    for_each_index(c.exec, n, [&](std::int64_t i) { c.grad_in0[i] = scale * (p[i] - t[i]); });
  }
  if (!c.grad_in1.empty()) {
    for_each_index(c.exec, n, [&](std::int64_t i) { c.grad_in1[i] = -scale * (p[i] - t[i]); });
  }
}

void vjp_transpose(const VjpCtx& c) {
  if (c.grad_in0.empty()) return;
  // g has the output's [n,m] layout; transposing it back gives [m,n].
  kernels::transpose(c.exec, c.g, c.grad_in0, c.in_shape[0]->dim(1), c.in_shape[0]->dim(0));
}

void vjp_col_sum(const VjpCtx& c) {
  if (c.grad_in0.empty()) return;
  const std::int64_t rows = c.in_shape[0]->dim(0);
  const std::int64_t cols = c.in_shape[0]->dim(1);
  for_each_index(c.exec, rows * cols,
                 [&](std::int64_t i) { c.grad_in0[i] = c.g[i % cols]; });
}

OpDef unary_fad(std::string name, void (*fw)(const ForwardCtx&), DElemFn d0,
                std::vector<SaveSlot> saves, bool takes_attr = false) {
  OpDef def;
  def.name = std::move(name);
  def.arity = 1;
  def.fad_class = FadClass::kFadUnary;
  def.takes_attr = takes_attr;
  def.saves = std::move(saves);
  def.infer = infer_same;
  def.forward = fw;
  def.d0 = d0;
  def.vjp = vjp_elementwise;
  return def;
}

OpDef binary_fad(std::string name, void (*fw)(const ForwardCtx&), DElemFn d0, DElemFn d1,
                 std::vector<SaveSlot> saves) {
  OpDef def;
  def.name = std::move(name);
  def.arity = 2;
  def.fad_class = FadClass::kFadBinary;
  def.saves = std::move(saves);
  def.infer = infer_same;
  def.forward = fw;
  def.d0 = d0;
  def.d1 = d1;
  def.vjp = vjp_elementwise;
  return def;
}

OpDef nfad(std::string name, int arity, Shape (*infer)(const Shape&, const Shape*, double),
           void (*fw)(const ForwardCtx&), void (*vjp)(const VjpCtx&),
           std::vector<SaveSlot> saves) {
  OpDef def;
  def.name = std::move(name);
  def.arity = arity;
  def.fad_class = FadClass::kNfad;
  def.saves = std::move(saves);
  def.infer = infer;
  def.forward = fw;
  def.vjp = vjp;
  return def;
}

Registry make_builtin() {
  Registry r;
  r.register_op(binary_fad("add", fw_add, d_one, d_one, {}));
  r.register_op(binary_fad("sub", fw_sub, d_one, d_neg_one, {}));
  r.register_op(binary_fad("mul", fw_mul, d_mul0, d_mul1, {SaveSlot::kIn0, SaveSlot::kIn1}));
  r.register_op(binary_fad("div", fw_div, d_div0, d_div1, {SaveSlot::kIn1, SaveSlot::kOut}));
  r.register_op(unary_fad("exp", fw_exp, d_exp, {SaveSlot::kOut}));
  r.register_op(unary_fad("tanh", fw_tanh, d_tanh, {SaveSlot::kOut}));
  r.register_op(unary_fad("sigmoid", fw_sigmoid, d_sigmoid, {SaveSlot::kOut}));
  r.register_op(unary_fad("softplus", fw_softplus, d_softplus, {SaveSlot::kOut}));
  r.register_op(unary_fad("neg", fw_neg, d_neg_one, {}));
  r.register_op(unary_fad("relu", fw_relu, d_relu, {SaveSlot::kOut}));
  r.register_op(unary_fad("heaviside", fw_heaviside, d_zero, {}));
  r.register_op(unary_fad("const_add", fw_const_add, d_one, {}, /*takes_attr=*/true));
  r.register_op(unary_fad("const_mul", fw_const_mul, d_const_mul, {}, /*takes_attr=*/true));
  r.register_op(
      unary_fad("pow_const", fw_pow_const, d_pow_const, {SaveSlot::kIn0}, /*takes_attr=*/true));
  r.register_op(nfad("matmul", 2, infer_matmul, fw_matmul, vjp_matmul,
                     {SaveSlot::kIn0, SaveSlot::kIn1}));
  r.register_op(nfad("bias_add", 2, infer_bias_add, fw_bias_add, vjp_bias_add, {}));
  r.register_op(nfad("reduce_sum", 1, infer_scalar, fw_reduce_sum, vjp_reduce_sum, {}));
  r.register_op(
      nfad("mse_loss", 2, infer_mse, fw_mse_loss, vjp_mse_loss, {SaveSlot::kIn0, SaveSlot::kIn1}));
  r.register_op(nfad("transpose", 1, infer_transpose, fw_transpose, vjp_transpose, {}));
  r.register_op(nfad("col_sum", 1, infer_col_sum, fw_col_sum, vjp_col_sum, {}));
  return r;
}

}  // namespace

void Registry::register_op(OpDef def) {
  if (def.name.empty()) throw std::invalid_argument("registry: op name must not be empty");
  auto [it, inserted] = ops_.emplace(def.name, std::move(def));
  if (!inserted) {
    throw std::invalid_argument("registry: duplicate op name '" + it->first + "'");
  }
}

const OpDef* Registry::find(std::string_view name) const {
  auto it = ops_.find(name);
  return it == ops_.end() ? nullptr : &it->second;
}

const OpDef& Registry::at(std::string_view name) const {
  const OpDef* def = find(name);
  if (def == nullptr) throw std::invalid_argument("registry: unknown op '" + std::string(name) + "'");
  return *def;
}

const Registry& Registry::builtin() {
  static const Registry r = make_builtin();
  return r;
}

const char* to_string(FadReason r) {
  switch (r) {
    case FadReason::kUnaryElementwise: return "unary-elementwise";
    case FadReason::kBinaryConst: return "binary-const";
    case FadReason::kBinarySameSource: return "binary-same-source";
    case FadReason::kBinaryDifferentSource: return "binary-different-source";
    case FadReason::kIntrinsicallyNfad: return "intrinsically-nfad";
  }
  return "?";
}

FadClassification classify(const OpDef& op, std::span<const InputMeta> inputs) {
  if (static_cast<int>(inputs.size()) != op.arity) {
    throw std::invalid_argument("classify: arity mismatch for op '" + op.name + "'");
  }
  if (!op.fad_capable()) return {false, FadReason::kIntrinsicallyNfad};
  if (op.arity == 1) {
    return {true, op.takes_attr ? FadReason::kBinaryConst : FadReason::kUnaryElementwise};
  }
  if (inputs[0].token == inputs[1].token) return {true, FadReason::kBinarySameSource};
  return {false, FadReason::kBinaryDifferentSource};
}

std::vector<double> local_jvp(const OpDef& op, std::int64_t n, std::span<const double> a,
                              std::span<const double> b, std::span<const double> out,
                              double attr, std::span<const double> tangent0,
                              std::span<const double> tangent1, kernels::Exec exec) {
  if (!op.fad_capable()) {
    throw std::logic_error("local_jvp: op '" + op.name + "' is not element-wise");
  }
  std::vector<double> r(static_cast<std::size_t>(n));
  const DElemFn d0 = op.d0;
  const DElemFn d1 = op.d1;
  if (op.arity == 1) {
    for_each_index(exec, n, [&](std::int64_t i) {
      const double d = d0(a.empty() ? 0.0 : a[i], 0.0, out.empty() ? 0.0 : out[i], attr);
      r[i] = tangent0.empty() ? d : d * tangent0[i];
    });
  } else {
    for_each_index(exec, n, [&](std::int64_t i) {
      const double av = a.empty() ? 0.0 : a[i];
      const double bv = b.empty() ? 0.0 : b[i];
      const double ov = out.empty() ? 0.0 : out[i];
      const double t0 = d0(av, bv, ov, attr);
      const double t1 = d1(av, bv, ov, attr);
      r[i] = (tangent0.empty() ? t0 : t0 * tangent0[i]) +
             (tangent1.empty() ? t1 : t1 * tangent1[i]);
    });
  }
  return r;
}

void local_vjp(const OpDef& op, const std::vector<std::span<const double>>& saved,
               const Shape& in0, const Shape* in1, const Shape& out_shape, double attr,
               std::span<const double> g, std::span<double> grad_in0,
               std::span<double> grad_in1, kernels::Exec exec) {
  if (saved.size() != op.saves.size()) {
    throw std::logic_error("local_vjp: op '" + op.name + "' expects " +
                           std::to_string(op.saves.size()) + " saved tensors, got " +
                           std::to_string(saved.size()));
  }
  for (const auto& s : saved) {
    if (s.empty()) throw std::logic_error("local_vjp: missing saved tensor for op '" + op.name + "'");
  }
  VjpCtx ctx;
  ctx.op = &op;
  ctx.saved = saved;
  ctx.in_shape[0] = &in0;
  ctx.in_shape[1] = in1;
  ctx.out_shape = &out_shape;
  ctx.attr = attr;
  ctx.g = g;
  ctx.grad_in0 = grad_in0;
  ctx.grad_in1 = grad_in1;
  ctx.exec = exec;
  op.vjp(ctx);
}

}  // namespace nestad
