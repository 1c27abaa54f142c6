#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nestad/kernels.hpp"
#include "nestad/shape.hpp"

namespace nestad {

// An op is fad-capable when it is element-wise and its application can stay
// inside a single-source R^1 -> R^1 chain: unary ops always, binary ops only
// when both operands trace to the same source tensor. Constant-attr ops
// (const_add, const_mul, pow_const) are the binary-with-constant case folded
// into arity 1. Everything else (matmul, reductions, ...) is intrinsically
// nfad.
enum class FadClass { kFadUnary, kFadBinary, kNfad };

enum class SaveSlot { kIn0, kIn1, kOut };

struct ForwardCtx {
  std::span<const double> a;
  std::span<const double> b;  // empty for unary
  const Shape* a_shape = nullptr;
  const Shape* b_shape = nullptr;
  double attr = 0.0;
  std::span<double> out;
  const Shape* out_shape = nullptr;
  kernels::Exec exec = kernels::Exec::kSerial;
};

struct OpDef;

// Saved spans are indexed by position in OpDef::saves. Gradient output spans
// are sized per input slot; an empty span means "not requested".
struct VjpCtx {
  const OpDef* op = nullptr;
  std::vector<std::span<const double>> saved;
  const Shape* in_shape[2] = {nullptr, nullptr};
  const Shape* out_shape = nullptr;
  double attr = 0.0;
  std::span<const double> g;
  std::span<double> grad_in0;
  std::span<double> grad_in1;
  kernels::Exec exec = kernels::Exec::kSerial;
};

// Per-element partial derivative of the output w.r.t. one input. Only the
// fields covered by OpDef::saves (plus attr) may be read: the same function
// serves forward-mode tangent assembly (all values live) and the backward
// pass (only saved values live).
using DElemFn = double (*)(double a, double b, double out, double attr);

struct OpDef {
  std::string name;
  int arity = 1;
  FadClass fad_class = FadClass::kNfad;
  bool takes_attr = false;
  std::vector<SaveSlot> saves;  // what the plain-backprop VJP retains
  Shape (*infer)(const Shape& a, const Shape* b, double attr) = nullptr;
  void (*forward)(const ForwardCtx&) = nullptr;
  DElemFn d0 = nullptr;  // fad ops only
  DElemFn d1 = nullptr;  // binary fad ops only
  void (*vjp)(const VjpCtx&) = nullptr;

  bool fad_capable() const { return fad_class != FadClass::kNfad; }
};

class Registry {
 public:
  void register_op(OpDef def);
  const OpDef* find(std::string_view name) const;
  const OpDef& at(std::string_view name) const;
  const std::map<std::string, OpDef, std::less<>>& all() const { return ops_; }

  // The built-in op set. Constructed once; immutable afterwards.
  static const Registry& builtin();

 private:
  std::map<std::string, OpDef, std::less<>> ops_;
};

// How one concrete application of an op was classified.
enum class FadReason {
  kUnaryElementwise,
  kBinaryConst,
  kBinarySameSource,
  kBinaryDifferentSource,
  kIntrinsicallyNfad,
};

const char* to_string(FadReason r);

struct FadClassification {
  bool fad = false;
  FadReason reason = FadReason::kIntrinsicallyNfad;
};

// Per-input view the classifier needs: whether the tensor is part of a fad
// chain, and its source token. For a fad tensor the token is the id of the
// chain's source; for a raw tensor it is the tensor's own id, which makes a
// chain member combine with its own source (mul(sigmoid(x), x)) same-source.
struct InputMeta {
  bool is_fad = false;
  std::int64_t token = 0;
};

FadClassification classify(const OpDef& op, std::span<const InputMeta> inputs);

// Forward-mode tangent of one op application, n elements. a/b/out may be
// empty when the op's per-element partials do not read them (the d_elem save
// discipline); tangent0/tangent1 are the input tangents, where an empty span
// stands for the implicit all-ones seed and the multiply is skipped. Throws
// for nfad ops.
std::vector<double> local_jvp(const OpDef& op, std::int64_t n, std::span<const double> a,
                              std::span<const double> b, std::span<const double> out,
                              double attr, std::span<const double> tangent0,
                              std::span<const double> tangent1, kernels::Exec exec);

// Reverse-mode pull-back. `saved` must match op.saves in order and count.
void local_vjp(const OpDef& op, const std::vector<std::span<const double>>& saved,
               const Shape& in0, const Shape* in1, const Shape& out_shape, double attr,
               std::span<const double> g, std::span<double> grad_in0,
               std::span<double> grad_in1, kernels::Exec exec);

}  // namespace nestad
