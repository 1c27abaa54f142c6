#include "nestad/activations.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace nestad {

namespace {

std::map<std::string, Activation, std::less<>> make_table() {
  std::map<std::string, Activation, std::less<>> t;
  auto put = [&](std::string name, std::vector<ActStep> steps) {
    t.emplace(name, Activation{name, std::move(steps)});
  };
  put("relu", {{"relu", -1, -1, 0}});
  put("sigmoid", {{"sigmoid", -1, -1, 0}});
  put("tanh", {{"tanh", -1, -1, 0}});
  // x * sigmoid(x)
  put("swish", {{"sigmoid", -1, -1, 0},
                {"mul", 0, -1, 0}});
  // x * tanh(softplus(x))
  put("mish", {{"softplus", -1, -1, 0},
               {"tanh", 0, -1, 0},
               {"mul", -1, 1, 0}});
  // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  put("gelu", {{"pow_const", -1, -1, 3.0},
               {"const_mul", 0, -1, 0.044715},
               {"add", -1, 1, 0},
               {"const_mul", 2, -1, std::sqrt(2.0 / 3.14159265358979323846)},
               {"tanh", 3, -1, 0},
               {"const_add", 4, -1, 1.0},
               {"mul", -1, 5, 0},
               {"const_mul", 6, -1, 0.5}});
  return t;
}

const std::map<std::string, Activation, std::less<>>& table() {
  static const std::map<std::string, Activation, std::less<>> t = make_table();
  return t;
}

}  // namespace

const Activation& activation(std::string_view name) {
  auto it = table().find(name);
  if (it == table().end()) {
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
  }
  return it->second;
}

const std::vector<std::string>& activation_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, act] : table()) n.push_back(name);
    return n;
  }();
  return names;
}

Tensor apply_activation(Engine& eng, const Activation& act, const Tensor& x) {
  const Registry& reg = Registry::builtin();
  std::vector<int> remaining(act.steps.size(), 0);
  for (const ActStep& s : act.steps) {
    if (s.a0 >= 0) remaining[static_cast<std::size_t>(s.a0)] += 1;
    if (reg.at(s.op).arity == 2 && s.a1 >= 0) remaining[static_cast<std::size_t>(s.a1)] += 1;
  }
  std::vector<Tensor> vals(act.steps.size());
  auto arg = [&](int a) -> const Tensor& {
    return a < 0 ? x : vals[static_cast<std::size_t>(a)];
  };
  auto consume = [&](int a) {
    if (a >= 0 && --remaining[static_cast<std::size_t>(a)] == 0) {
      vals[static_cast<std::size_t>(a)].reset();
    }
  };
  for (std::size_t i = 0; i < act.steps.size(); ++i) {
    const ActStep& s = act.steps[i];
    const OpDef& def = reg.at(s.op);
    if (def.arity == 1) {
      vals[i] = eng.apply(s.op, arg(s.a0), s.attr);
      consume(s.a0);
    } else {
      vals[i] = eng.apply(s.op, arg(s.a0), arg(s.a1));
      consume(s.a0);
      consume(s.a1);
    }
  }
  return std::move(vals.back());
}

std::int64_t emit_activation(StaticGraph& g, const Activation& act, std::int64_t x) {
  const Registry& reg = Registry::builtin();
  std::vector<std::int64_t> ids(act.steps.size(), -1);
  auto arg = [&](int a) { return a < 0 ? x : ids[static_cast<std::size_t>(a)]; };
  for (std::size_t i = 0; i < act.steps.size(); ++i) {
    const ActStep& s = act.steps[i];
    const OpDef& def = reg.at(s.op);
    std::vector<std::int64_t> args{arg(s.a0)};
    if (def.arity == 2) args.push_back(arg(s.a1));
    std::vector<double> attrs;
    if (def.takes_attr) attrs.push_back(s.attr);
    ids[i] = g.add(s.op, std::move(args), std::move(attrs), Phase::kForward);
  }
  return ids.back();
}

}  // namespace nestad
