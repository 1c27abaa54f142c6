#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nestad/engine.hpp"
#include "nestad/static_graph.hpp"

namespace nestad {

// One op application inside an activation, args by step index (-1 is the
// activation input). Compositions use only registry ops, so the same recipe
// drives the dynamic engine and static graph construction.
struct ActStep {
  std::string op;
  int a0 = -1;
  int a1 = -1;
  double attr = 0.0;
};

struct Activation {
  std::string name;
  std::vector<ActStep> steps;
};

// relu, sigmoid, tanh, swish, gelu, mish. Throws for unknown names.
const Activation& activation(std::string_view name);
const std::vector<std::string>& activation_names();

// Applies the composition, dropping each intermediate handle at its last
// use so retention reflects what the engine keeps, not what the caller
// still holds.
Tensor apply_activation(Engine& eng, const Activation& act, const Tensor& x);

// Same composition as graph nodes; returns the output node id.
std::int64_t emit_activation(StaticGraph& g, const Activation& act, std::int64_t x);

}  // namespace nestad
