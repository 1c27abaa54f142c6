#pragma once

#include <span>
#include <string>

#include "nestad/engine.hpp"

namespace nestad {

struct TraceCheckResult {
  bool ok = true;
  std::string error;
  std::int64_t entry = -1;  // index of the offending entry, -1 for end-of-trace
};

// Validates that a detection trace obeys the chain protocol:
//   NY  no chain inputs, every input is the claimed source, fresh output.
//   YY  at least one chain input, all chain inputs share the claimed source,
//       every raw input is that source itself.
//   YN  at least one chain input; output leaves the chain.
//   NN  no chain inputs.
// Every chain tensor must be consumed by a later YY or YN (a synthetic YN is
// emitted when backward seeds a chain loss), so each chain traces
// NY -> YY* -> YN end to end.
TraceCheckResult check_trace(std::span<const TraceEntry> entries);

// "step_id, op, state, src_token, retained_bytes"
std::string format_trace_line(const TraceEntry& e);

}  // namespace nestad
