#include "nestad/trace_check.hpp"

#include <map>
#include <set>

namespace nestad {

namespace {

TraceCheckResult fail(std::int64_t entry, std::string msg) {
  return {false, std::move(msg), entry};
}

}  // namespace

TraceCheckResult check_trace(std::span<const TraceEntry> entries) {
  std::map<TensorId, TensorId> source_of;  // chain tensor -> source
  std::set<TensorId> consumed;
  std::set<TensorId> outputs_seen;

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const TraceEntry& e = entries[i];
    const std::int64_t idx = static_cast<std::int64_t>(i);

    if (e.output_id >= 0 && !outputs_seen.insert(e.output_id).second) {
      return fail(idx, "output t" + std::to_string(e.output_id) + " produced twice");
    }

    int n_chain = 0;
    for (TensorId in : e.input_ids) {
      if (source_of.count(in)) n_chain += 1;
    }

    switch (e.state) {
      case FsmState::kNN:
        if (n_chain > 0) return fail(idx, "NN step consumes a chain tensor");
        break;

      case FsmState::kNY: {
        if (n_chain > 0) return fail(idx, "NY step consumes a chain tensor");
        if (e.src_token < 0) return fail(idx, "NY step without a source token");
        for (TensorId in : e.input_ids) {
          if (in != e.src_token) {
            return fail(idx, "NY step input t" + std::to_string(in) +
                                 " is not the source t" + std::to_string(e.src_token));
          }
        }
        if (e.output_id < 0) return fail(idx, "NY step without an output");
        source_of[e.output_id] = e.src_token;
        break;
      }

      case FsmState::kYY: {
        if (n_chain == 0) return fail(idx, "YY step without a chain input");
        if (e.src_token < 0) return fail(idx, "YY step without a source token");
        for (TensorId in : e.input_ids) {
          auto it = source_of.find(in);
          if (it != source_of.end()) {
            if (it->second != e.src_token) {
              return fail(idx, "YY step mixes sources t" + std::to_string(it->second) +
                                   " and t" + std::to_string(e.src_token));
            }
            consumed.insert(in);
          } else if (in != e.src_token) {
            return fail(idx, "YY step raw input t" + std::to_string(in) +
                                 " is not the source t" + std::to_string(e.src_token));
          }
        }
        if (e.output_id < 0) return fail(idx, "YY step without an output");
        source_of[e.output_id] = e.src_token;
        break;
      }

      case FsmState::kYN: {
        if (n_chain == 0) return fail(idx, "YN step without a chain input");
        for (TensorId in : e.input_ids) {
          if (source_of.count(in)) consumed.insert(in);
        }
        break;
      }
    }
  }

  for (const auto& [id, src] : source_of) {
    if (!consumed.count(id)) {
      return fail(-1, "chain tensor t" + std::to_string(id) + " (source t" +
                          std::to_string(src) + ") is never consumed");
    }
  }
  return {};
}

std::string format_trace_line(const TraceEntry& e) {
  std::string s = std::to_string(e.step_id);
  s += ", ";
  s += e.op;
  s += ", ";
  s += to_string(e.state);
  s += ", ";
  s += std::to_string(e.src_token);
  s += ", ";
  s += std::to_string(e.retained_bytes);
  return s;
}

}  // namespace nestad
