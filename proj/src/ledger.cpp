#include "nestad/ledger.hpp"

namespace nestad {

const char* to_string(Category c) {
  switch (c) {
    case Category::kInput: return "input";
    case Category::kWeight: return "weight";
    case Category::kIntermediate: return "intermediate";
    case Category::kFadDerivative: return "fad-derivative";
    case Category::kGradient: return "gradient";
  }
  return "?";
}

void FootprintLedger::on_alloc(std::int64_t tensor_id, Category c, std::int64_t bytes) {
  live_[idx(c)] += bytes;
  count_[idx(c)] += 1;
  if (live_[idx(c)] > peak_[idx(c)]) peak_[idx(c)] = live_[idx(c)];
  after_change();
  if (logging_) {
    events_.push_back({LedgerEvent::Kind::kAlloc, ++seq_, tensor_id, c, bytes, {}});
  }
}

void FootprintLedger::on_release(std::int64_t tensor_id, Category c, std::int64_t bytes) {
  live_[idx(c)] -= bytes;
  count_[idx(c)] -= 1;
  if (live_[idx(c)] < 0 || count_[idx(c)] < 0) {
    throw std::logic_error("ledger: released more than was allocated in category " +
                           std::string(to_string(c)));
  }
  after_change();
  if (logging_) {
    events_.push_back({LedgerEvent::Kind::kRelease, ++seq_, tensor_id, c, bytes, {}});
  }
}

void FootprintLedger::mark(std::string label) {
  if (logging_) {
    events_.push_back({LedgerEvent::Kind::kMark, ++seq_, 0, Category::kIntermediate, 0,
                       std::move(label)});
  }
}

std::int64_t FootprintLedger::live_total() const {
  std::int64_t t = 0;
  for (std::int64_t v : live_) t += v;
  return t;
}

std::int64_t FootprintLedger::live_retained() const {
  return live_[idx(Category::kIntermediate)] + live_[idx(Category::kFadDerivative)];
}

void FootprintLedger::after_change() {
  const std::int64_t t = live_total();
  if (t > peak_total_) peak_total_ = t;
  const std::int64_t r = live_retained();
  if (r > peak_retained_) peak_retained_ = r;
}

}  // namespace nestad
