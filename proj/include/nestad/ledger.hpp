#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nestad {

enum class Category : int {
  kInput = 0,
  kWeight,
  kIntermediate,
  kFadDerivative,
  kGradient,
};

inline constexpr int kCategoryCount = 5;

const char* to_string(Category c);

struct LedgerEvent {
  enum class Kind { kAlloc, kRelease, kMark };
  Kind kind;
  std::uint64_t seq;
  std::int64_t tensor_id;  // 0 for marks
  Category category;       // kIntermediate for marks, unused
  std::int64_t bytes;      // 0 for marks
  std::string label;       // marks only
};

// Byte-exact footprint accounting. Every allocation and release of tensor
// storage goes through here; "retained" tracks the intermediate plus
// derivative categories together, which is the memory the backward pass is
// responsible for. Peaks are high-water marks since construction.
class FootprintLedger {
 public:
  void on_alloc(std::int64_t tensor_id, Category c, std::int64_t bytes);
  void on_release(std::int64_t tensor_id, Category c, std::int64_t bytes);

  // Appends a labeled marker to the event log (no byte effect). Used to
  // assert release ordering against engine milestones.
  void mark(std::string label);

  std::int64_t live_bytes(Category c) const { return live_[idx(c)]; }
  std::int64_t peak_bytes(Category c) const { return peak_[idx(c)]; }
  std::int64_t live_count(Category c) const { return count_[idx(c)]; }
  std::int64_t live_total() const;
  std::int64_t peak_total() const { return peak_total_; }
  std::int64_t live_retained() const;
  std::int64_t peak_retained() const { return peak_retained_; }

  void set_logging(bool on) { logging_ = on; }
  bool logging() const { return logging_; }
  const std::vector<LedgerEvent>& events() const { return events_; }

 private:
  static std::size_t idx(Category c) { return static_cast<std::size_t>(c); }
  void after_change();

  std::array<std::int64_t, kCategoryCount> live_{};
  std::array<std::int64_t, kCategoryCount> peak_{};
  std::array<std::int64_t, kCategoryCount> count_{};
  std::int64_t peak_total_ = 0;
  std::int64_t peak_retained_ = 0;
  bool logging_ = false;
  std::uint64_t seq_ = 0;
  std::vector<LedgerEvent> events_;
};

}  // namespace nestad
