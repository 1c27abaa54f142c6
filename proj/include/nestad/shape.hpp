#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace nestad {

// Dense row-major shape. Rank is at least 1 and every dim is positive; a
// scalar is represented as {1}. Equality is the only compatibility rule
// (no broadcasting anywhere in the engine).
class Shape {
 public:
  Shape() : dims_{1} {}
  Shape(std::initializer_list<std::int64_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) { validate(); }

  const std::vector<std::int64_t>& dims() const { return dims_; }
  std::int64_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  bool operator!=(const Shape& other) const { return dims_ != other.dims_; }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += 'x';
      s += std::to_string(dims_[i]);
    }
    return s;
  }

 private:
  void validate() const {
    if (dims_.empty()) throw std::invalid_argument("shape: rank must be >= 1");
    for (std::int64_t d : dims_) {
      if (d <= 0) throw std::invalid_argument("shape: dims must be positive, got " + to_string());
    }
  }

  std::vector<std::int64_t> dims_;
};

}  // namespace nestad
