#pragma once

#include <cstdint>

namespace nestad {

class Engine;

using TensorId = std::int64_t;
inline constexpr TensorId kNoTensor = -1;

// Owning handle to an engine tensor. Copying bumps the holder count; storage
// is released when the last holder lets go. Handles must not outlive their
// engine.
class Tensor {
 public:
  Tensor() = default;
  // Adopts an already-counted reference; only the engine constructs these.
  Tensor(Engine* engine, TensorId id) : engine_(engine), id_(id) {}
  Tensor(const Tensor& o);
  Tensor(Tensor&& o) noexcept : engine_(o.engine_), id_(o.id_) {
    o.engine_ = nullptr;
    o.id_ = kNoTensor;
  }
  Tensor& operator=(const Tensor& o);
  Tensor& operator=(Tensor&& o) noexcept;
  ~Tensor() { reset(); }

  // Drops this handle's reference and empties it.
  void reset();

  bool valid() const { return engine_ != nullptr && id_ >= 0; }
  explicit operator bool() const { return valid(); }
  TensorId id() const { return id_; }
  Engine* engine() const { return engine_; }

 private:
  Engine* engine_ = nullptr;
  TensorId id_ = kNoTensor;
};

}  // namespace nestad
