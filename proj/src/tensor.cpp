#include "nestad/tensor.hpp"

#include "nestad/engine.hpp"

namespace nestad {

Tensor::Tensor(const Tensor& o) : engine_(o.engine_), id_(o.id_) {
  if (valid()) engine_->add_holder(id_);
}

Tensor& Tensor::operator=(const Tensor& o) {
  if (this == &o) return *this;
  if (o.valid()) o.engine_->add_holder(o.id_);
  reset();
  engine_ = o.engine_;
  id_ = o.id_;
  return *this;
}

Tensor& Tensor::operator=(Tensor&& o) noexcept {
  if (this == &o) return *this;
  reset();
  engine_ = o.engine_;
  id_ = o.id_;
  o.engine_ = nullptr;
  o.id_ = kNoTensor;
  return *this;
}

void Tensor::reset() {
  if (valid()) engine_->drop_holder(id_);
  engine_ = nullptr;
  id_ = kNoTensor;
}

}  // namespace nestad
