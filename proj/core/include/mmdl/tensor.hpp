#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "mmdl/error.hpp"

namespace mmdl {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Value buffer plus autograd bookkeeping. Tensors sharing a storage are the
// same variable (parameters are handled this way); ops always allocate fresh
// storage for their outputs. The storage -> tape-node association lives in
// the tape, so read-only tensors can feed tapes on several threads at once.
struct TensorStorage {
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward() flushes into it
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, 0.0) {}
  Tensor(Shape shape, double fill);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(st_->value.size()); }

  std::span<double> data() { return st_->value; }
  std::span<const double> data() const { return st_->value; }
  double* ptr() { return st_->value.data(); }
  const double* ptr() const { return st_->value.data(); }

  double scalar_value() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !st_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  const std::shared_ptr<TensorStorage>& storage() const { return st_; }

  // deep copy with fresh storage (does not copy grad)
  Tensor clone() const;

 private:
  Shape shape_;
  std::shared_ptr<TensorStorage> st_;
};

}  // namespace mmdl
