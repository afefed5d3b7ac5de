#include "mmdl/tensor.hpp"

#include <algorithm>
#include <string>

namespace mmdl {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d <= 0) throw Error(ErrorCategory::dimension, "non-positive dim in shape " + shape_str(shape_));
  st_ = std::make_shared<TensorStorage>();
  st_->value.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d <= 0) throw Error(ErrorCategory::dimension, "non-positive dim in shape " + shape_str(shape_));
  if (shape_numel(shape_) != static_cast<std::int64_t>(values.size()))
    throw Error(ErrorCategory::dimension,
                "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape_));
  st_ = std::make_shared<TensorStorage>();
  st_->value = std::move(values);
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw Error(ErrorCategory::contract, "tensor is not a scalar: " + shape_str(shape_));
  return st_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw Error(ErrorCategory::dimension, "index rank mismatch");
  std::int64_t off = 0;
  int i = 0;
  for (auto v : idx) {
    if (v < 0 || v >= shape_[static_cast<std::size_t>(i)])
      throw Error(ErrorCategory::dimension, "index out of range");
    off = off * shape_[static_cast<std::size_t>(i)] + v;
    ++i;
  }
  return st_->value[static_cast<std::size_t>(off)];
}

std::span<const double> Tensor::grad() const {
  if (st_->grad.empty())
    throw Error(ErrorCategory::contract, "gradient not computed for this tensor");
  return st_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (st_->grad.empty())
    throw Error(ErrorCategory::contract, "gradient not computed for this tensor");
  return st_->grad;
}

void Tensor::zero_grad() { st_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor out(shape_, 0.0);
  std::copy(st_->value.begin(), st_->value.end(), out.st_->value.begin());
  out.st_->requires_grad = st_->requires_grad;
  return out;
}

}  // namespace mmdl
