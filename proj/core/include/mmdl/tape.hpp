#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmdl/tensor.hpp"

namespace mmdl {

enum class OpKind : std::uint8_t {
  leaf, matmul, add, sub, mul, scalar_mul, scalar_add, add_rowvec, reshape,
  transpose, concat, slice, sum_axis, mean_axis, sum_all, mean_all, gelu,
  layer_norm, softmax, embedding, log, dropout, mha, add_spacetime_pos,
  ce_loss, kd_loss,
};

// Recorded computation graph; insertion order is the topological order.
// One tape per forward pass, confined to one thread. Ops record onto the
// thread-local active tape installed by TapeScope.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Runs the reverse sweep from a scalar produced under this tape and adds
  // leaf gradients into their storages (Tensor::grad). Errors: non-scalar
  // loss, loss from another tape, or second call on the same tape.
  void backward(const Tensor& loss);

  // Same sweep but leaves Tensor::grad untouched; read results with
  // grad_of(). Used when parameters are shared read-only across workers.
  void backward_no_flush(const Tensor& loss);

  // Gradient computed by the last backward for a tensor registered on this
  // tape; empty span if the tensor never participated.
  std::span<const double> grad_of(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t serial() const { return serial_; }

  static Tape* active();

  // --- below is the op-recording interface (used by ops.cpp) ---

  struct Node {
    OpKind kind = OpKind::leaf;
    std::int64_t out_numel = 0;
    std::vector<std::int32_t> inputs;
    // accumulates into input grads via grad_acc(); reads grad_of_node(self)
    std::function<void(Tape&, std::int32_t self)> backward;
    std::shared_ptr<TensorStorage> leaf_storage;
  };

  std::int32_t register_leaf(const std::shared_ptr<TensorStorage>& st);
  // records the node and associates the output storage with it
  std::int32_t record(Node node, const std::shared_ptr<TensorStorage>& out);
  // true if the tensor is registered on this tape or wants a gradient
  bool participates(const Tensor& t) const;
  // node id for an input tensor, registering a leaf on demand
  std::int32_t input_id(const Tensor& t);

  std::span<const double> grad_of_node(std::int32_t id) const { return grads_[static_cast<std::size_t>(id)]; }
  // grad buffer for accumulation, zero-allocated on first touch
  std::span<double> grad_acc(std::int32_t id);

 private:
  void run_backward(const Tensor& loss, bool flush);
  std::int32_t node_of(const TensorStorage* st) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const TensorStorage*, std::int32_t> node_ids_;
  std::uint64_t serial_;
  bool backward_done_ = false;
};

// RAII guard installing a tape as the thread-local recording target.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace mmdl
