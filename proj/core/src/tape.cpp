#include "mmdl/tape.hpp"

#include <atomic>

#include "mmdl/kernels.hpp"

namespace mmdl {

namespace {
std::atomic<std::uint64_t> g_tape_counter{1};
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tape::Tape() : serial_(g_tape_counter.fetch_add(1, std::memory_order_relaxed)) {}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

std::int32_t Tape::node_of(const TensorStorage* st) const {
  auto it = node_ids_.find(st);
  return it == node_ids_.end() ? -1 : it->second;
}

std::int32_t Tape::register_leaf(const std::shared_ptr<TensorStorage>& st) {
  if (auto id = node_of(st.get()); id >= 0) return id;
  Node n;
  n.kind = OpKind::leaf;
  n.out_numel = static_cast<std::int64_t>(st->value.size());
  n.leaf_storage = st;
  auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  node_ids_.emplace(st.get(), id);
  return id;
}

std::int32_t Tape::record(Node node, const std::shared_ptr<TensorStorage>& out) {
  for (auto in : node.inputs)
    if (in < 0 || in >= static_cast<std::int32_t>(nodes_.size()))
      throw Error(ErrorCategory::contract, "tape node input does not precede it");
  auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  node_ids_.emplace(out.get(), id);
  return id;
}

bool Tape::participates(const Tensor& t) const {
  return t.storage()->requires_grad || node_of(t.storage().get()) >= 0;
}

std::int32_t Tape::input_id(const Tensor& t) {
  if (auto id = node_of(t.storage().get()); id >= 0) return id;
  return register_leaf(t.storage());
}

std::span<double> Tape::grad_acc(std::int32_t id) {
  auto& g = grads_[static_cast<std::size_t>(id)];
  if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(id)].out_numel), 0.0);
  return g;
}

std::span<const double> Tape::grad_of(const Tensor& t) const {
  auto id = node_of(t.storage().get());
  if (id < 0) return {};
  return grads_[static_cast<std::size_t>(id)];
}

void Tape::run_backward(const Tensor& loss, bool flush) {
  if (backward_done_)
    throw Error(ErrorCategory::contract, "backward already ran on this tape");
  if (loss.numel() != 1)
    throw Error(ErrorCategory::contract, "backward requires a scalar loss, got " + shape_str(loss.shape()));
  const auto loss_node = node_of(loss.storage().get());
  if (loss_node < 0)
    throw Error(ErrorCategory::contract, "loss was not produced under this tape");
  backward_done_ = true;

  grad_acc(loss_node)[0] = 1.0;
  // strict reverse insertion order, each node exactly once
  for (std::int32_t id = static_cast<std::int32_t>(nodes_.size()) - 1; id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward) continue;
    if (grads_[static_cast<std::size_t>(id)].empty()) continue;  // no downstream contribution
    node.backward(*this, id);
  }
  if (!flush) return;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    if (node.kind != OpKind::leaf || !node.leaf_storage->requires_grad) continue;
    auto& g = grads_[i];
    if (g.empty()) continue;
    auto& dst = node.leaf_storage->grad;
    if (dst.empty()) dst.assign(g.size(), 0.0);
    kern::axpy(1.0, g.data(), dst.data(), g.size());
  }
}

void Tape::backward(const Tensor& loss) { run_backward(loss, true); }
void Tape::backward_no_flush(const Tensor& loss) { run_backward(loss, false); }

}  // namespace mmdl
