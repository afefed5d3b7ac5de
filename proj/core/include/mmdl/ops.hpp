#pragma once

#include <span>
#include <vector>

#include "mmdl/rng.hpp"
#include "mmdl/tape.hpp"
#include "mmdl/tensor.hpp"

namespace mmdl {

// Differentiable op vocabulary. Every op computes eagerly and records a node
// on the thread-local active tape when any input participates in a gradient.
// Without an active tape (eval mode) they are plain math.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor scalar_add(const Tensor& x, double c);
// x[..., d] + b[d], broadcast over leading dims
Tensor add_rowvec(const Tensor& x, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// tanh approximation with its exact analytic derivative
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_lastdim(const Tensor& z);
Tensor embedding(const Tensor& table, std::span<const int> idx);
Tensor log(const Tensor& x);
// train-mode only; p == 0 or train == false returns x untouched
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

// Multi-head attention core over G independent groups of L tokens each;
// q,k,v are [G,L,D] with D divisible by n_heads. key_mask (size G*L,
// nonzero = masked out) removes keys from every softmax; masked tokens can
// still act as queries.
Tensor mha(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
           std::span<const unsigned char> key_mask = {});

// x[T*P, d] + pos_space[s] + pos_time[t] for token index t*P + s
Tensor add_spacetime_pos(const Tensor& x, const Tensor& pos_space, const Tensor& pos_time);

// cross-entropy of a single logit vector against an integer label
Tensor ce_loss(const Tensor& logits, int label);

// KL(p_teacher || p_student) with probabilities floored at 1e-12 inside the
// logs; the teacher side is constant, gradient flows into p_student only.
Tensor kd_loss_taped(const Tensor& p_student, std::span<const double> p_teacher);

}  // namespace mmdl
