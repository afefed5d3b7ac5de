#include "mmdl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "mmdl/fastmath.hpp"
#include "mmdl/kernels.hpp"

namespace mmdl {

namespace {

constexpr double kProbFloor = 1e-12;

void check_finite_debug(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : t.data())
    if (!std::isfinite(v)) throw Error(ErrorCategory::numeric, std::string(op) + " produced non-finite value");
#else
  (void)t;
  (void)op;
#endif
}

// Registers `out` as the product of `kind` when recording is on. `ins` pairs
// each input tensor with whether gradient should flow to it; returns input
// node ids (-1 for constants) for the backward closure to target.
struct Recorder {
  Tape* tape = nullptr;
  std::vector<std::int32_t> ids;

  explicit Recorder(std::initializer_list<const Tensor*> ins) {
    Tape* tp = Tape::active();
    if (!tp) return;
    bool any = false;
    for (const Tensor* t : ins)
      if (tp->participates(*t)) any = true;
    if (!any) return;
    tape = tp;
    for (const Tensor* t : ins) ids.push_back(tp->participates(*t) ? tp->input_id(*t) : -1);
  }

  bool on() const { return tape != nullptr; }

  void commit(OpKind kind, Tensor& out, std::function<void(Tape&, std::int32_t)> backward) {
    Tape::Node n;
    n.kind = kind;
    n.out_numel = out.numel();
    for (auto id : ids)
      if (id >= 0) n.inputs.push_back(id);
    n.backward = std::move(backward);
    tape->record(std::move(n), out.storage());
  }
};

struct AxisView {
  std::int64_t outer, axis, inner;
};

AxisView axis_view(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw Error(ErrorCategory::dimension, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[static_cast<std::size_t>(i)];
  return v;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(ErrorCategory::dimension,
                std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor elementwise_binary(const Tensor& a, const Tensor& b, OpKind kind, const char* name) {
  require_same_shape(a, b, name);
  Tensor out(a.shape(), 0.0);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  auto n = static_cast<std::size_t>(a.numel());
  switch (kind) {
    case OpKind::add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case OpKind::sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case OpKind::mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
    default:
      throw Error(ErrorCategory::contract, "bad elementwise kind");
  }
  Recorder rec({&a, &b});
  if (rec.on()) {
    auto ids = rec.ids;
    auto sa = a.storage();
    auto sb = b.storage();
    rec.commit(kind, out, [ids, kind, sa, sb, n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      if (ids[0] >= 0) {
        auto ga = tp.grad_acc(ids[0]);
        if (kind == OpKind::mul)
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * sb->value[i];
        else
          kern::axpy(1.0, g.data(), ga.data(), n);
      }
      if (ids[1] >= 0) {
        auto gb = tp.grad_acc(ids[1]);
        if (kind == OpKind::mul)
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * sa->value[i];
        else
          kern::axpy(kind == OpKind::sub ? -1.0 : 1.0, g.data(), gb.data(), n);
      }
    });
  }
  check_finite_debug(out, name);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw Error(ErrorCategory::dimension,
                "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)), n = static_cast<int>(b.dim(1));
  Tensor out(Shape{m, n}, 0.0);
  kern::mm(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  Recorder rec({&a, &b});
  if (rec.on()) {
    auto ids = rec.ids;
    auto sa = a.storage();
    auto sb = b.storage();
    rec.commit(OpKind::matmul, out, [ids, sa, sb, m, k, n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      if (ids[0] >= 0) kern::mm_bt_acc(g.data(), sb->value.data(), tp.grad_acc(ids[0]).data(), m, n, k);
      if (ids[1] >= 0) kern::mm_at_acc(sa->value.data(), g.data(), tp.grad_acc(ids[1]).data(), m, k, n);
    });
  }
  check_finite_debug(out, "matmul");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, OpKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, OpKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary(a, b, OpKind::mul, "mul"); }

Tensor scalar_mul(const Tensor& x, double c) {
  Tensor out(x.shape(), 0.0);
  const double* px = x.ptr();
  double* po = out.ptr();
  auto n = static_cast<std::size_t>(x.numel());
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * c;
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::scalar_mul, out, [ids, c, n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      kern::axpy(c, g.data(), tp.grad_acc(ids[0]).data(), n);
    });
  }
  check_finite_debug(out, "scalar_mul");
  return out;
}

Tensor scalar_add(const Tensor& x, double c) {
  Tensor out(x.shape(), 0.0);
  const double* px = x.ptr();
  double* po = out.ptr();
  auto n = static_cast<std::size_t>(x.numel());
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] + c;
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::scalar_add, out, [ids, n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      kern::axpy(1.0, g.data(), tp.grad_acc(ids[0]).data(), n);
    });
  }
  check_finite_debug(out, "scalar_add");
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.rank() < 1 || b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0))
    throw Error(ErrorCategory::dimension,
                "add_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  const auto d = static_cast<std::size_t>(b.dim(0));
  const auto rows = static_cast<std::size_t>(x.numel()) / d;
  Tensor out(x.shape(), 0.0);
  const double* px = x.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] + pb[j];
  Recorder rec({&x, &b});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::add_rowvec, out, [ids, rows, d](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      if (ids[0] >= 0) kern::axpy(1.0, g.data(), tp.grad_acc(ids[0]).data(), rows * d);
      if (ids[1] >= 0) {
        auto gb = tp.grad_acc(ids[1]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    });
  }
  check_finite_debug(out, "add_rowvec");
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw Error(ErrorCategory::dimension,
                "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) + " changes element count");
  Tensor out(shape, std::vector<double>(x.data().begin(), x.data().end()));
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    auto n = static_cast<std::size_t>(x.numel());
    rec.commit(OpKind::reshape, out, [ids, n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      kern::axpy(1.0, g.data(), tp.grad_acc(ids[0]).data(), n);
    });
  }
  return out;
}

namespace {

// swap two axes of a row-major array; used for both forward and backward
void transpose_copy(const double* in, double* out, const Shape& in_shape, int a, int b) {
  const int r = static_cast<int>(in_shape.size());
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * in_shape[static_cast<std::size_t>(i + 1)];
  Shape out_shape = in_shape;
  std::swap(out_shape[static_cast<std::size_t>(a)], out_shape[static_cast<std::size_t>(b)]);
  std::vector<std::int64_t> map = in_strides;  // stride of in, indexed by out axis
  std::swap(map[static_cast<std::size_t>(a)], map[static_cast<std::size_t>(b)]);

  // fast path: rank-3 swap(0,1) with contiguous rows, the attention layout case
  if (r == 3 && a == 0 && b == 1) {
    const std::int64_t d0 = out_shape[0], d1 = out_shape[1], d2 = out_shape[2];
    for (std::int64_t i = 0; i < d0; ++i)
      for (std::int64_t j = 0; j < d1; ++j)
        std::memcpy(out + (i * d1 + j) * d2, in + (j * d0 + i) * d2,
                    sizeof(double) * static_cast<std::size_t>(d2));
    return;
  }

  const std::int64_t total = shape_numel(out_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t flat = 0; flat < total; ++flat) {
    std::int64_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[static_cast<std::size_t>(i)] * map[static_cast<std::size_t>(i)];
    out[flat] = in[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const int r = x.rank();
  if (axis_a < 0 || axis_a >= r || axis_b < 0 || axis_b >= r)
    throw Error(ErrorCategory::dimension, "transpose: axis out of range for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<std::size_t>(axis_a)], out_shape[static_cast<std::size_t>(axis_b)]);
  Tensor out(out_shape, 0.0);
  transpose_copy(x.ptr(), out.ptr(), x.shape(), axis_a, axis_b);
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    Shape oshape = out_shape;
    rec.commit(OpKind::transpose, out, [ids, oshape, axis_a, axis_b](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      std::vector<double> gt(g.size());
      transpose_copy(g.data(), gt.data(), oshape, axis_a, axis_b);
      kern::axpy(1.0, gt.data(), tp.grad_acc(ids[0]).data(), gt.size());
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw Error(ErrorCategory::dimension, "concat: no inputs");
  Shape out_shape = xs[0].shape();
  auto v0 = axis_view(out_shape, axis);
  std::int64_t total_axis = 0;
  for (const auto& x : xs) {
    if (x.rank() != xs[0].rank()) throw Error(ErrorCategory::dimension, "concat: rank mismatch");
    for (int i = 0; i < x.rank(); ++i)
      if (i != axis && x.dim(i) != out_shape[static_cast<std::size_t>(i)])
        throw Error(ErrorCategory::dimension, "concat: shape mismatch at axis " + std::to_string(i));
    total_axis += x.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total_axis;
  Tensor out(out_shape, 0.0);
  double* po = out.ptr();
  const std::int64_t out_row = total_axis * v0.inner;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const auto vi = axis_view(x.shape(), axis);
    const double* px = x.ptr();
    for (std::int64_t o = 0; o < vi.outer; ++o)
      std::memcpy(po + o * out_row + off, px + o * vi.axis * vi.inner,
                  sizeof(double) * static_cast<std::size_t>(vi.axis * vi.inner));
    off += vi.axis * vi.inner;
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  Tape* tp = Tape::active();
  bool any = false;
  if (tp)
    for (const auto& x : xs)
      if (tp->participates(x)) any = true;
  if (tp && any) {
    std::vector<std::int32_t> ids;
    std::vector<std::int64_t> chunk;  // axis*inner sizes per input
    for (const auto& x : xs) {
      ids.push_back(tp->participates(x) ? tp->input_id(x) : -1);
      chunk.push_back(axis_view(x.shape(), axis).axis * v0.inner);
    }
    Tape::Node n;
    n.kind = OpKind::concat;
    n.out_numel = out.numel();
    for (auto id : ids)
      if (id >= 0) n.inputs.push_back(id);
    auto outer = v0.outer;
    n.backward = [ids, chunk, outer, out_row](Tape& t, std::int32_t self) {
      auto g = t.grad_of_node(self);
      std::int64_t off2 = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= 0) {
          auto gi = t.grad_acc(ids[i]);
          for (std::int64_t o = 0; o < outer; ++o)
            kern::axpy(1.0, g.data() + o * out_row + off2, gi.data() + o * chunk[i],
                       static_cast<std::size_t>(chunk[i]));
        }
        off2 += chunk[i];
      }
    };
    tp->record(std::move(n), out.storage());
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  auto v = axis_view(x.shape(), axis);
  if (start < 0 || len < 1 || start + len > v.axis)
    throw Error(ErrorCategory::dimension, "slice: range [" + std::to_string(start) + "," +
                                              std::to_string(start + len) + ") out of bounds for " +
                                              shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor out(out_shape, 0.0);
  const double* px = x.ptr();
  double* po = out.ptr();
  for (std::int64_t o = 0; o < v.outer; ++o)
    std::memcpy(po + o * len * v.inner, px + (o * v.axis + start) * v.inner,
                sizeof(double) * static_cast<std::size_t>(len * v.inner));
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::slice, out, [ids, v, start, len](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gx = tp.grad_acc(ids[0]);
      for (std::int64_t o = 0; o < v.outer; ++o)
        kern::axpy(1.0, g.data() + o * len * v.inner, gx.data() + (o * v.axis + start) * v.inner,
                   static_cast<std::size_t>(len * v.inner));
    });
  }
  return out;
}

namespace {

Tensor reduce_axis(const Tensor& x, int axis, bool mean) {
  auto v = axis_view(x.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  const double scale = mean ? 1.0 / static_cast<double>(v.axis) : 1.0;
  Tensor out(out_shape, std::vector<double>(static_cast<std::size_t>(v.outer * v.inner), 0.0));
  const double* px = x.ptr();
  double* po = out.ptr();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t a = 0; a < v.axis; ++a)
      kern::axpy(1.0, px + (o * v.axis + a) * v.inner, po + o * v.inner, static_cast<std::size_t>(v.inner));
  if (mean)
    for (std::int64_t i = 0; i < v.outer * v.inner; ++i) po[i] *= scale;
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(mean ? OpKind::mean_axis : OpKind::sum_axis, out, [ids, v, scale](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gx = tp.grad_acc(ids[0]);
      for (std::int64_t o = 0; o < v.outer; ++o)
        for (std::int64_t a = 0; a < v.axis; ++a)
          kern::axpy(scale, g.data() + o * v.inner, gx.data() + (o * v.axis + a) * v.inner,
                     static_cast<std::size_t>(v.inner));
    });
  }
  check_finite_debug(out, "reduce_axis");
  return out;
}

Tensor reduce_all(const Tensor& x, bool mean) {
  const auto n = static_cast<std::size_t>(x.numel());
  const double scale = mean ? 1.0 / static_cast<double>(n) : 1.0;
  double s = 0.0;
  const double* px = x.ptr();
  for (std::size_t i = 0; i < n; ++i) s += px[i];
  Tensor out = Tensor::scalar(s * scale);
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(mean ? OpKind::mean_all : OpKind::sum_all, out, [ids, n, scale](Tape& tp, std::int32_t self) {
      const double g = tp.grad_of_node(self)[0] * scale;
      auto gx = tp.grad_acc(ids[0]);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  check_finite_debug(out, "reduce_all");
  return out;
}

}  // namespace

Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, false); }
Tensor mean_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, true); }
Tensor sum_all(const Tensor& x) { return reduce_all(x, false); }
Tensor mean_all(const Tensor& x) { return reduce_all(x, true); }

Tensor gelu(const Tensor& x) {
  constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c1 = 0.044715;
  const auto n = static_cast<std::size_t>(x.numel());
  Tensor out(x.shape(), 0.0);
  std::vector<double> u(n), t(n);
  const double* px = x.ptr();
  for (std::size_t i = 0; i < n; ++i) u[i] = c0 * (px[i] + c1 * px[i] * px[i] * px[i]);
  vtanh(u.data(), t.data(), n);
  double* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = 0.5 * px[i] * (1.0 + t[i]);
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    auto sx = x.storage();
    rec.commit(OpKind::gelu, out, [ids, sx, t = std::move(t), n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gx = tp.grad_acc(ids[0]);
      const double* pv = sx->value.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = pv[i];
        const double ti = t[i];
        const double du = c0 * (1.0 + 3.0 * c1 * xi * xi);
        gx[i] += g[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * du);
      }
    });
  }
  check_finite_debug(out, "gelu");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw Error(ErrorCategory::dimension, "layer_norm: rank-0 input");
  const auto d = static_cast<std::size_t>(x.dim(x.rank() - 1));
  if (gamma.rank() != 1 || beta.rank() != 1 || static_cast<std::size_t>(gamma.dim(0)) != d ||
      static_cast<std::size_t>(beta.dim(0)) != d)
    throw Error(ErrorCategory::dimension, "layer_norm: gamma/beta must be [d], d=" + std::to_string(d));
  const auto rows = static_cast<std::size_t>(x.numel()) / d;
  Tensor out(x.shape(), 0.0);
  std::vector<double> xhat(rows * d);
  std::vector<double> inv_std(rows);
  const double* px = x.ptr();
  const double* pg = gamma.ptr();
  const double* pb = beta.ptr();
  double* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);  // population variance
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[r * d + j] = xh;
      po[r * d + j] = pg[j] * xh + pb[j];
    }
  }
  Recorder rec({&x, &gamma, &beta});
  if (rec.on()) {
    auto ids = rec.ids;
    auto sg = gamma.storage();
    rec.commit(OpKind::layer_norm, out,
               [ids, sg, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Tape& tp,
                                                                                        std::int32_t self) {
                 auto g = tp.grad_of_node(self);
                 const double* pgm = sg->value.data();
                 for (std::size_t r = 0; r < rows; ++r) {
                   const double* gr = g.data() + r * d;
                   const double* xh = xhat.data() + r * d;
                   if (ids[1] >= 0) {
                     auto gg = tp.grad_acc(ids[1]);
                     for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                   }
                   if (ids[2] >= 0) {
                     auto gb = tp.grad_acc(ids[2]);
                     for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                   }
                   if (ids[0] >= 0) {
                     auto gx = tp.grad_acc(ids[0]);
                     double mean_a = 0, mean_ax = 0;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double a = gr[j] * pgm[j];
                       mean_a += a;
                       mean_ax += a * xh[j];
                     }
                     mean_a /= static_cast<double>(d);
                     mean_ax /= static_cast<double>(d);
                     const double is = inv_std[r];
                     for (std::size_t j = 0; j < d; ++j) {
                       const double a = gr[j] * pgm[j];
                       gx[r * d + j] += is * (a - mean_a - xh[j] * mean_ax);
                     }
                   }
                 }
               });
  }
  check_finite_debug(out, "layer_norm");
  return out;
}

Tensor softmax_lastdim(const Tensor& z) {
  if (z.rank() < 1) throw Error(ErrorCategory::dimension, "softmax: rank-0 input");
  const auto c = static_cast<std::size_t>(z.dim(z.rank() - 1));
  const auto rows = static_cast<std::size_t>(z.numel()) / c;
  for (double v : z.data())
    if (!std::isfinite(v)) throw Error(ErrorCategory::numeric, "softmax: non-finite input");
  Tensor out(z.shape(), 0.0);
  const double* pz = z.ptr();
  double* po = out.ptr();
  std::vector<double> shifted(c);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = pz + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    for (std::size_t j = 0; j < c; ++j) shifted[j] = row[j] - mx;
    vexp(shifted.data(), po + r * c, c);
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += po[r * c + j];
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < c; ++j) po[r * c + j] *= inv;
  }
  Recorder rec({&z});
  if (rec.on()) {
    auto ids = rec.ids;
    auto so = out.storage();
    rec.commit(OpKind::softmax, out, [ids, so, rows, c](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gz = tp.grad_acc(ids[0]);
      const double* y = so->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y + r * c;
        const double* gr = g.data() + r * c;
        double dotv = kern::dot(gr, yr, c);
        for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += yr[j] * (gr[j] - dotv);
      }
    });
  }
  check_finite_debug(out, "softmax");
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> idx) {
  if (table.rank() != 2) throw Error(ErrorCategory::dimension, "embedding: table must be [V,d]");
  const auto v = table.dim(0);
  const auto d = static_cast<std::size_t>(table.dim(1));
  for (int i : idx)
    if (i < 0 || i >= v) throw Error(ErrorCategory::dimension, "embedding: index out of range");
  Tensor out(Shape{static_cast<std::int64_t>(idx.size()), static_cast<std::int64_t>(d)}, 0.0);
  const double* pt = table.ptr();
  double* po = out.ptr();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(po + i * d, pt + static_cast<std::size_t>(idx[i]) * d, sizeof(double) * d);
  Recorder rec({&table});
  if (rec.on()) {
    auto ids = rec.ids;
    std::vector<int> idx_copy(idx.begin(), idx.end());
    rec.commit(OpKind::embedding, out, [ids, idx_copy = std::move(idx_copy), d](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gt = tp.grad_acc(ids[0]);
      for (std::size_t i = 0; i < idx_copy.size(); ++i)
        kern::axpy(1.0, g.data() + i * d, gt.data() + static_cast<std::size_t>(idx_copy[i]) * d, d);
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  const auto n = static_cast<std::size_t>(x.numel());
  Tensor out(x.shape(), 0.0);
  const double* px = x.ptr();
  double* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    if (px[i] <= 0.0) throw Error(ErrorCategory::numeric, "log: non-positive input");
    po[i] = std::log(px[i]);
  }
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    auto sx = x.storage();
    rec.commit(OpKind::log, out, [ids, sx, n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gx = tp.grad_acc(ids[0]);
      const double* pv = sx->value.data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / pv[i];
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw Error(ErrorCategory::config, "dropout: p must be in [0,1)");
  if (!train || p == 0.0) return x;
  const auto n = static_cast<std::size_t>(x.numel());
  std::vector<double> mask(n);
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.uniform() >= p ? keep : 0.0;
  Tensor out(x.shape(), 0.0);
  const double* px = x.ptr();
  double* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * mask[i];
  Recorder rec({&x});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::dropout, out, [ids, mask = std::move(mask), n](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      auto gx = tp.grad_acc(ids[0]);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor mha(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
           std::span<const unsigned char> key_mask) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape())
    throw Error(ErrorCategory::dimension, "mha: q,k,v must share shape [G,L,D], got " + shape_str(q.shape()));
  const auto G = static_cast<std::size_t>(q.dim(0));
  const auto L = static_cast<std::size_t>(q.dim(1));
  const auto D = static_cast<std::size_t>(q.dim(2));
  if (n_heads < 1 || D % static_cast<std::size_t>(n_heads) != 0)
    throw Error(ErrorCategory::dimension, "mha: D=" + std::to_string(D) + " not divisible by heads");
  if (!key_mask.empty() && key_mask.size() != G * L)
    throw Error(ErrorCategory::dimension, "mha: mask size mismatch");
  const auto H = static_cast<std::size_t>(n_heads);
  const std::size_t dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out(q.shape(), 0.0);
  std::vector<double> attn(G * H * L * L);  // saved softmax weights
  const double* pq = q.ptr();
  const double* pk = k.ptr();
  const double* pv = v.ptr();
  double* po = out.ptr();
  std::vector<double> row(L);
  for (std::size_t g = 0; g < G; ++g) {
    const unsigned char* gm = key_mask.empty() ? nullptr : key_mask.data() + g * L;
    for (std::size_t h = 0; h < H; ++h) {
      double* A = attn.data() + ((g * H + h) * L) * L;
      for (std::size_t i = 0; i < L; ++i) {
        const double* qi = pq + (g * L + i) * D + h * dh;
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          double s = gm && gm[j] ? -1e30 : scale * kern::dot(qi, pk + (g * L + j) * D + h * dh, dh);
          row[j] = s;
          mx = std::max(mx, s);
        }
        for (std::size_t j = 0; j < L; ++j) row[j] -= mx;
        vexp(row.data(), A + i * L, L);
        double s = 0;
        for (std::size_t j = 0; j < L; ++j) s += A[i * L + j];
        const double inv = 1.0 / s;
        double* oi = po + (g * L + i) * D + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          const double w = A[i * L + j] * inv;
          A[i * L + j] = w;
          kern::axpy(w, pv + (g * L + j) * D + h * dh, oi, dh);
        }
      }
    }
  }
  Recorder rec({&q, &k, &v});
  if (rec.on()) {
    auto ids = rec.ids;
    auto sq = q.storage();
    auto sk = k.storage();
    auto sv = v.storage();
    rec.commit(OpKind::mha, out,
               [ids, sq, sk, sv, attn = std::move(attn), G, L, D, H, dh, scale](Tape& tp, std::int32_t self) {
                 auto gout = tp.grad_of_node(self);
                 std::vector<double> dP(L), dS(L);
                 auto gq = ids[0] >= 0 ? tp.grad_acc(ids[0]) : std::span<double>{};
                 auto gk = ids[1] >= 0 ? tp.grad_acc(ids[1]) : std::span<double>{};
                 auto gv = ids[2] >= 0 ? tp.grad_acc(ids[2]) : std::span<double>{};
                 for (std::size_t g = 0; g < G; ++g) {
                   for (std::size_t h = 0; h < H; ++h) {
                     const double* A = attn.data() + ((g * H + h) * L) * L;
                     for (std::size_t i = 0; i < L; ++i) {
                       const double* go = gout.data() + (g * L + i) * D + h * dh;
                       const double* Ai = A + i * L;
                       for (std::size_t j = 0; j < L; ++j) {
                         dP[j] = kern::dot(go, sv->value.data() + (g * L + j) * D + h * dh, dh);
                         if (!gv.empty())
                           kern::axpy(Ai[j], go, gv.data() + (g * L + j) * D + h * dh, dh);
                       }
                       double dotv = kern::dot(dP.data(), Ai, L);
                       for (std::size_t j = 0; j < L; ++j) dS[j] = Ai[j] * (dP[j] - dotv) * scale;
                       for (std::size_t j = 0; j < L; ++j) {
                         if (!gq.empty())
                           kern::axpy(dS[j], sk->value.data() + (g * L + j) * D + h * dh,
                                      gq.data() + (g * L + i) * D + h * dh, dh);
                         if (!gk.empty())
                           kern::axpy(dS[j], sq->value.data() + (g * L + i) * D + h * dh,
                                      gk.data() + (g * L + j) * D + h * dh, dh);
                       }
                     }
                   }
                 }
               });
  }
  check_finite_debug(out, "mha");
  return out;
}

Tensor add_spacetime_pos(const Tensor& x, const Tensor& pos_space, const Tensor& pos_time) {
  if (x.rank() != 2 || pos_space.rank() != 2 || pos_time.rank() != 2)
    throw Error(ErrorCategory::dimension, "add_spacetime_pos: rank mismatch");
  const auto d = x.dim(1);
  const auto P = pos_space.dim(0);
  const auto T = pos_time.dim(0);
  if (pos_space.dim(1) != d || pos_time.dim(1) != d || x.dim(0) != T * P)
    throw Error(ErrorCategory::dimension, "add_spacetime_pos: " + shape_str(x.shape()) + " vs P=" +
                                              std::to_string(P) + " T=" + std::to_string(T));
  Tensor out(x.shape(), 0.0);
  const double* px = x.ptr();
  const double* ps = pos_space.ptr();
  const double* pt = pos_time.ptr();
  double* po = out.ptr();
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t s = 0; s < P; ++s) {
      const std::int64_t r = (t * P + s) * d;
      for (std::int64_t j = 0; j < d; ++j) po[r + j] = px[r + j] + ps[s * d + j] + pt[t * d + j];
    }
  Recorder rec({&x, &pos_space, &pos_time});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::add_spacetime_pos, out, [ids, T, P, d](Tape& tp, std::int32_t self) {
      auto g = tp.grad_of_node(self);
      if (ids[0] >= 0) kern::axpy(1.0, g.data(), tp.grad_acc(ids[0]).data(), g.size());
      if (ids[1] >= 0) {
        auto gs = tp.grad_acc(ids[1]);
        for (std::int64_t t = 0; t < T; ++t)
          for (std::int64_t s = 0; s < P; ++s)
            kern::axpy(1.0, g.data() + (t * P + s) * d, gs.data() + s * d, static_cast<std::size_t>(d));
      }
      if (ids[2] >= 0) {
        auto gt = tp.grad_acc(ids[2]);
        for (std::int64_t t = 0; t < T; ++t)
          for (std::int64_t s = 0; s < P; ++s)
            kern::axpy(1.0, g.data() + (t * P + s) * d, gt.data() + t * d, static_cast<std::size_t>(d));
      }
    });
  }
  return out;
}

Tensor ce_loss(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw Error(ErrorCategory::dimension, "ce_loss: logits must be rank-1");
  const auto c = static_cast<std::size_t>(logits.dim(0));
  if (label < 0 || static_cast<std::size_t>(label) >= c)
    throw Error(ErrorCategory::dimension, "ce_loss: label out of range");
  const double* pz = logits.ptr();
  double mx = pz[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, pz[j]);
  std::vector<double> p(c);
  for (std::size_t j = 0; j < c; ++j) p[j] = pz[j] - mx;
  vexp(p.data(), p.data(), c);
  double s = 0;
  for (std::size_t j = 0; j < c; ++j) s += p[j];
  const double inv = 1.0 / s;
  for (std::size_t j = 0; j < c; ++j) p[j] *= inv;
  const double loss = std::log(s) + mx - pz[static_cast<std::size_t>(label)];
  Tensor out = Tensor::scalar(loss);
  Recorder rec({&logits});
  if (rec.on()) {
    auto ids = rec.ids;
    rec.commit(OpKind::ce_loss, out, [ids, p = std::move(p), label, c](Tape& tp, std::int32_t self) {
      const double g = tp.grad_of_node(self)[0];
      auto gz = tp.grad_acc(ids[0]);
      for (std::size_t j = 0; j < c; ++j) gz[j] += g * (p[j] - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0));
    });
  }
  check_finite_debug(out, "ce_loss");
  return out;
}

Tensor kd_loss_taped(const Tensor& p_student, std::span<const double> p_teacher) {
  if (p_student.rank() != 1 || static_cast<std::size_t>(p_student.dim(0)) != p_teacher.size())
    throw Error(ErrorCategory::dimension,
                "kd_loss: length mismatch " + shape_str(p_student.shape()) + " vs " +
                    std::to_string(p_teacher.size()));
  const auto c = p_teacher.size();
  const double* ps = p_student.ptr();
  double loss = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double pt = p_teacher[j];
    if (pt <= 0.0) continue;
    loss += pt * (std::log(std::max(pt, kProbFloor)) - std::log(std::max(ps[j], kProbFloor)));
  }
  Tensor out = Tensor::scalar(loss);
  Recorder rec({&p_student});
  if (rec.on()) {
    auto ids = rec.ids;
    auto ss = p_student.storage();
    std::vector<double> pt(p_teacher.begin(), p_teacher.end());
    rec.commit(OpKind::kd_loss, out, [ids, ss, pt = std::move(pt), c](Tape& tp, std::int32_t self) {
      const double g = tp.grad_of_node(self)[0];
      auto gs = tp.grad_acc(ids[0]);
      const double* psv = ss->value.data();
      for (std::size_t j = 0; j < c; ++j) {
        if (pt[j] <= 0.0 || psv[j] <= kProbFloor) continue;  // floored region has zero slope
        gs[j] += -g * pt[j] / psv[j];
      }
    });
  }
  check_finite_debug(out, "kd_loss");
  return out;
}

}  // namespace mmdl
