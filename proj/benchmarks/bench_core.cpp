#include <benchmark/benchmark.h>

#include "mmdl/distill.hpp"
#include "mmdl/fastmath.hpp"
#include "mmdl/kernels.hpp"
#include "mmdl/nets.hpp"
#include "mmdl/ops.hpp"
#include "mmdl/rng.hpp"
#include "mmdl/tape.hpp"

namespace {

using namespace mmdl;

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

void BM_matmul(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = 64, n = 64;
  auto a = rand_vec(static_cast<std::size_t>(m) * k, 1);
  auto b = rand_vec(static_cast<std::size_t>(k) * n, 2);
  std::vector<double> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    kern::mm(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m) * k * n);
}
BENCHMARK(BM_matmul)->Arg(128)->Arg(256);

void BM_matmul_backward(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), k = 64, n = 64;
  auto dy = rand_vec(static_cast<std::size_t>(m) * n, 1);
  auto a = rand_vec(static_cast<std::size_t>(m) * k, 2);
  auto b = rand_vec(static_cast<std::size_t>(k) * n, 3);
  std::vector<double> da(static_cast<std::size_t>(m) * k), db(static_cast<std::size_t>(k) * n);
  for (auto _ : state) {
    kern::mm_bt_acc(dy.data(), b.data(), da.data(), m, n, k);
    kern::mm_at_acc(a.data(), dy.data(), db.data(), m, k, n);
    benchmark::DoNotOptimize(da.data());
    benchmark::DoNotOptimize(db.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(m) * k * n);
}
BENCHMARK(BM_matmul_backward)->Arg(128)->Arg(256);

void BM_vtanh(benchmark::State& state) {
  auto x = rand_vec(static_cast<std::size_t>(state.range(0)), 4);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    vtanh(x.data(), y.data(), x.size());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_vtanh)->Arg(32768);

void BM_frame_forward(benchmark::State& state) {
  ArchConfig arch;
  ModelParams params = init_params(arch, Modality::rgb, 1);
  Rng rng(5);
  Tensor clip(Shape{arch.n_frames, arch.image_size, arch.image_size, 3}, 0.0);
  for (auto& v : clip.data()) v = rng.uniform(0, 1);
  for (auto _ : state) {
    Tensor logits = frame_model_forward(params, clip);
    benchmark::DoNotOptimize(logits.ptr());
  }
}
BENCHMARK(BM_frame_forward);

void BM_frame_train_step(benchmark::State& state) {
  ArchConfig arch;
  ModelParams params = init_params(arch, Modality::rgb, 1);
  params.set_requires_grad(true);
  Rng rng(5);
  Tensor clip(Shape{arch.n_frames, arch.image_size, arch.image_size, 3}, 0.0);
  for (auto& v : clip.data()) v = rng.uniform(0, 1);
  for (auto _ : state) {
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = ce_loss(frame_model_forward(params, clip), 3);
      tape.backward_no_flush(loss);
    }
    benchmark::DoNotOptimize(&tape);
  }
}
BENCHMARK(BM_frame_train_step);

}  // namespace
namespace {

void BM_op_linear(benchmark::State& state) {
  Rng rng(1);
  Tensor x(Shape{128, 64}, 0.0);
  Tensor w(Shape{64, 64}, 0.0);
  Tensor b(Shape{64}, 0.0);
  for (auto& v : x.data()) v = rng.uniform(-1, 1);
  for (auto& v : w.data()) v = rng.uniform(-1, 1);
  for (auto _ : state) {
    Tensor y = add_rowvec(matmul(x, w), b);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_op_linear);

void BM_op_gelu(benchmark::State& state) {
  Rng rng(1);
  Tensor x(Shape{128, 256}, 0.0);
  for (auto& v : x.data()) v = rng.uniform(-2, 2);
  for (auto _ : state) {
    Tensor y = gelu(x);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_op_gelu);

void BM_op_layernorm(benchmark::State& state) {
  Rng rng(1);
  Tensor x(Shape{128, 64}, 0.0);
  Tensor g(Shape{64}, 1.0);
  Tensor b(Shape{64}, 0.0);
  for (auto& v : x.data()) v = rng.uniform(-1, 1);
  for (auto _ : state) {
    Tensor y = layer_norm(x, g, b);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_op_layernorm);

void BM_op_mha_temporal(benchmark::State& state) {
  Rng rng(1);
  Tensor q(Shape{16, 8, 64}, 0.0), k(Shape{16, 8, 64}, 0.0), v(Shape{16, 8, 64}, 0.0);
  for (auto& t : {&q, &k, &v})
    for (auto& x : t->data()) x = rng.uniform(-1, 1);
  for (auto _ : state) {
    Tensor y = mha(q, k, v, 4);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_op_mha_temporal);

void BM_op_transpose_reshape(benchmark::State& state) {
  Rng rng(1);
  Tensor x(Shape{8, 16, 64}, 0.0);
  for (auto& v : x.data()) v = rng.uniform(-1, 1);
  for (auto _ : state) {
    Tensor y = reshape(transpose(x, 0, 1), {128, 64});
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_op_transpose_reshape);

void BM_op_softmax_small_rows(benchmark::State& state) {
  Rng rng(1);
  Tensor x(Shape{64, 8}, 0.0);
  for (auto& v : x.data()) v = rng.uniform(-1, 1);
  for (auto _ : state) {
    Tensor y = softmax_lastdim(x);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_op_softmax_small_rows);

void BM_tensor_alloc(benchmark::State& state) {
  for (auto _ : state) {
    Tensor t(Shape{128, 64}, 0.0);
    benchmark::DoNotOptimize(t.ptr());
  }
}
BENCHMARK(BM_tensor_alloc);

}  // namespace

BENCHMARK_MAIN();
