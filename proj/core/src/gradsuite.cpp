#include "mmdl/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "mmdl/gradcheck.hpp"
#include "mmdl/nets.hpp"
#include "mmdl/ops.hpp"
#include "mmdl/rng.hpp"
#include "mmdl/synthworld.hpp"
#include "mmdl/tape.hpp"

namespace mmdl {

namespace {

constexpr double kOpTol = 1e-4;
constexpr double kModelTol = 1e-3;
// central differences: h = 1e-5 balances truncation against roundoff for
// unit-scale values (the spec's named examples pin their own h)
constexpr double kStep = 1e-5;

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Shape rand_shape(Rng& rng, int max_rank = 3, int max_dim = 6) {
  const int rank = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_rank)));
  Shape s;
  for (int i = 0; i < rank; ++i)
    s.push_back(1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(max_dim))));
  return s;
}

struct Case {
  std::string name;
  // returns max rel err for one random instance
  std::function<double(Rng&)> run;
};

double check(const std::function<Tensor(const Tensor&)>& f, Tensor x) {
  return finite_diff_gradcheck(f, std::move(x), kStep);
}

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::function<double(Rng&)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  add_case("matmul.lhs", [](Rng& rng) {
    const int m = 1 + static_cast<int>(rng.uniform_int(5)), k = 1 + static_cast<int>(rng.uniform_int(5)),
              n = 1 + static_cast<int>(rng.uniform_int(5));
    Tensor b = rand_tensor(rng, {k, n});
    return check([&](const Tensor& x) { return sum_all(matmul(x, b)); }, rand_tensor(rng, {m, k}));
  });
  add_case("matmul.rhs", [](Rng& rng) {
    const int m = 1 + static_cast<int>(rng.uniform_int(5)), k = 1 + static_cast<int>(rng.uniform_int(5)),
              n = 1 + static_cast<int>(rng.uniform_int(5));
    Tensor a = rand_tensor(rng, {m, k});
    return check([&](const Tensor& x) { return sum_all(matmul(a, x)); }, rand_tensor(rng, {k, n}));
  });
  add_case("add", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor b = rand_tensor(rng, s);
    return check([&](const Tensor& x) { return sum_all(mul(add(x, b), b)); }, rand_tensor(rng, s));
  });
  add_case("sub", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor b = rand_tensor(rng, s);
    return check([&](const Tensor& x) { return sum_all(mul(sub(x, b), b)); }, rand_tensor(rng, s));
  });
  add_case("mul.both", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor b = rand_tensor(rng, s);
    b.set_requires_grad(true);
    return check([&](const Tensor& x) { return sum_all(mul(x, mul(x, b))); }, rand_tensor(rng, s));
  });
  add_case("scalar_ops", [](Rng& rng) {
    Shape s = rand_shape(rng);
    const double c = rng.uniform(-2, 2);
    return check([&](const Tensor& x) { return sum_all(scalar_add(scalar_mul(x, c), 0.5)); },
                 rand_tensor(rng, s));
  });
  add_case("add_rowvec.x", [](Rng& rng) {
    const int r = 1 + static_cast<int>(rng.uniform_int(5)), d = 1 + static_cast<int>(rng.uniform_int(6));
    Tensor b = rand_tensor(rng, {d});
    return check([&](const Tensor& x) { return sum_all(mul(add_rowvec(x, b), add_rowvec(x, b))); },
                 rand_tensor(rng, {r, d}));
  });
  add_case("add_rowvec.b", [](Rng& rng) {
    const int r = 1 + static_cast<int>(rng.uniform_int(5)), d = 1 + static_cast<int>(rng.uniform_int(6));
    Tensor a = rand_tensor(rng, {r, d});
    return check([&](const Tensor& x) { return sum_all(mul(add_rowvec(a, x), add_rowvec(a, x))); },
                 rand_tensor(rng, {d}));
  });
  add_case("reshape", [](Rng& rng) {
    const int a = 2 + static_cast<int>(rng.uniform_int(3)), b = 2 + static_cast<int>(rng.uniform_int(3));
    Tensor w = rand_tensor(rng, {a * b});
    return check(
        [&, a, b](const Tensor& x) { return sum_all(mul(reshape(x, {static_cast<std::int64_t>(a) * b}), w)); },
        rand_tensor(rng, {a, b}));
  });
  add_case("transpose", [](Rng& rng) {
    const int a = 2 + static_cast<int>(rng.uniform_int(3)), b = 2 + static_cast<int>(rng.uniform_int(3)),
              c = 2 + static_cast<int>(rng.uniform_int(3));
    Tensor w = rand_tensor(rng, {b, a, c});
    return check([&](const Tensor& x) { return sum_all(mul(transpose(x, 0, 1), w)); },
                 rand_tensor(rng, {a, b, c}));
  });
  add_case("concat", [](Rng& rng) {
    const int a = 1 + static_cast<int>(rng.uniform_int(3)), b = 1 + static_cast<int>(rng.uniform_int(3)),
              d = 1 + static_cast<int>(rng.uniform_int(5));
    Tensor other = rand_tensor(rng, {b, d});
    other.set_requires_grad(true);
    Tensor w = rand_tensor(rng, {a + b, d});
    return check([&](const Tensor& x) { return sum_all(mul(concat({x, other}, 0), w)); },
                 rand_tensor(rng, {a, d}));
  });
  add_case("slice", [](Rng& rng) {
    const int a = 3 + static_cast<int>(rng.uniform_int(3)), d = 1 + static_cast<int>(rng.uniform_int(5));
    const int start = static_cast<int>(rng.uniform_int(2));
    const int len = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(a - start - 1)));
    Tensor w = rand_tensor(rng, {len, d});
    return check([&](const Tensor& x) { return sum_all(mul(slice(x, 0, start, len), w)); },
                 rand_tensor(rng, {a, d}));
  });
  add_case("sum_axis", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    const int axis = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s.size())));
    return check([&](const Tensor& x) { return sum_all(mul(sum_axis(x, axis), sum_axis(x, axis))); },
                 rand_tensor(rng, s));
  });
  add_case("mean_axis", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    const int axis = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s.size())));
    return check([&](const Tensor& x) { return sum_all(mul(mean_axis(x, axis), mean_axis(x, axis))); },
                 rand_tensor(rng, s));
  });
  add_case("mean_all", [](Rng& rng) {
    return check([](const Tensor& x) { return mean_all(mul(x, x)); }, rand_tensor(rng, rand_shape(rng)));
  });
  add_case("gelu", [](Rng& rng) {
    return check([](const Tensor& x) { return sum_all(gelu(x)); }, rand_tensor(rng, rand_shape(rng)));
  });
  add_case("layer_norm.x", [](Rng& rng) {
    const int r = 1 + static_cast<int>(rng.uniform_int(4)), d = 2 + static_cast<int>(rng.uniform_int(5));
    Tensor g = rand_tensor(rng, {d}, 0.5, 1.5);
    Tensor b = rand_tensor(rng, {d}, -0.5, 0.5);
    Tensor w = rand_tensor(rng, {r, d});
    return check([&](const Tensor& x) { return sum_all(mul(layer_norm(x, g, b), w)); },
                 rand_tensor(rng, {r, d}));
  });
  add_case("layer_norm.gamma_beta", [](Rng& rng) {
    const int r = 1 + static_cast<int>(rng.uniform_int(4)), d = 2 + static_cast<int>(rng.uniform_int(5));
    Tensor xin = rand_tensor(rng, {r, d});
    Tensor b = rand_tensor(rng, {d}, -0.5, 0.5);
    b.set_requires_grad(true);
    Tensor w = rand_tensor(rng, {r, d});
    return check([&](const Tensor& g) { return sum_all(mul(layer_norm(xin, g, b), w)); },
                 rand_tensor(rng, {d}, 0.5, 1.5));
  });
  add_case("softmax", [](Rng& rng) {
    const int r = 1 + static_cast<int>(rng.uniform_int(4)), c = 2 + static_cast<int>(rng.uniform_int(5));
    Tensor w = rand_tensor(rng, {r, c});
    return check([&](const Tensor& x) { return sum_all(mul(softmax_lastdim(x), w)); },
                 rand_tensor(rng, {r, c}));
  });
  add_case("embedding", [](Rng& rng) {
    const int v = 3 + static_cast<int>(rng.uniform_int(4)), d = 1 + static_cast<int>(rng.uniform_int(5));
    std::vector<int> idx;
    for (int i = 0; i < 4; ++i)
      idx.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(v))));
    Tensor w = rand_tensor(rng, {4, d});
    return check([&](const Tensor& table) { return sum_all(mul(embedding(table, idx), w)); },
                 rand_tensor(rng, {v, d}));
  });
  add_case("log", [](Rng& rng) {
    return check([](const Tensor& x) { return sum_all(log(x)); },
                 rand_tensor(rng, rand_shape(rng), 0.2, 2.0));
  });
  add_case("dropout", [](Rng& rng) {
    // a fixed mask seed keeps the function differentiable at x
    const std::uint64_t mask_seed = rng.bits();
    Shape s = rand_shape(rng);
    return check(
        [mask_seed](const Tensor& x) {
          Rng mask_rng(mask_seed);
          return sum_all(dropout(x, 0.3, mask_rng, true));
        },
        rand_tensor(rng, s));
  });
  for (const char* which : {"q", "k", "v"}) {
    add_case(std::string("mha.") + which, [which](Rng& rng) {
      const int G = 1 + static_cast<int>(rng.uniform_int(2)), L = 2 + static_cast<int>(rng.uniform_int(3));
      const int H = 2, D = 4;
      Tensor q = rand_tensor(rng, {G, L, D}, -1, 1);
      Tensor k = rand_tensor(rng, {G, L, D}, -1, 1);
      Tensor v = rand_tensor(rng, {G, L, D}, -1, 1);
      Tensor w = rand_tensor(rng, {G, L, D});
      auto f = [&](const Tensor& x) {
        const Tensor& qq = which[0] == 'q' ? x : q;
        const Tensor& kk = which[0] == 'k' ? x : k;
        const Tensor& vv = which[0] == 'v' ? x : v;
        return sum_all(mul(mha(qq, kk, vv, H), w));
      };
      Tensor x0 = which[0] == 'q' ? q.clone() : which[0] == 'k' ? k.clone() : v.clone();
      return check(f, x0);
    });
  }
  add_case("add_spacetime_pos", [](Rng& rng) {
    const int T = 2, P = 3, d = 4;
    Tensor ps = rand_tensor(rng, {P, d});
    Tensor pt = rand_tensor(rng, {T, d});
    ps.set_requires_grad(true);
    pt.set_requires_grad(true);
    Tensor w = rand_tensor(rng, {T * P, d});
    return check([&](const Tensor& x) { return sum_all(mul(add_spacetime_pos(x, ps, pt), w)); },
                 rand_tensor(rng, {T * P, d}));
  });
  add_case("ce_loss", [](Rng& rng) {
    const int c = 3 + static_cast<int>(rng.uniform_int(5));
    const int label = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(c)));
    return check([label](const Tensor& x) { return ce_loss(x, label); }, rand_tensor(rng, {c}));
  });
  add_case("kd_loss", [](Rng& rng) {
    const int c = 3 + static_cast<int>(rng.uniform_int(5));
    Tensor a = rand_tensor(rng, {c});
    std::vector<double> p_t(static_cast<std::size_t>(c));
    {
      double mx = -1e300, sum = 0;
      for (auto v : a.data()) mx = std::max(mx, v);
      for (std::size_t i = 0; i < p_t.size(); ++i) {
        p_t[i] = std::exp(a.data()[i] - mx);
        sum += p_t[i];
      }
      for (auto& v : p_t) v /= sum;
    }
    return check([&](const Tensor& b) { return kd_loss_taped(softmax_lastdim(b), p_t); },
                 rand_tensor(rng, {c}));
  });
  // the spec's named composite cases
  add_case("sum_of_product", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor y = rand_tensor(rng, s);
    y.set_requires_grad(true);
    return check([&](const Tensor& x) { return sum_all(mul(x, y)); }, rand_tensor(rng, s));
  });
  add_case("mean_of_matmul", [](Rng& rng) {
    const int m = 2 + static_cast<int>(rng.uniform_int(4)), k = 2 + static_cast<int>(rng.uniform_int(4)),
              n = 2 + static_cast<int>(rng.uniform_int(4));
    Tensor x0 = rand_tensor(rng, {m, k});
    x0.set_requires_grad(true);
    return check([&](const Tensor& w) { return mean_all(matmul(x0, w)); }, rand_tensor(rng, {k, n}));
  });
  return cases;
}

GradSuiteEntry model_case(const char* name, Modality modality) {
  ArchConfig tiny;
  tiny.d_model = 8;
  tiny.n_heads = 2;
  tiny.n_blocks = 1;
  tiny.mlp_ratio = 2;
  tiny.patch_size = 4;
  tiny.n_frames = 2;
  tiny.n_classes = 5;
  tiny.in_channels = modality == Modality::flow ? 2 : 3;
  tiny.image_size = 8;
  tiny.max_boxes = 3;

  ModelParams params = init_params(tiny, modality, 7);
  Rng rng(11);

  std::function<Tensor()> f;
  if (modality == Modality::boxes) {
    std::vector<std::vector<BoxToken>> frames(static_cast<std::size_t>(tiny.n_frames));
    for (auto& group : frames) {
      BoxToken target{0.4, 0.5, 0.2, 0.25, BoxCategory::target};
      BoxToken distractor{0.7, 0.3, 0.15, 0.2, BoxCategory::distractor};
      group = {target, distractor};
    }
    f = [params, frames]() { return ce_loss(box_model_forward(params, frames), 2); };
  } else {
    Tensor clip(Shape{tiny.n_frames, tiny.image_size, tiny.image_size, tiny.in_channels}, 0.0);
    for (auto& v : clip.data()) v = rng.uniform(0.0, 1.0);
    f = [params, clip]() { return ce_loss(frame_model_forward(params, clip), 1); };
  }
  std::vector<Tensor> leaves;
  for (auto& e : params.entries) leaves.push_back(e.tensor);
  GradSuiteEntry entry;
  entry.name = name;
  entry.tolerance = kModelTol;
  entry.max_rel_err = finite_diff_gradcheck_many(f, leaves, kStep);
  return entry;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(bool include_models, int instances_per_op) {
  std::vector<GradSuiteEntry> out;
  for (auto& c : op_cases()) {
    Rng rng(mix64(fnv1a64(c.name), 1234));
    GradSuiteEntry entry;
    entry.name = c.name;
    entry.tolerance = kOpTol;
    for (int i = 0; i < instances_per_op; ++i) entry.max_rel_err = std::max(entry.max_rel_err, c.run(rng));
    out.push_back(std::move(entry));
  }
  if (include_models) {
    out.push_back(model_case("model.frame_rgb", Modality::rgb));
    out.push_back(model_case("model.frame_flow", Modality::flow));
    out.push_back(model_case("model.boxes", Modality::boxes));
  }
  return out;
}

}  // namespace mmdl
