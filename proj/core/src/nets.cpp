#include "mmdl/nets.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmdl/checkpoint.hpp"
#include "mmdl/rng.hpp"

namespace mmdl {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::flow: return "flow";
    case Modality::boxes: return "boxes";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "rgb") return Modality::rgb;
  if (s == "flow") return Modality::flow;
  if (s == "boxes") return Modality::boxes;
  throw Error(ErrorCategory::config, "unknown modality '" + s + "' (rgb|flow|boxes)");
}

void ArchConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_blocks < 1 || mlp_ratio < 1 || patch_size < 1 || n_frames < 1 ||
      n_classes < 2 || in_channels < 1 || image_size < 1 || max_boxes < 1)
    throw Error(ErrorCategory::config, "arch fields must be positive (n_classes >= 2)");
  if (d_model % n_heads != 0)
    throw Error(ErrorCategory::config, "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                           std::to_string(n_heads));
  if (image_size % patch_size != 0)
    throw Error(ErrorCategory::config, "canvas side " + std::to_string(image_size) +
                                           " not divisible by patch_size " + std::to_string(patch_size));
}

std::string ArchConfig::to_descriptor(Modality m) const {
  std::ostringstream os;
  os << "modality=" << to_string(m) << "\n"
     << "d_model=" << d_model << "\n"
     << "n_heads=" << n_heads << "\n"
     << "n_blocks=" << n_blocks << "\n"
     << "mlp_ratio=" << mlp_ratio << "\n"
     << "patch_size=" << patch_size << "\n"
     << "n_frames=" << n_frames << "\n"
     << "n_classes=" << n_classes << "\n"
     << "in_channels=" << in_channels << "\n"
     << "image_size=" << image_size << "\n"
     << "max_boxes=" << max_boxes << "\n";
  return os.str();
}

std::pair<ArchConfig, Modality> ArchConfig::from_descriptor(const std::string& text) {
  ArchConfig a;
  Modality m = Modality::rgb;
  bool saw_modality = false;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCategory::format, "arch descriptor line without '=': " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "modality") {
      m = modality_from_string(val);
      saw_modality = true;
      continue;
    }
    int* field = nullptr;
    if (key == "d_model") field = &a.d_model;
    else if (key == "n_heads") field = &a.n_heads;
    else if (key == "n_blocks") field = &a.n_blocks;
    else if (key == "mlp_ratio") field = &a.mlp_ratio;
    else if (key == "patch_size") field = &a.patch_size;
    else if (key == "n_frames") field = &a.n_frames;
    else if (key == "n_classes") field = &a.n_classes;
    else if (key == "in_channels") field = &a.in_channels;
    else if (key == "image_size") field = &a.image_size;
    else if (key == "max_boxes") field = &a.max_boxes;
    else throw Error(ErrorCategory::format, "unknown arch descriptor key: " + key);
    *field = std::stoi(val);
  }
  if (!saw_modality) throw Error(ErrorCategory::format, "arch descriptor missing modality");
  a.validate();
  return {a, m};
}

Tensor& ModelParams::find(const std::string& name) {
  for (auto& e : entries)
    if (e.name == name) return e.tensor;
  throw Error(ErrorCategory::contract, "missing parameter " + name);
}

const Tensor& ModelParams::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.tensor;
  throw Error(ErrorCategory::contract, "missing parameter " + name);
}

std::int64_t ModelParams::param_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries) n += e.tensor.numel();
  return n;
}

void ModelParams::set_requires_grad(bool v) {
  for (auto& e : entries) e.tensor.set_requires_grad(v);
}

namespace {

enum class Init { matrix, bias, ln_gamma, embed_table };

// name layout shared by init, checkpoint save and load
struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

void push_attention(std::vector<ParamSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".ln_g", {d}, Init::ln_gamma});
  out.push_back({prefix + ".ln_b", {d}, Init::bias});
  out.push_back({prefix + ".wq", {d, d}, Init::matrix});
  out.push_back({prefix + ".bq", {d}, Init::bias});
  out.push_back({prefix + ".wk", {d, d}, Init::matrix});
  out.push_back({prefix + ".bk", {d}, Init::bias});
  out.push_back({prefix + ".wv", {d, d}, Init::matrix});
  out.push_back({prefix + ".bv", {d}, Init::bias});
  out.push_back({prefix + ".wo", {d, d}, Init::matrix});
  out.push_back({prefix + ".bo", {d}, Init::bias});
}

void push_mlp(std::vector<ParamSpec>& out, const std::string& prefix, int d, int ratio) {
  out.push_back({prefix + ".ln_g", {d}, Init::ln_gamma});
  out.push_back({prefix + ".ln_b", {d}, Init::bias});
  out.push_back({prefix + ".w1", {d, d * ratio}, Init::matrix});
  out.push_back({prefix + ".b1", {d * ratio}, Init::bias});
  out.push_back({prefix + ".w2", {d * ratio, d}, Init::matrix});
  out.push_back({prefix + ".b2", {d}, Init::bias});
}

std::vector<ParamSpec> param_layout(const ArchConfig& a, Modality m) {
  std::vector<ParamSpec> out;
  const int d = a.d_model;
  if (m == Modality::boxes) {
    out.push_back({"geom_embed.w", {4, d}, Init::matrix});
    out.push_back({"geom_embed.b", {d}, Init::bias});
    out.push_back({"cat_embed", {3, d}, Init::embed_table});
    out.push_back({"summary_token", {1, d}, Init::embed_table});
    out.push_back({"pos_time", {a.n_frames, d}, Init::embed_table});
    for (int i = 0; i < a.spatial_blocks(); ++i) {
      const std::string p = "sblock" + std::to_string(i);
      push_attention(out, p + ".attn", d);
      push_mlp(out, p + ".mlp", d, a.mlp_ratio);
    }
    for (int i = 0; i < a.temporal_blocks(); ++i) {
      const std::string p = "tblock" + std::to_string(i);
      push_attention(out, p + ".attn", d);
      push_mlp(out, p + ".mlp", d, a.mlp_ratio);
    }
  } else {
    const int patch_dim = a.patch_size * a.patch_size * a.in_channels;
    out.push_back({"patch_embed.w", {patch_dim, d}, Init::matrix});
    out.push_back({"patch_embed.b", {d}, Init::bias});
    out.push_back({"pos_space", {a.n_patches(), d}, Init::embed_table});
    out.push_back({"pos_time", {a.n_frames, d}, Init::embed_table});
    for (int i = 0; i < a.n_blocks; ++i) {
      const std::string p = "block" + std::to_string(i);
      push_attention(out, p + ".t_attn", d);
      push_attention(out, p + ".s_attn", d);
      push_mlp(out, p + ".mlp", d, a.mlp_ratio);
    }
  }
  out.push_back({"final_norm.g", {d}, Init::ln_gamma});
  out.push_back({"final_norm.b", {d}, Init::bias});
  out.push_back({"head.w", {d, a.n_classes}, Init::matrix});
  out.push_back({"head.b", {a.n_classes}, Init::bias});
  return out;
}

}  // namespace

ModelParams init_params(const ArchConfig& arch, Modality modality, std::uint64_t seed) {
  arch.validate();
  if (modality == Modality::flow && arch.in_channels != 2)
    throw Error(ErrorCategory::config, "flow models take 2-channel input");
  ModelParams mp;
  mp.arch = arch;
  mp.modality = modality;
  Rng rng(mix64(seed, fnv1a64("init")));
  for (const auto& spec : param_layout(arch, modality)) {
    Tensor t(spec.shape, 0.0);
    auto data = t.data();
    switch (spec.init) {
      case Init::matrix: {
        const double sigma = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
        for (auto& v : data) v = rng.trunc_normal(sigma);
        break;
      }
      case Init::bias:
        break;  // zeros
      case Init::ln_gamma:
        for (auto& v : data) v = 1.0;
        break;
      case Init::embed_table:
        for (auto& v : data) v = 0.02 * rng.normal();
        break;
    }
    mp.entries.push_back({spec.name, std::move(t)});
  }
  return mp;
}

void save_model(const ModelParams& params, const std::string& path) {
  std::vector<NamedTensor> named;
  named.reserve(params.entries.size());
  for (const auto& e : params.entries) named.push_back({e.name, e.tensor});
  save_checkpoint(path, named);
  auto desc = params.arch.to_descriptor(params.modality);
  std::vector<unsigned char> bytes(desc.begin(), desc.end());
  wire::write_file(path + ".arch", bytes);
}

ModelParams load_model(const std::string& path) {
  std::vector<unsigned char> desc_bytes;
  try {
    desc_bytes = wire::read_file(path + ".arch");
  } catch (const Error&) {
    throw Error(ErrorCategory::checkpoint, "missing arch descriptor " + path + ".arch");
  }
  auto [arch, modality] = ArchConfig::from_descriptor(std::string(desc_bytes.begin(), desc_bytes.end()));
  auto named = load_checkpoint(path);

  ModelParams mp;
  mp.arch = arch;
  mp.modality = modality;
  auto layout = param_layout(arch, modality);
  if (layout.size() != named.size())
    throw Error(ErrorCategory::checkpoint, path + ": expected " + std::to_string(layout.size()) +
                                               " tensors, found " + std::to_string(named.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (named[i].name != layout[i].name)
      throw Error(ErrorCategory::checkpoint,
                  path + ": tensor " + std::to_string(i) + " is '" + named[i].name + "', expected '" +
                      layout[i].name + "'");
    if (named[i].tensor.shape() != layout[i].shape)
      throw Error(ErrorCategory::checkpoint, path + ": tensor " + named[i].name + " has shape " +
                                                 shape_str(named[i].tensor.shape()) + ", expected " +
                                                 shape_str(layout[i].shape));
    mp.entries.push_back({named[i].name, named[i].tensor});
  }
  return mp;
}

namespace {

// pre-norm attention sublayer shared by both models; `group` describes how
// the [N,d] token matrix factors into attention groups
struct AttnWeights {
  const Tensor *ln_g, *ln_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

AttnWeights attn_weights(const ModelParams& p, const std::string& prefix) {
  return {&p.find(prefix + ".ln_g"), &p.find(prefix + ".ln_b"), &p.find(prefix + ".wq"),
          &p.find(prefix + ".bq"),   &p.find(prefix + ".wk"),   &p.find(prefix + ".bk"),
          &p.find(prefix + ".wv"),   &p.find(prefix + ".bv"),   &p.find(prefix + ".wo"),
          &p.find(prefix + ".bo")};
}

// x: [N,d] with N = G*L laid out group-major unless transpose_groups, in
// which case rows are t*G + g and get regrouped as [G,L,d] via transpose.
Tensor attention_sublayer(const Tensor& x, const AttnWeights& w, int n_heads, std::int64_t G,
                          std::int64_t L, bool transposed_layout,
                          std::span<const unsigned char> key_mask = {}) {
  const auto d = x.dim(1);
  Tensor y = layer_norm(x, *w.ln_g, *w.ln_b);
  Tensor q = add_rowvec(matmul(y, *w.wq), *w.bq);
  Tensor k = add_rowvec(matmul(y, *w.wk), *w.bk);
  Tensor v = add_rowvec(matmul(y, *w.wv), *w.bv);
  if (transposed_layout) {
    q = transpose(reshape(q, {L, G, d}), 0, 1);
    k = transpose(reshape(k, {L, G, d}), 0, 1);
    v = transpose(reshape(v, {L, G, d}), 0, 1);
  } else {
    q = reshape(q, {G, L, d});
    k = reshape(k, {G, L, d});
    v = reshape(v, {G, L, d});
  }
  Tensor a = mha(q, k, v, n_heads, key_mask);
  if (transposed_layout)
    a = reshape(transpose(a, 0, 1), {G * L, d});
  else
    a = reshape(a, {G * L, d});
  return add_rowvec(matmul(a, *w.wo), *w.bo);
}

Tensor mlp_sublayer(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  Tensor y = layer_norm(x, p.find(prefix + ".ln_g"), p.find(prefix + ".ln_b"));
  Tensor h = gelu(add_rowvec(matmul(y, p.find(prefix + ".w1")), p.find(prefix + ".b1")));
  return add_rowvec(matmul(h, p.find(prefix + ".w2")), p.find(prefix + ".b2"));
}

Tensor classifier_head(const Tensor& tokens, const ModelParams& p) {
  Tensor x = layer_norm(tokens, p.find("final_norm.g"), p.find("final_norm.b"));
  Tensor pooled = reshape(mean_axis(x, 0), {1, x.dim(1)});
  Tensor logits = add_rowvec(matmul(pooled, p.find("head.w")), p.find("head.b"));
  return reshape(logits, {p.arch.n_classes});
}

}  // namespace

Tensor frame_model_forward(const ModelParams& params, const Tensor& clip, const ForwardHooks* hooks) {
  const auto& a = params.arch;
  if (params.modality == Modality::boxes)
    throw Error(ErrorCategory::config, "frame_model_forward on a box model");
  if (clip.rank() != 4)
    throw Error(ErrorCategory::dimension, "clip must be [T,H,W,C], got " + shape_str(clip.shape()));
  const auto T = clip.dim(0), H = clip.dim(1), W = clip.dim(2), C = clip.dim(3);
  if (T != a.n_frames || H != a.image_size || W != a.image_size || C != a.in_channels ||
      H % a.patch_size != 0 || W % a.patch_size != 0)
    throw Error(ErrorCategory::dimension,
                "clip " + shape_str(clip.shape()) + " does not match arch (T=" + std::to_string(a.n_frames) +
                    ", side=" + std::to_string(a.image_size) + ", C=" + std::to_string(a.in_channels) +
                    ", patch=" + std::to_string(a.patch_size) + ")");

  // patchify; the clip is constant input, so this is plain data movement
  const int side = a.image_size / a.patch_size;
  const int P = a.n_patches();
  const int pd = a.patch_size * a.patch_size * a.in_channels;
  Tensor patches(Shape{T * P, pd}, 0.0);
  {
    const double* src = clip.ptr();
    double* dst = patches.ptr();
    for (std::int64_t t = 0; t < T; ++t)
      for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
          double* row = dst + ((t * P) + py * side + px) * pd;
          for (int y = 0; y < a.patch_size; ++y)
            for (int x = 0; x < a.patch_size; ++x) {
              const std::int64_t iy = py * a.patch_size + y;
              const std::int64_t ix = px * a.patch_size + x;
              const double* pix = src + ((t * H + iy) * W + ix) * C;
              for (int c = 0; c < a.in_channels; ++c)
                row[(y * a.patch_size + x) * a.in_channels + c] = pix[c];
            }
        }
  }

  Tensor x = add_rowvec(matmul(patches, params.find("patch_embed.w")), params.find("patch_embed.b"));
  x = add_spacetime_pos(x, params.find("pos_space"), params.find("pos_time"));

  const bool identity_attn = hooks && hooks->identity_attention;
  for (int b = 0; b < a.n_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    if (!identity_attn) {
      // temporal: attend across frames within each patch position
      x = add(x, attention_sublayer(x, attn_weights(params, prefix + ".t_attn"), a.n_heads,
                                    /*G=*/P, /*L=*/T, /*transposed_layout=*/true));
      // spatial: attend across patch positions within each frame
      x = add(x, attention_sublayer(x, attn_weights(params, prefix + ".s_attn"), a.n_heads,
                                    /*G=*/T, /*L=*/P, /*transposed_layout=*/false));
    }
    x = add(x, mlp_sublayer(x, params, prefix + ".mlp"));
  }
  return classifier_head(x, params);
}

Tensor box_model_forward(const ModelParams& params, const std::vector<std::vector<BoxToken>>& frames) {
  const auto& a = params.arch;
  if (params.modality != Modality::boxes)
    throw Error(ErrorCategory::config, "box_model_forward on a frame model");
  if (static_cast<int>(frames.size()) != a.n_frames)
    throw Error(ErrorCategory::contract, "expected " + std::to_string(a.n_frames) + " frame groups, got " +
                                             std::to_string(frames.size()));
  const int T = a.n_frames;
  const int MB = a.max_boxes;
  const int d = a.d_model;
  const int S = 1 + MB;  // summary token + box slots

  std::vector<double> geom(static_cast<std::size_t>(T * MB * 4), 0.0);
  std::vector<int> cat_idx(static_cast<std::size_t>(T * MB), static_cast<int>(BoxCategory::padding));
  std::vector<unsigned char> mask(static_cast<std::size_t>(T * S), 0);
  for (int t = 0; t < T; ++t) {
    const auto& group = frames[static_cast<std::size_t>(t)];
    if (static_cast<int>(group.size()) > MB)
      throw Error(ErrorCategory::contract, "frame " + std::to_string(t) + " has " +
                                               std::to_string(group.size()) + " tokens, max_boxes=" +
                                               std::to_string(MB));
    for (int j = 0; j < MB; ++j) {
      const std::size_t gi = static_cast<std::size_t>(t * MB + j);
      if (j < static_cast<int>(group.size()) && group[static_cast<std::size_t>(j)].category != BoxCategory::padding) {
        const auto& tok = group[static_cast<std::size_t>(j)];
        geom[gi * 4 + 0] = tok.cx;
        geom[gi * 4 + 1] = tok.cy;
        geom[gi * 4 + 2] = tok.w;
        geom[gi * 4 + 3] = tok.h;
        cat_idx[gi] = static_cast<int>(tok.category);
      } else {
        mask[static_cast<std::size_t>(t * S + 1 + j)] = 1;  // padding keys never attended
      }
    }
  }

  Tensor geom_t(Shape{T * MB, 4}, std::move(geom));
  Tensor box_emb = add(add_rowvec(matmul(geom_t, params.find("geom_embed.w")), params.find("geom_embed.b")),
                       embedding(params.find("cat_embed"), cat_idx));
  // one learned summary token per frame, shared weights
  Tensor ones(Shape{T, 1}, 1.0);
  Tensor summaries = matmul(ones, params.find("summary_token"));

  Tensor x = concat({reshape(summaries, {T, 1, d}), reshape(box_emb, {T, MB, d})}, 1);
  x = reshape(x, {static_cast<std::int64_t>(T) * S, d});

  for (int b = 0; b < a.spatial_blocks(); ++b) {
    const std::string prefix = "sblock" + std::to_string(b);
    x = add(x, attention_sublayer(x, attn_weights(params, prefix + ".attn"), a.n_heads,
                                  /*G=*/T, /*L=*/S, /*transposed_layout=*/false, mask));
    x = add(x, mlp_sublayer(x, params, prefix + ".mlp"));
  }

  // keep each frame's summary position, drop the box tokens
  Tensor summary_seq = reshape(slice(reshape(x, {T, S, d}), 1, 0, 1), {T, d});
  Tensor xt = add(summary_seq, params.find("pos_time"));
  for (int b = 0; b < a.temporal_blocks(); ++b) {
    const std::string prefix = "tblock" + std::to_string(b);
    xt = add(xt, attention_sublayer(xt, attn_weights(params, prefix + ".attn"), a.n_heads,
                                    /*G=*/1, /*L=*/T, /*transposed_layout=*/false));
    xt = add(xt, mlp_sublayer(xt, params, prefix + ".mlp"));
  }
  return classifier_head(xt, params);
}

}  // namespace mmdl
