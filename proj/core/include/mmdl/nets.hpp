#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmdl/ops.hpp"
#include "mmdl/tensor.hpp"

namespace mmdl {

enum class Modality { rgb, flow, boxes };

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ArchConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_blocks = 4;
  int mlp_ratio = 4;
  int patch_size = 8;
  int n_frames = 8;
  int n_classes = 12;
  int in_channels = 3;  // 3 for frames/canvas, 2 for flow
  int image_size = 32;  // canvas side fed to the model
  int max_boxes = 4;    // box tokens per frame (1 target + distractors)

  int n_patches() const {
    const int side = image_size / patch_size;
    return side * side;
  }
  // the box model splits its depth into a spatial and a temporal stage
  int spatial_blocks() const { return (n_blocks + 1) / 2; }
  int temporal_blocks() const { return (n_blocks + 1) / 2; }

  void validate() const;

  std::string to_descriptor(Modality m) const;  // key=value lines
  static std::pair<ArchConfig, Modality> from_descriptor(const std::string& text);
};

enum class BoxCategory : unsigned char { padding = 0, target = 1, distractor = 2 };

struct BoxToken {
  double cx = 0, cy = 0, w = 0, h = 0;  // normalized to [0,1]
  BoxCategory category = BoxCategory::padding;
};

// Full parameter set of one classifier; names are stable and define both the
// init stream order and the checkpoint layout.
struct ModelParams {
  ArchConfig arch;
  Modality modality = Modality::rgb;

  struct Entry {
    std::string name;
    Tensor tensor;
  };
  std::vector<Entry> entries;

  Tensor& find(const std::string& name);
  const Tensor& find(const std::string& name) const;
  std::int64_t param_count() const;
  void set_requires_grad(bool v);
};

ModelParams init_params(const ArchConfig& arch, Modality modality, std::uint64_t seed);

// checkpoint + plain-text arch descriptor sidecar (<path>.arch)
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

struct ForwardHooks {
  bool identity_attention = false;  // test hook: attention sublayers pass through
};

// clip: [T,H,W,Cin]; divided space-time blocks (temporal attention, then
// spatial, then MLP, all pre-norm residual), mean-pooled classifier head.
Tensor frame_model_forward(const ModelParams& params, const Tensor& clip,
                           const ForwardHooks* hooks = nullptr);

// tokens grouped by frame, at most max_boxes per frame (shorter groups are
// padded). Spatial attention per frame feeds one summary token per frame;
// temporal attention runs over the summaries.
Tensor box_model_forward(const ModelParams& params, const std::vector<std::vector<BoxToken>>& frames);

}  // namespace mmdl
