#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdl/nets.hpp"
#include "mmdl/rng.hpp"
#include "mmdl/synthworld.hpp"

namespace mmdl {

struct DistillConfig {
  double tau = 10.0;
  bool scale_loss_by_tau_sq = true;
  double hard_label_weight = 0.0;  // ablation only; the default objective is pure KL

  void validate() const;
};

using ProbVec = std::vector<double>;
using LogitVec = std::vector<double>;

// normalize(p^(1/tau)); inputs floored at 1e-12 before scaling, ranking
// preserved for every tau > 0.
ProbVec temperature_scale(const ProbVec& p, double tau);

// KL(p_t || p_s) with both sides floored at 1e-12 inside the logs. The tau^2
// scaling, when enabled, is applied by the caller.
double kd_loss(const ProbVec& p_t, const ProbVec& p_s);

LogitVec ensemble_logits(const std::vector<LogitVec>& members);

ProbVec softmax(const LogitVec& z);

struct TeacherMember {
  std::string checkpoint_path;
  Modality modality;
};

struct TeacherSpec {
  std::vector<TeacherMember> members;

  void validate() const;  // 1..3 members, no duplicate modalities
  static TeacherSpec load(const std::string& path);
  void save(const std::string& path) const;
};

// One augmented view, applied identically to every model that sees the
// sample. Frames are cropped, jittered and resized back to the canvas side;
// flow is cropped and resized without jitter; boxes are re-normalized to the
// crop rectangle.
struct ViewPlan {
  std::vector<int> frame_indices;          // length n_frames
  int crop_x = 0, crop_y = 0;              // top-left, pixels
  int crop_w = 0, crop_h = 0;
  double brightness = 0.0, contrast = 0.0; // jitter deltas
  bool hflip = false;                      // never set; several actions are chiral

  std::uint64_t hash() const;
};

// train: random 8-frame sample, random 28x28 crop, jitter ~ U(-0.1, 0.1);
// eval: regular-interval frames, centered crop, zero jitter.
ViewPlan sample_view_plan(int raw_length, int canvas, bool train_mode, Rng* rng);
ViewPlan sample_view_plan(const Episode& episode, bool train_mode, Rng* rng);

// modality renderings under a plan
Tensor apply_view_frames(const Tensor& frames, const ViewPlan& view);  // [T,cs,cs,3]
Tensor apply_view_flow(const Tensor& flow, const ViewPlan& view);      // [T,cs,cs,2]
// boxes are intersected with the crop rectangle and re-normalized to it;
// boxes that leave the crop entirely become padding. `canvas` is the side
// the incoming normalized coordinates refer to.
std::vector<std::vector<BoxToken>> apply_view_boxes(const std::vector<std::vector<BoxToken>>& boxes,
                                                    const ViewPlan& view, int canvas);
// omnivore detection-canvas clip under a plan
Tensor apply_view_canvas(const std::vector<std::vector<BoxToken>>& boxes, const ViewPlan& view, int canvas);
// omnivore flow rendering: angle -> hue on the 6-sector wheel,
// magnitude -> saturation (full at 4 px/frame), value 1
Tensor render_flow_rgb(const Tensor& flow_clip);

struct Teacher {
  std::vector<ModelParams> members;
};

Teacher load_teacher(const TeacherSpec& spec);

// member logits under one shared view, averaged
LogitVec teacher_logits(const Teacher& teacher, const Episode& episode, const ViewPlan& view);

// softmax of averaged logits, then temperature scaling per cfg.tau
ProbVec teacher_predict(const Teacher& teacher, const Episode& episode, const ViewPlan& view,
                        const DistillConfig& cfg);

// single-model logits for one modality under a view (shared by training and
// evaluation)
LogitVec model_logits(const ModelParams& params, const Episode& episode, const ViewPlan& view);

}  // namespace mmdl
