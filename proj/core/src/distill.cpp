#include "mmdl/distill.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "mmdl/checkpoint.hpp"
#include "mmdl/fastmath.hpp"

namespace mmdl {

namespace {
constexpr double kFloor = 1e-12;
}

void DistillConfig::validate() const {
  if (tau <= 0.0) throw Error(ErrorCategory::config, "tau must be positive");
  if (hard_label_weight < 0.0 || hard_label_weight > 1.0)
    throw Error(ErrorCategory::config, "hard_label_weight must be in [0,1]");
}

ProbVec temperature_scale(const ProbVec& p, double tau) {
  if (tau <= 0.0) throw Error(ErrorCategory::config, "tau must be positive");
  ProbVec out(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::exp(std::log(std::max(p[i], kFloor)) / tau);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

double kd_loss(const ProbVec& p_t, const ProbVec& p_s) {
  if (p_t.size() != p_s.size())
    throw Error(ErrorCategory::dimension, "kd_loss: length mismatch " + std::to_string(p_t.size()) +
                                              " vs " + std::to_string(p_s.size()));
  double loss = 0.0;
  for (std::size_t i = 0; i < p_t.size(); ++i) {
    if (p_t[i] <= 0.0) continue;
    loss += p_t[i] * (std::log(std::max(p_t[i], kFloor)) - std::log(std::max(p_s[i], kFloor)));
  }
  return loss;
}

LogitVec ensemble_logits(const std::vector<LogitVec>& members) {
  if (members.empty()) throw Error(ErrorCategory::dimension, "ensemble_logits: no members");
  const std::size_t c = members[0].size();
  LogitVec out(c, 0.0);
  for (const auto& m : members) {
    if (m.size() != c)
      throw Error(ErrorCategory::dimension, "ensemble_logits: member length " + std::to_string(m.size()) +
                                                " vs " + std::to_string(c));
    for (std::size_t i = 0; i < c; ++i) out[i] += m[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (auto& v : out) v *= inv;
  return out;
}

ProbVec softmax(const LogitVec& z) {
  ProbVec out(z.size());
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

void TeacherSpec::validate() const {
  if (members.empty() || members.size() > 3)
    throw Error(ErrorCategory::config, "teacher needs 1 to 3 members");
  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t j = i + 1; j < members.size(); ++j)
      if (members[i].modality == members[j].modality)
        throw Error(ErrorCategory::config,
                    std::string("duplicate teacher modality ") + to_string(members[i].modality));
}

TeacherSpec TeacherSpec::load(const std::string& path) {
  auto bytes = wire::read_file(path);
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  TeacherSpec spec;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(ErrorCategory::format, path + ": teacher line needs <checkpoint>\\t<modality>: " + line);
    spec.members.push_back({line.substr(0, tab), modality_from_string(line.substr(tab + 1))});
  }
  spec.validate();
  return spec;
}

void TeacherSpec::save(const std::string& path) const {
  validate();
  std::ostringstream os;
  for (const auto& m : members) os << m.checkpoint_path << '\t' << to_string(m.modality) << '\n';
  const std::string s = os.str();
  wire::write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
}

std::uint64_t ViewPlan::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mixin = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  };
  for (int i : frame_indices) mixin(static_cast<std::uint64_t>(i) + 1);
  mixin(static_cast<std::uint64_t>(crop_x));
  mixin(static_cast<std::uint64_t>(crop_y));
  mixin(static_cast<std::uint64_t>(crop_w));
  mixin(static_cast<std::uint64_t>(crop_h));
  mixin(std::bit_cast<std::uint64_t>(brightness));
  mixin(std::bit_cast<std::uint64_t>(contrast));
  mixin(hflip ? 2 : 1);
  return h;
}

ViewPlan sample_view_plan(int raw_length, int canvas, bool train_mode, Rng* rng) {
  constexpr int kFrames = 8;
  // 28/32 of the canvas, resized back to the canvas side by the appliers
  const int crop = std::max(1, (canvas * 28) / 32);
  ViewPlan v;
  v.crop_w = crop;
  v.crop_h = crop;
  if (!train_mode) {
    v.frame_indices = sample_clip(raw_length, kFrames, false, nullptr);
    v.crop_x = (canvas - crop) / 2;
    v.crop_y = (canvas - crop) / 2;
    return v;
  }
  if (!rng) throw Error(ErrorCategory::contract, "train-mode view sampling needs an rng");
  v.frame_indices = sample_clip(raw_length, kFrames, true, rng);
  v.crop_x = static_cast<int>(rng->uniform_int(static_cast<std::uint64_t>(canvas - crop + 1)));
  v.crop_y = static_cast<int>(rng->uniform_int(static_cast<std::uint64_t>(canvas - crop + 1)));
  v.brightness = rng->uniform(-0.1, 0.1);
  v.contrast = rng->uniform(-0.1, 0.1);
  return v;
}

ViewPlan sample_view_plan(const Episode& episode, bool train_mode, Rng* rng) {
  return sample_view_plan(static_cast<int>(episode.frames.dim(0)),
                          static_cast<int>(episode.frames.dim(1)), train_mode, rng);
}

namespace {

// crop a [H,W,C] frame region and bilinearly resize it to side x side
void crop_resize(const double* src, int H, int W, int C, const ViewPlan& v, int side, double* dst,
                 double value_scale) {
  const double sx = static_cast<double>(v.crop_w) / side;
  const double sy = static_cast<double>(v.crop_h) / side;
  for (int y = 0; y < side; ++y) {
    const double fy = v.crop_y + (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, H - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < side; ++x) {
      const double fx = v.crop_x + (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, W - 1);
      const int x1 = std::min(x0 + 1, W - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < C; ++c) {
        const double a = src[(y0 * W + x0) * C + c] * (1 - wx) + src[(y0 * W + x1) * C + c] * wx;
        const double b = src[(y1 * W + x0) * C + c] * (1 - wx) + src[(y1 * W + x1) * C + c] * wx;
        dst[(y * side + x) * C + c] = (a * (1 - wy) + b * wy) * value_scale;
      }
    }
  }
}

}  // namespace

Tensor apply_view_frames(const Tensor& frames, const ViewPlan& view) {
  const int H = static_cast<int>(frames.dim(1));
  const int W = static_cast<int>(frames.dim(2));
  const int C = static_cast<int>(frames.dim(3));
  const int side = H;  // resize back to the canvas side
  const auto T = static_cast<int>(view.frame_indices.size());
  Tensor out(Shape{T, side, side, C}, 0.0);
  const std::size_t in_sz = static_cast<std::size_t>(H) * W * C;
  const std::size_t out_sz = static_cast<std::size_t>(side) * side * C;
  for (int t = 0; t < T; ++t) {
    const int fi = view.frame_indices[static_cast<std::size_t>(t)];
    if (fi < 0 || fi >= static_cast<int>(frames.dim(0)))
      throw Error(ErrorCategory::contract, "view frame index out of range");
    crop_resize(frames.ptr() + static_cast<std::size_t>(fi) * in_sz, H, W, C, view, side,
                out.ptr() + static_cast<std::size_t>(t) * out_sz, 1.0);
  }
  if (view.brightness != 0.0 || view.contrast != 0.0) {
    const double gain = 1.0 + view.contrast;
    for (auto& v : out.data()) v = std::clamp(0.5 + gain * (v + view.brightness - 0.5), 0.0, 1.0);
  }
  return out;
}

Tensor apply_view_flow(const Tensor& flow, const ViewPlan& view) {
  const int raw_flow = static_cast<int>(flow.dim(0));
  const int H = static_cast<int>(flow.dim(1));
  const int W = static_cast<int>(flow.dim(2));
  const int side = H;
  const auto T = static_cast<int>(view.frame_indices.size());
  Tensor out(Shape{T, side, side, 2}, 0.0);
  const std::size_t in_sz = static_cast<std::size_t>(H) * W * 2;
  const std::size_t out_sz = static_cast<std::size_t>(side) * side * 2;
  // displacements scale with the spatial resize
  const double value_scale = static_cast<double>(side) / view.crop_w;
  for (int t = 0; t < T; ++t) {
    const int fi = std::min(view.frame_indices[static_cast<std::size_t>(t)], raw_flow - 1);
    crop_resize(flow.ptr() + static_cast<std::size_t>(fi) * in_sz, H, W, 2, view, side,
                out.ptr() + static_cast<std::size_t>(t) * out_sz, value_scale);
  }
  return out;
}

std::vector<std::vector<BoxToken>> apply_view_boxes(const std::vector<std::vector<BoxToken>>& boxes,
                                                    const ViewPlan& view, int canvas) {
  std::vector<std::vector<BoxToken>> out;
  out.reserve(view.frame_indices.size());
  const double cs = canvas;
  for (int fi : view.frame_indices) {
    if (fi < 0 || fi >= static_cast<int>(boxes.size()))
      throw Error(ErrorCategory::contract, "view frame index out of range");
    std::vector<BoxToken> group;
    for (const auto& tok : boxes[static_cast<std::size_t>(fi)]) {
      if (tok.category == BoxCategory::padding) {
        group.push_back(BoxToken{});
        continue;
      }
      const double bx0 = std::max(tok.cx * cs - tok.w * cs * 0.5, static_cast<double>(view.crop_x));
      const double bx1 = std::min(tok.cx * cs + tok.w * cs * 0.5, static_cast<double>(view.crop_x + view.crop_w));
      const double by0 = std::max(tok.cy * cs - tok.h * cs * 0.5, static_cast<double>(view.crop_y));
      const double by1 = std::min(tok.cy * cs + tok.h * cs * 0.5, static_cast<double>(view.crop_y + view.crop_h));
      if (bx1 <= bx0 || by1 <= by0) {
        group.push_back(BoxToken{});  // cropped away entirely
        continue;
      }
      BoxToken t;
      t.cx = ((bx0 + bx1) * 0.5 - view.crop_x) / view.crop_w;
      t.cy = ((by0 + by1) * 0.5 - view.crop_y) / view.crop_h;
      t.w = (bx1 - bx0) / view.crop_w;
      t.h = (by1 - by0) / view.crop_h;
      t.category = tok.category;
      group.push_back(t);
    }
    out.push_back(std::move(group));
  }
  return out;
}

Tensor apply_view_canvas(const std::vector<std::vector<BoxToken>>& boxes, const ViewPlan& view,
                         int canvas) {
  auto viewed = apply_view_boxes(boxes, view, canvas);
  const auto T = static_cast<int>(viewed.size());
  Tensor out(Shape{T, canvas, canvas, 3}, 0.0);
  const std::size_t sz = static_cast<std::size_t>(canvas) * canvas * 3;
  for (int t = 0; t < T; ++t) {
    Tensor frame = render_detection_canvas(viewed[static_cast<std::size_t>(t)], canvas);
    std::copy(frame.data().begin(), frame.data().end(),
              out.data().begin() + static_cast<std::int64_t>(t * sz));
  }
  return out;
}

Tensor render_flow_rgb(const Tensor& flow_clip) {
  const auto T = flow_clip.dim(0), H = flow_clip.dim(1), W = flow_clip.dim(2);
  Tensor out(Shape{T, H, W, 3}, 0.0);
  const double* src = flow_clip.ptr();
  double* dst = out.ptr();
  const std::int64_t n = T * H * W;
  constexpr double kFullMag = 4.0;  // saturation saturates at 4 px/frame
  for (std::int64_t i = 0; i < n; ++i) {
    const double fx = src[i * 2], fy = src[i * 2 + 1];
    const double mag = std::sqrt(fx * fx + fy * fy);
    const double angle = std::atan2(fy, fx);  // [-pi, pi]
    const double hue = (angle + 3.14159265358979323846) / (2 * 3.14159265358979323846);
    const double sat = std::min(1.0, mag / kFullMag);
    double rgb[3];
    hsv_to_rgb(hue, sat, 1.0, rgb);
    dst[i * 3] = rgb[0];
    dst[i * 3 + 1] = rgb[1];
    dst[i * 3 + 2] = rgb[2];
  }
  return out;
}

Teacher load_teacher(const TeacherSpec& spec) {
  spec.validate();
  Teacher t;
  for (const auto& m : spec.members) {
    try {
      t.members.push_back(load_model(m.checkpoint_path));
    } catch (const Error& e) {
      throw Error(ErrorCategory::checkpoint,
                  std::string("teacher member ") + to_string(m.modality) + " (" + m.checkpoint_path +
                      "): " + e.what());
    }
    if (t.members.back().modality != m.modality)
      throw Error(ErrorCategory::checkpoint, "teacher member " + m.checkpoint_path + " is a " +
                                                 to_string(t.members.back().modality) + " model, spec says " +
                                                 to_string(m.modality));
  }
  return t;
}

LogitVec model_logits(const ModelParams& params, const Episode& episode, const ViewPlan& view) {
  Tensor logits;
  switch (params.modality) {
    case Modality::rgb:
      logits = frame_model_forward(params, apply_view_frames(episode.frames, view));
      break;
    case Modality::flow:
      logits = frame_model_forward(params, apply_view_flow(episode.flow, view));
      break;
    case Modality::boxes:
      logits = box_model_forward(params,
                                 apply_view_boxes(episode.boxes, view, static_cast<int>(episode.frames.dim(1))));
      break;
  }
  auto d = logits.data();
  return LogitVec(d.begin(), d.end());
}

LogitVec teacher_logits(const Teacher& teacher, const Episode& episode, const ViewPlan& view) {
  std::vector<LogitVec> member_logits;
  member_logits.reserve(teacher.members.size());
  for (const auto& m : teacher.members) member_logits.push_back(model_logits(m, episode, view));
  return ensemble_logits(member_logits);
}

ProbVec teacher_predict(const Teacher& teacher, const Episode& episode, const ViewPlan& view,
                        const DistillConfig& cfg) {
  cfg.validate();
  return temperature_scale(softmax(teacher_logits(teacher, episode, view)), cfg.tau);
}

}  // namespace mmdl
