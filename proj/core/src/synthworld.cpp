#include "mmdl/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mmdl/checkpoint.hpp"
#include "mmdl/log.hpp"
#include "mmdl/threading.hpp"

namespace mmdl {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr double kPi = 3.14159265358979323846;
constexpr double kBackground = 0.12;

enum class ShapeKind { square, circle, octagon, rounded_square };
enum class TextureKind { solid, hstripes, vstripes, checker, dots, rings };

ShapeKind shape_of(int object_id) { return static_cast<ShapeKind>(object_id % 4); }
TextureKind texture_of(int object_id) { return static_cast<TextureKind>((object_id / 4) % 6); }

}  // namespace

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

namespace {

void object_color(int object_id, double rgb[3]) {
  const double hue = 0.61803398875 * object_id + 0.15;
  hsv_to_rgb(hue, 0.85, 0.95, rgb);
}

// u, v are object-local coordinates in [-0.5, 0.5]
bool inside_shape(ShapeKind kind, double u, double v) {
  const double au = std::fabs(u), av = std::fabs(v);
  if (au > 0.5 || av > 0.5) return false;
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::circle:
      return u * u + v * v <= 0.25;
    case ShapeKind::octagon:
      return au + av <= 0.675;
    case ShapeKind::rounded_square: {
      const double r = 0.15;
      const double dx = std::max(0.0, au - (0.5 - r));
      const double dy = std::max(0.0, av - (0.5 - r));
      return dx * dx + dy * dy <= r * r;
    }
  }
  return false;
}

double texture_value(TextureKind kind, double u, double v, int object_id) {
  const double phase = 0.37 * object_id;
  const double freq = 2.0 + (object_id % 3);
  switch (kind) {
    case TextureKind::solid:
      return 1.0;
    case TextureKind::hstripes:
      return 0.5 + 0.5 * std::sin(2.0 * kPi * freq * v + phase);
    case TextureKind::vstripes:
      return 0.5 + 0.5 * std::sin(2.0 * kPi * freq * u + phase);
    case TextureKind::checker:
      return 0.5 + 0.5 * std::sin(2.0 * kPi * freq * u + phase) * std::sin(2.0 * kPi * freq * v + phase);
    case TextureKind::dots: {
      const double su = std::sin(2.0 * kPi * freq * u + phase);
      const double sv = std::sin(2.0 * kPi * freq * v + phase);
      return su * su * sv * sv;
    }
    case TextureKind::rings:
      return 0.5 + 0.5 * std::sin(4.0 * kPi * freq * std::sqrt(u * u + v * v) + phase);
  }
  return 1.0;
}

}  // namespace

const char* action_name(int action_id) {
  static const char* names[] = {"move-left",      "move-right",     "move-up",        "move-down",
                                "move-up-left",   "move-up-right",  "move-down-left", "move-down-right",
                                "grow",           "shrink",         "shake",          "orbit"};
  if (action_id < 0 || action_id >= 12) return "?";
  return names[action_id];
}

void GeneratorConfig::validate() const {
  if (n_objects < 2 || n_classes < 2 || n_classes > 12 || canvas < 16 || raw_length < 8)
    throw Error(ErrorCategory::config, "generator: need n_objects>=2, 2<=n_classes<=12, canvas>=16, raw>=8");
  if (standard_train < 1 || standard_test < 1 || comp_train < 1 || comp_test < 1)
    throw Error(ErrorCategory::config, "generator: episode counts must be positive");
  if (comp_test_objects < 1 || n_objects < 2 * comp_test_objects)
    throw Error(ErrorCategory::config, "generator: n_objects must be at least twice the comp-test vocabulary");
  if (max_boxes < 1 + max_distractors || min_distractors < 0 || min_distractors > max_distractors)
    throw Error(ErrorCategory::config, "generator: box budget too small for distractor range");
  if (dirichlet_alpha <= 0.0 || noise_sigma < 0.0)
    throw Error(ErrorCategory::config, "generator: alpha must be positive, sigma nonnegative");
}

bool action_predicate_holds(int action_id, const std::vector<BoxTrack>& tr) {
  if (tr.size() < 2) return false;
  const auto n = tr.size();
  auto strictly = [&](auto get, int sign) {
    for (std::size_t t = 0; t + 1 < n; ++t)
      if (sign * (get(tr[t + 1]) - get(tr[t])) <= 0.0) return false;
    return true;
  };
  auto cx = [](const BoxTrack& b) { return b.cx; };
  auto cy = [](const BoxTrack& b) { return b.cy; };
  switch (static_cast<Action>(action_id)) {
    case Action::move_left: return strictly(cx, -1);
    case Action::move_right: return strictly(cx, +1);
    case Action::move_up: return strictly(cy, -1);  // row 0 is the top of the canvas
    case Action::move_down: return strictly(cy, +1);
    case Action::move_up_left: return strictly(cx, -1) && strictly(cy, -1);
    case Action::move_up_right: return strictly(cx, +1) && strictly(cy, -1);
    case Action::move_down_left: return strictly(cx, -1) && strictly(cy, +1);
    case Action::move_down_right: return strictly(cx, +1) && strictly(cy, +1);
    case Action::grow:
      return strictly([](const BoxTrack& b) { return b.w; }, +1) &&
             strictly([](const BoxTrack& b) { return b.h; }, +1);
    case Action::shrink:
      return strictly([](const BoxTrack& b) { return b.w; }, -1) &&
             strictly([](const BoxTrack& b) { return b.h; }, -1);
    case Action::shake: {
      // oscillation: the dominant axis must change direction at least twice
      double rx = 0, ry = 0;
      for (std::size_t t = 0; t + 1 < n; ++t) {
        rx = std::max(rx, std::fabs(tr[t + 1].cx - tr[0].cx));
        ry = std::max(ry, std::fabs(tr[t + 1].cy - tr[0].cy));
      }
      auto get = rx >= ry ? cx : cy;
      int changes = 0;
      double prev = 0;
      for (std::size_t t = 0; t + 1 < n; ++t) {
        const double d = get(tr[t + 1]) - get(tr[t]);
        if (d * prev < 0.0) ++changes;
        if (d != 0.0) prev = d;
      }
      return changes >= 2;
    }
    case Action::orbit: {
      double mx = 0, my = 0;
      for (const auto& b : tr) {
        mx += b.cx;
        my += b.cy;
      }
      mx /= static_cast<double>(n);
      my /= static_cast<double>(n);
      double winding = 0;
      for (std::size_t t = 0; t + 1 < n; ++t) {
        const double a0 = std::atan2(tr[t].cy - my, tr[t].cx - mx);
        const double a1 = std::atan2(tr[t + 1].cy - my, tr[t + 1].cx - mx);
        double d = a1 - a0;
        while (d > kPi) d -= 2 * kPi;
        while (d < -kPi) d += 2 * kPi;
        winding += d;
      }
      return std::fabs(winding) >= 1.5 * kPi;
    }
  }
  return false;
}

EpisodeSpec sample_episode_spec(const GeneratorConfig& gen, int object_id, int action_id,
                                const std::vector<int>& distractor_vocab, Rng& rng) {
  if (action_id < 0 || action_id >= gen.n_classes)
    throw Error(ErrorCategory::config, "action_id out of range");
  EpisodeSpec spec;
  spec.object_id = object_id;
  spec.action_id = action_id;
  spec.canvas = gen.canvas;
  spec.raw_length = gen.raw_length;
  spec.max_boxes = gen.max_boxes;
  spec.noise_sigma = gen.noise_sigma;
  spec.noise_seed = rng.bits();

  const int raw = gen.raw_length;
  const double cs = gen.canvas;
  auto track = std::vector<BoxTrack>(static_cast<std::size_t>(raw));

  double w = rng.uniform(7.0, 10.0);
  double h = w * rng.uniform(0.9, 1.1);
  const auto act = static_cast<Action>(action_id);

  auto fill_linear = [&](double ux, double uy) {
    const double speed = rng.uniform(0.7, 1.1);
    // per-axis travel bounds the admissible start range
    double tx = 0, ty = 0;
    std::vector<double> steps(static_cast<std::size_t>(raw - 1));
    for (auto& s : steps) {
      s = speed * rng.uniform(0.9, 1.1);
      tx += s * ux;
      ty += s * uy;
    }
    const double mx = w / 2 + 1.0;
    const double my = h / 2 + 1.0;
    double x0 = rng.uniform(mx + std::max(0.0, -tx), cs - mx - std::max(0.0, tx));
    double y0 = rng.uniform(my + std::max(0.0, -ty), cs - my - std::max(0.0, ty));
    double x = x0, y = y0;
    for (int t = 0; t < raw; ++t) {
      track[static_cast<std::size_t>(t)] = {x, y, w, h};
      if (t + 1 < raw) {
        x += steps[static_cast<std::size_t>(t)] * ux;
        y += steps[static_cast<std::size_t>(t)] * uy;
      }
    }
  };

  const double inv_sqrt2 = 0.7071067811865476;
  switch (act) {
    case Action::move_left: fill_linear(-1, 0); break;
    case Action::move_right: fill_linear(+1, 0); break;
    case Action::move_up: fill_linear(0, -1); break;
    case Action::move_down: fill_linear(0, +1); break;
    case Action::move_up_left: fill_linear(-inv_sqrt2, -inv_sqrt2); break;
    case Action::move_up_right: fill_linear(+inv_sqrt2, -inv_sqrt2); break;
    case Action::move_down_left: fill_linear(-inv_sqrt2, +inv_sqrt2); break;
    case Action::move_down_right: fill_linear(+inv_sqrt2, +inv_sqrt2); break;
    case Action::grow:
    case Action::shrink: {
      double s = act == Action::grow ? rng.uniform(5.5, 6.5) : rng.uniform(11.0, 12.0);
      const double aspect = rng.uniform(0.9, 1.1);
      const double margin = 12.0 * std::max(1.0, aspect) / 2 + 1.0;
      const double x = rng.uniform(margin, cs - margin);
      const double y = rng.uniform(margin, cs - margin);
      for (int t = 0; t < raw; ++t) {
        track[static_cast<std::size_t>(t)] = {x, y, s, s * aspect};
        const double g = rng.uniform(1.042, 1.052);
        s = act == Action::grow ? s * g : s / g;
      }
      break;
    }
    case Action::shake: {
      const double amp = rng.uniform(1.6, 2.2);
      const double phase = rng.uniform(0.0, 2 * kPi);
      const bool horizontal = rng.uniform() < 0.5;
      const double mx = w / 2 + amp + 1.0;
      const double my = h / 2 + amp + 1.0;
      const double x = rng.uniform(mx, cs - mx);
      const double y = rng.uniform(my, cs - my);
      for (int t = 0; t < raw; ++t) {
        const double off = amp * std::sin(2 * kPi * 1.5 * t / raw + phase);
        track[static_cast<std::size_t>(t)] = {horizontal ? x + off : x, horizontal ? y : y + off, w, h};
      }
      break;
    }
    case Action::orbit: {
      const double r = rng.uniform(2.6, 3.2);
      const double theta0 = rng.uniform(0.0, 2 * kPi);
      const int dir = rng.uniform() < 0.5 ? 1 : -1;
      const double mx = w / 2 + r + 1.0;
      const double my = h / 2 + r + 1.0;
      const double ax = rng.uniform(mx, cs - mx);
      const double ay = rng.uniform(my, cs - my);
      for (int t = 0; t < raw; ++t) {
        const double th = theta0 + dir * 2 * kPi * t / raw;
        track[static_cast<std::size_t>(t)] = {ax + r * std::cos(th), ay + r * std::sin(th), w, h};
      }
      break;
    }
  }
  spec.trajectory = std::move(track);
  if (!action_predicate_holds(action_id, spec.trajectory))
    throw Error(ErrorCategory::contract,
                std::string("motion predicate failed for ") + action_name(action_id));

  // distractors: identities from the split vocabulary, small jittering boxes
  const int nd = gen.min_distractors +
                 static_cast<int>(rng.uniform_int(
                     static_cast<std::uint64_t>(gen.max_distractors - gen.min_distractors + 1)));
  std::vector<int> pool;
  for (int id : distractor_vocab)
    if (id != object_id) pool.push_back(id);
  rng.shuffle(pool);
  for (int i = 0; i < nd && i < static_cast<int>(pool.size()); ++i) {
    DistractorSpec ds;
    ds.object_id = pool[static_cast<std::size_t>(i)];
    const double dw = rng.uniform(5.0, 9.0);
    const double dh = dw * rng.uniform(0.9, 1.1);
    const double m = std::max(dw, dh) / 2 + 2.5;
    double x = rng.uniform(m, cs - m);
    double y = rng.uniform(m, cs - m);
    const double ax = x, ay = y;
    ds.track.resize(static_cast<std::size_t>(raw));
    for (int t = 0; t < raw; ++t) {
      ds.track[static_cast<std::size_t>(t)] = {x, y, dw, dh};
      x = std::clamp(x + rng.uniform(-0.4, 0.4), ax - 1.5, ax + 1.5);
      y = std::clamp(y + rng.uniform(-0.4, 0.4), ay - 1.5, ay + 1.5);
    }
    spec.distractors.push_back(std::move(ds));
  }
  return spec;
}

namespace {

void draw_object(double* frame, int canvas, int object_id, const BoxTrack& box) {
  double rgb[3];
  object_color(object_id, rgb);
  const auto shape = shape_of(object_id);
  const auto tex = texture_of(object_id);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.cx - box.w / 2)));
  const int x1 = std::min(canvas, static_cast<int>(std::ceil(box.cx + box.w / 2)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.cy - box.h / 2)));
  const int y1 = std::min(canvas, static_cast<int>(std::ceil(box.cy + box.h / 2)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double u = (x + 0.5 - box.cx) / box.w;
      const double v = (y + 0.5 - box.cy) / box.h;
      if (!inside_shape(shape, u, v)) continue;
      const double tval = 0.55 + 0.45 * texture_value(tex, u, v, object_id);
      double* px = frame + (y * canvas + x) * 3;
      px[0] = rgb[0] * tval;
      px[1] = rgb[1] * tval;
      px[2] = rgb[2] * tval;
    }
}

// paints the analytic displacement field of one object on its frame-t mask
void paint_flow(double* flow, int canvas, int object_id, const BoxTrack& now, const BoxTrack& next) {
  const auto shape = shape_of(object_id);
  const double dx = next.cx - now.cx;
  const double dy = next.cy - now.cy;
  const double rx = next.w / now.w - 1.0;
  const double ry = next.h / now.h - 1.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(now.cx - now.w / 2)));
  const int x1 = std::min(canvas, static_cast<int>(std::ceil(now.cx + now.w / 2)));
  const int y0 = std::max(0, static_cast<int>(std::floor(now.cy - now.h / 2)));
  const int y1 = std::min(canvas, static_cast<int>(std::ceil(now.cy + now.h / 2)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double u = (px - now.cx) / now.w;
      const double v = (py - now.cy) / now.h;
      if (!inside_shape(shape, u, v)) continue;
      double* f = flow + (y * canvas + x) * 2;
      f[0] = dx + rx * (px - now.cx);
      f[1] = dy + ry * (py - now.cy);
    }
}

BoxToken to_token(const BoxTrack& b, int canvas, BoxCategory cat) {
  BoxToken t;
  t.cx = b.cx / canvas;
  t.cy = b.cy / canvas;
  t.w = b.w / canvas;
  t.h = b.h / canvas;
  t.category = cat;
  return t;
}

}  // namespace

Episode render_episode(const EpisodeSpec& spec) {
  const int raw = spec.raw_length;
  const int cs = spec.canvas;
  Episode ep;
  ep.label = spec.action_id;
  ep.object_id = spec.object_id;
  ep.frames = Tensor(Shape{raw, cs, cs, 3}, kBackground);
  ep.flow = Tensor(Shape{raw - 1, cs, cs, 2}, 0.0);

  double* frames = ep.frames.ptr();
  double* flow = ep.flow.ptr();
  const std::size_t frame_sz = static_cast<std::size_t>(cs) * cs * 3;
  const std::size_t flow_sz = static_cast<std::size_t>(cs) * cs * 2;
  for (int t = 0; t < raw; ++t) {
    double* fr = frames + static_cast<std::size_t>(t) * frame_sz;
    for (const auto& ds : spec.distractors) draw_object(fr, cs, ds.object_id, ds.track[static_cast<std::size_t>(t)]);
    draw_object(fr, cs, spec.object_id, spec.trajectory[static_cast<std::size_t>(t)]);
    if (t + 1 < raw) {
      double* fl = flow + static_cast<std::size_t>(t) * flow_sz;
      for (const auto& ds : spec.distractors)
        paint_flow(fl, cs, ds.object_id, ds.track[static_cast<std::size_t>(t)],
                   ds.track[static_cast<std::size_t>(t + 1)]);
      // target drawn last so its motion owns overlapping pixels
      paint_flow(fl, cs, spec.object_id, spec.trajectory[static_cast<std::size_t>(t)],
                 spec.trajectory[static_cast<std::size_t>(t + 1)]);
    }
  }
  if (spec.noise_sigma > 0.0) {
    Rng noise(spec.noise_seed);
    auto data = ep.frames.data();
    for (auto& v : data) v = std::clamp(v + spec.noise_sigma * noise.normal(), 0.0, 1.0);
  }

  ep.boxes.resize(static_cast<std::size_t>(raw));
  for (int t = 0; t < raw; ++t) {
    auto& group = ep.boxes[static_cast<std::size_t>(t)];
    group.push_back(to_token(spec.trajectory[static_cast<std::size_t>(t)], cs, BoxCategory::target));
    for (const auto& ds : spec.distractors)
      group.push_back(to_token(ds.track[static_cast<std::size_t>(t)], cs, BoxCategory::distractor));
    group.resize(static_cast<std::size_t>(spec.max_boxes));  // zero padding tokens
  }
  return ep;
}

Tensor render_detection_canvas(const std::vector<BoxToken>& frame_boxes, int canvas) {
  Tensor out(Shape{canvas, canvas, 3}, 1.0);
  double* img = out.ptr();
  auto draw_outline = [&](const BoxToken& b, double r, double g, double bl) {
    const int x0 = std::clamp(static_cast<int>(std::lround((b.cx - b.w / 2) * canvas)), 0, canvas);
    const int x1 = std::clamp(static_cast<int>(std::lround((b.cx + b.w / 2) * canvas)), 0, canvas);
    const int y0 = std::clamp(static_cast<int>(std::lround((b.cy - b.h / 2) * canvas)), 0, canvas);
    const int y1 = std::clamp(static_cast<int>(std::lround((b.cy + b.h / 2) * canvas)), 0, canvas);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const bool border = x < x0 + 2 || x >= x1 - 2 || y < y0 + 2 || y >= y1 - 2;
        if (!border) continue;
        double* px = img + (y * canvas + x) * 3;
        px[0] = r;
        px[1] = g;
        px[2] = bl;
      }
  };
  for (const auto& b : frame_boxes)
    if (b.category == BoxCategory::distractor) draw_outline(b, 0.0, 0.0, 1.0);
  for (const auto& b : frame_boxes)
    if (b.category == BoxCategory::target) draw_outline(b, 1.0, 0.0, 0.0);  // red wins overlaps
  return out;
}

std::vector<int> sample_clip(int raw_length, int n_frames, bool train_mode, Rng* rng) {
  if (raw_length < n_frames)
    throw Error(ErrorCategory::contract, "raw_length " + std::to_string(raw_length) + " < n_frames " +
                                             std::to_string(n_frames));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_frames));
  if (!train_mode) {
    for (int i = 0; i < n_frames; ++i) out.push_back(i * raw_length / n_frames);
    return out;
  }
  if (!rng) throw Error(ErrorCategory::contract, "train-mode clip sampling needs an rng");
  std::vector<int> all(static_cast<std::size_t>(raw_length));
  for (int i = 0; i < raw_length; ++i) all[static_cast<std::size_t>(i)] = i;
  rng->shuffle(all);
  out.assign(all.begin(), all.begin() + n_frames);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// container + manifests

namespace {

std::size_t record_size(const GeneratorConfig& g) {
  const std::size_t c2 = static_cast<std::size_t>(g.canvas) * g.canvas;
  return static_cast<std::size_t>(g.raw_length) * c2 * 3 * 4 +
         static_cast<std::size_t>(g.raw_length - 1) * c2 * 2 * 4 +
         static_cast<std::size_t>(g.raw_length) * static_cast<std::size_t>(g.max_boxes) * 17 + 4;
}

void write_header(std::vector<unsigned char>& b, const GeneratorConfig& g, std::uint64_t count) {
  b.insert(b.end(), kMagic, kMagic + 4);
  wire::put_u32(b, kVersion);
  wire::put_u64(b, count);
  wire::put_u32(b, static_cast<std::uint32_t>(g.raw_length));
  wire::put_u32(b, static_cast<std::uint32_t>(g.canvas));
  wire::put_u32(b, 3);
  wire::put_u32(b, 2);
  wire::put_u32(b, static_cast<std::uint32_t>(g.max_boxes));
  wire::put_u32(b, static_cast<std::uint32_t>(g.n_classes));
  wire::put_u32(b, static_cast<std::uint32_t>(g.n_objects));
}

void encode_episode(const Episode& ep, const GeneratorConfig& g, unsigned char* dst) {
  std::vector<unsigned char> b;
  b.reserve(record_size(g));
  for (double v : ep.frames.data()) wire::put_f32(b, static_cast<float>(v));
  for (double v : ep.flow.data()) wire::put_f32(b, static_cast<float>(v));
  for (const auto& group : ep.boxes) {
    for (const auto& tok : group) {
      wire::put_f32(b, static_cast<float>(tok.cx));
      wire::put_f32(b, static_cast<float>(tok.cy));
      wire::put_f32(b, static_cast<float>(tok.w));
      wire::put_f32(b, static_cast<float>(tok.h));
      b.push_back(static_cast<unsigned char>(tok.category));
    }
  }
  wire::put_u16(b, static_cast<std::uint16_t>(ep.label));
  wire::put_u16(b, static_cast<std::uint16_t>(ep.object_id));
  if (b.size() != record_size(g)) throw Error(ErrorCategory::contract, "episode record size mismatch");
  std::memcpy(dst, b.data(), b.size());
}

struct SplitPlan {
  std::string name;
  int count;
  std::vector<int> vocab;
  bool skewed;  // train splits get a per-object action prior
};

}  // namespace

void generate_dataset(const GeneratorConfig& gen, std::uint64_t seed, const std::string& out_path,
                      int workers) {
  gen.validate();
  std::vector<int> std_vocab, comp_train_vocab, comp_test_vocab;
  for (int i = 0; i < gen.n_objects; ++i) std_vocab.push_back(i);
  for (int i = 0; i < gen.comp_train_objects(); ++i) comp_train_vocab.push_back(i);
  for (int i = gen.comp_train_objects(); i < gen.n_objects; ++i) comp_test_vocab.push_back(i);

  const SplitPlan plans[] = {
      {"standard-train", gen.standard_train, std_vocab, true},
      {"standard-test", gen.standard_test, std_vocab, false},
      {"comp-train", gen.comp_train, comp_train_vocab, true},
      {"comp-test", gen.comp_test, comp_test_vocab, false},
  };

  struct Pending {
    int object_id, action_id;
    const std::vector<int>* vocab;
  };
  std::vector<Pending> pending;
  std::vector<SplitManifest> manifests;

  for (std::size_t si = 0; si < 4; ++si) {
    const auto& plan = plans[si];
    Rng rng(mix64(seed, fnv1a64("split"), si));
    // balanced shuffled object assignment guarantees full vocabulary use
    std::vector<int> objects;
    while (static_cast<int>(objects.size()) < plan.count)
      objects.insert(objects.end(), plan.vocab.begin(), plan.vocab.end());
    rng.shuffle(objects);
    objects.resize(static_cast<std::size_t>(plan.count));

    std::vector<int> actions(static_cast<std::size_t>(plan.count));
    if (plan.skewed) {
      // the planted appearance shortcut: each object's training actions
      // follow its own Dirichlet draw, while test splits stay uniform
      std::vector<std::vector<double>> theta;
      for (int obj = 0; obj < gen.n_objects; ++obj) {
        Rng trng(mix64(seed, fnv1a64("theta"), si, static_cast<std::uint64_t>(obj)));
        theta.push_back(trng.dirichlet(gen.dirichlet_alpha, gen.n_classes));
      }
      for (int i = 0; i < plan.count; ++i) {
        const auto& th = theta[static_cast<std::size_t>(objects[static_cast<std::size_t>(i)])];
        double u = rng.uniform();
        int a = 0;
        while (a + 1 < gen.n_classes && u >= th[static_cast<std::size_t>(a)]) {
          u -= th[static_cast<std::size_t>(a)];
          ++a;
        }
        actions[static_cast<std::size_t>(i)] = a;
      }
    } else {
      // exact class counts (base plus one for a random subset), then shuffle
      const int base = plan.count / gen.n_classes;
      const int rem = plan.count % gen.n_classes;
      std::vector<int> order(static_cast<std::size_t>(gen.n_classes));
      for (int a = 0; a < gen.n_classes; ++a) order[static_cast<std::size_t>(a)] = a;
      rng.shuffle(order);
      std::vector<int> balanced;
      for (int pos = 0; pos < gen.n_classes; ++pos)
        for (int c = 0; c < base + (pos < rem ? 1 : 0); ++c)
          balanced.push_back(order[static_cast<std::size_t>(pos)]);
      rng.shuffle(balanced);
      actions = balanced;
    }

    SplitManifest m;
    m.name = plan.name;
    m.object_vocabulary = plan.vocab;
    for (int i = 0; i < plan.count; ++i) {
      m.episode_ids.push_back(static_cast<std::int64_t>(pending.size()));
      m.labels.push_back(actions[static_cast<std::size_t>(i)]);
      m.object_ids.push_back(objects[static_cast<std::size_t>(i)]);
      pending.push_back({objects[static_cast<std::size_t>(i)], actions[static_cast<std::size_t>(i)],
                         &plans[si].vocab});
    }
    manifests.push_back(std::move(m));
  }

  const std::size_t rec = record_size(gen);
  std::vector<unsigned char> file;
  write_header(file, gen, pending.size());
  const std::size_t header_size = file.size();
  file.resize(header_size + rec * pending.size());

  logging::info("generating %zu episodes (%zu MB) with %d workers", pending.size(),
            (rec * pending.size()) >> 20, workers);
  parallel_for(static_cast<std::int64_t>(pending.size()), workers, [&](std::int64_t id) {
    const auto& p = pending[static_cast<std::size_t>(id)];
    Rng rng(mix64(seed, fnv1a64("episode"), static_cast<std::uint64_t>(id)));
    EpisodeSpec spec = sample_episode_spec(gen, p.object_id, p.action_id, *p.vocab, rng);
    Episode ep = render_episode(spec);
    encode_episode(ep, gen, file.data() + header_size + rec * static_cast<std::size_t>(id));
  });

  wire::write_file(out_path, file);
  save_manifests(out_path + ".manifest.tsv", manifests);
}

void save_manifests(const std::string& path, const std::vector<SplitManifest>& manifests) {
  std::ostringstream os;
  for (const auto& m : manifests)
    for (std::size_t i = 0; i < m.episode_ids.size(); ++i)
      os << m.episode_ids[i] << '\t' << m.name << '\t' << m.labels[i] << '\t' << m.object_ids[i] << '\n';
  const std::string s = os.str();
  wire::write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
}

std::vector<SplitManifest> load_manifests(const std::string& path) {
  auto bytes = wire::read_file(path);
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  std::vector<SplitManifest> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id_s, name, label_s, obj_s;
    if (!std::getline(ls, id_s, '\t') || !std::getline(ls, name, '\t') || !std::getline(ls, label_s, '\t') ||
        !std::getline(ls, obj_s, '\t'))
      throw Error(ErrorCategory::format, path + ": bad manifest line " + std::to_string(lineno));
    SplitManifest* m = nullptr;
    for (auto& existing : out)
      if (existing.name == name) m = &existing;
    if (!m) {
      out.emplace_back();
      m = &out.back();
      m->name = name;
    }
    m->episode_ids.push_back(std::stoll(id_s));
    m->labels.push_back(std::stoi(label_s));
    m->object_ids.push_back(std::stoi(obj_s));
  }
  for (auto& m : out) {
    std::vector<int> vocab(m.object_ids.begin(), m.object_ids.end());
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    m.object_vocabulary = std::move(vocab);
  }
  return out;
}

Dataset Dataset::load(const std::string& path) {
  auto bytes = wire::read_file(path);
  wire::Reader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(reinterpret_cast<unsigned char*>(magic), 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error(ErrorCategory::format, "bad dataset magic in " + path);
  if (auto v = r.u32(); v != kVersion)
    throw Error(ErrorCategory::format, "unsupported dataset version " + std::to_string(v));
  Dataset ds;
  ds.count_ = static_cast<std::int64_t>(r.u64());
  ds.header_.raw_length = static_cast<int>(r.u32());
  ds.header_.canvas = static_cast<int>(r.u32());
  const auto frame_ch = r.u32();
  const auto flow_ch = r.u32();
  if (frame_ch != 3 || flow_ch != 2)
    throw Error(ErrorCategory::format, "unsupported channel layout at offset " + std::to_string(r.offset()));
  ds.header_.max_boxes = static_cast<int>(r.u32());
  ds.header_.n_classes = static_cast<int>(r.u32());
  ds.header_.n_objects = static_cast<int>(r.u32());
  ds.record_size_ = record_size(ds.header_);
  const std::size_t want = ds.record_size_ * static_cast<std::size_t>(ds.count_);
  if (r.remaining() != want)
    throw Error(ErrorCategory::format, path + ": payload is " + std::to_string(r.remaining()) +
                                           " bytes at offset " + std::to_string(r.offset()) + ", expected " +
                                           std::to_string(want));
  ds.payload_.resize(want);
  r.bytes(ds.payload_.data(), want);
  return ds;
}

void Dataset::save(const std::string& path) const {
  std::vector<unsigned char> file;
  write_header(file, header_, static_cast<std::uint64_t>(count_));
  file.insert(file.end(), payload_.begin(), payload_.end());
  wire::write_file(path, file);
}

Episode Dataset::episode(std::int64_t id) const {
  if (id < 0 || id >= count_)
    throw Error(ErrorCategory::contract, "episode id " + std::to_string(id) + " out of range");
  const auto& g = header_;
  wire::Reader r(payload_.data() + record_size_ * static_cast<std::size_t>(id), record_size_);
  Episode ep;
  ep.frames = Tensor(Shape{g.raw_length, g.canvas, g.canvas, 3}, 0.0);
  for (auto& v : ep.frames.data()) v = static_cast<double>(r.f32());
  ep.flow = Tensor(Shape{g.raw_length - 1, g.canvas, g.canvas, 2}, 0.0);
  for (auto& v : ep.flow.data()) v = static_cast<double>(r.f32());
  ep.boxes.resize(static_cast<std::size_t>(g.raw_length));
  for (auto& group : ep.boxes) {
    group.resize(static_cast<std::size_t>(g.max_boxes));
    for (auto& tok : group) {
      tok.cx = static_cast<double>(r.f32());
      tok.cy = static_cast<double>(r.f32());
      tok.w = static_cast<double>(r.f32());
      tok.h = static_cast<double>(r.f32());
      unsigned char cat;
      r.bytes(&cat, 1);
      if (cat > 2) throw Error(ErrorCategory::format, "bad box category " + std::to_string(cat));
      tok.category = static_cast<BoxCategory>(cat);
    }
  }
  ep.label = static_cast<int>(r.u16());
  ep.object_id = static_cast<int>(r.u16());
  return ep;
}

}  // namespace mmdl
