#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmdl/nets.hpp"
#include "mmdl/rng.hpp"
#include "mmdl/tensor.hpp"

namespace mmdl {

// Action vocabulary of the synthetic benchmark (12 classes).
enum class Action : int {
  move_left = 0,
  move_right,
  move_up,
  move_down,
  move_up_left,
  move_up_right,
  move_down_left,
  move_down_right,
  grow,
  shrink,
  shake,
  orbit,
};
const char* action_name(int action_id);

struct GeneratorConfig {
  int n_objects = 24;
  int n_classes = 12;
  int canvas = 32;
  int raw_length = 16;
  int standard_train = 3000;
  int standard_test = 600;
  int comp_train = 3000;
  int comp_test = 600;
  int comp_test_objects = 8;  // comp-train gets the remaining identities
  int max_boxes = 4;          // per frame: 1 target + up to 3 distractors
  int min_distractors = 1;
  int max_distractors = 3;
  double dirichlet_alpha = 0.3;  // per-object skew of train action distributions
  double noise_sigma = 0.05;

  int comp_train_objects() const { return n_objects - comp_test_objects; }
  void validate() const;
};

struct BoxTrack {
  double cx = 0, cy = 0, w = 0, h = 0;  // pixels, canvas coordinates
};

struct DistractorSpec {
  int object_id = 0;
  std::vector<BoxTrack> track;  // raw_length entries
};

struct EpisodeSpec {
  int object_id = 0;
  int action_id = 0;
  std::vector<BoxTrack> trajectory;  // raw_length entries, target box per frame
  std::vector<DistractorSpec> distractors;
  std::uint64_t noise_seed = 0;
  int canvas = 32;
  int raw_length = 16;
  int max_boxes = 4;
  double noise_sigma = 0.05;
};

struct Episode {
  Tensor frames;                            // [raw, canvas, canvas, 3] in [0,1]
  Tensor flow;                              // [raw-1, canvas, canvas, 2] px/frame
  std::vector<std::vector<BoxToken>> boxes; // [raw][max_boxes], normalized, padded
  int label = 0;
  int object_id = 0;
  std::string split_tag;                    // filled when fetched via a manifest
};

struct SplitManifest {
  std::string name;  // standard-train | standard-test | comp-train | comp-test
  std::vector<std::int64_t> episode_ids;
  std::vector<int> labels;
  std::vector<int> object_ids;
  std::vector<int> object_vocabulary;
};

// Deterministic spec construction; the action's motion predicate is
// guaranteed on the returned trajectory.
EpisodeSpec sample_episode_spec(const GeneratorConfig& gen, int object_id, int action_id,
                                const std::vector<int>& distractor_vocab, Rng& rng);

bool action_predicate_holds(int action_id, const std::vector<BoxTrack>& trajectory);

Episode render_episode(const EpisodeSpec& spec);

// Omnivore input encoding: white canvas, 2px outlines, target red on top of
// distractor blue.
Tensor render_detection_canvas(const std::vector<BoxToken>& frame_boxes, int canvas = 32);

void hsv_to_rgb(double h, double s, double v, double rgb[3]);

// train: sorted uniform sample without replacement; eval: regular intervals.
// Flow consumers clamp the last index themselves.
std::vector<int> sample_clip(int raw_length, int n_frames, bool train_mode, Rng* rng);

// Container + manifest I/O. generate_dataset writes <out> and
// <out>.manifest.tsv; episode rendering is parallel over `workers` with
// per-episode seeds, so output is independent of worker count.
void generate_dataset(const GeneratorConfig& gen, std::uint64_t seed, const std::string& out_path,
                      int workers = 1);

void save_manifests(const std::string& path, const std::vector<SplitManifest>& manifests);
std::vector<SplitManifest> load_manifests(const std::string& path);

class Dataset {
 public:
  static Dataset load(const std::string& path);

  std::int64_t size() const { return count_; }
  const GeneratorConfig& header() const { return header_; }
  Episode episode(std::int64_t id) const;

  // byte-exact re-serialization of the loaded container
  void save(const std::string& path) const;

 private:
  GeneratorConfig header_;  // geometry fields only
  std::int64_t count_ = 0;
  std::size_t record_size_ = 0;
  std::vector<unsigned char> payload_;
};

}  // namespace mmdl
