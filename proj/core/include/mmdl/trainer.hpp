#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmdl/distill.hpp"
#include "mmdl/nets.hpp"
#include "mmdl/synthworld.hpp"

namespace mmdl {

struct OptimHyper {
  double peak_lr = 3e-4;  // desk-scale default; the paper preset uses 5e-5
  double weight_decay = 1e-3;
  double grad_clip = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 20;
  int batch_size = 32;
  double warmup_fraction = 0.10;

  void validate() const;
};

struct OptimState {
  std::vector<std::vector<double>> m, v;  // parallel to the parameter entries
  std::int64_t step = 0;
};

// linear 0 -> peak over the first ceil(warmup * total) steps, then linear
// peak -> 0 at total_steps
double lr_at(std::int64_t step, std::int64_t total_steps, const OptimHyper& h);

// scales all gradients so the global L2 norm is at most max_norm; returns
// the pre-clip norm
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm = 5.0);

// bias-corrected Adam step plus decoupled decay (p -= lr*wd*p_old)
void adamw_update(ModelParams& params, const std::vector<std::vector<double>>& grads, OptimState& state,
                  double lr, const OptimHyper& h);

enum class RunRole { baseline, student, omnivore };
const char* to_string(RunRole r);

struct RunConfig {
  RunRole role = RunRole::baseline;
  Modality modality = Modality::rgb;  // baseline: trained modality; student/omnivore: rgb
  ArchConfig arch;
  OptimHyper optim;
  DistillConfig distill;          // student only
  std::string teacher_spec_path;  // student only
  std::string dataset_path;
  std::string split = "standard";  // standard | comp
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string run_name;
  int workers = 1;
  bool desync_view_hook = false;  // test hook: perturbs the student's view

  void validate() const;
  std::uint64_t config_hash() const;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0;
  double top1 = 0, top5 = 0;
  double lr = 0;
  double teacher_agree = 0;      // student runs
  std::uint64_t view_hash = 0;   // student runs: rolling hash over view pairs
  std::int64_t n_rgb = 0, n_flow = 0, n_canvas = 0;  // omnivore modality picks
};

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  std::vector<EpochRow> epochs;
  double final_top1 = 0, final_top5 = 0;
  std::int64_t total_steps = 0;
};

TrainResult train_model(const RunConfig& run);
TrainResult train_student(const RunConfig& run);
TrainResult train_omnivore(const RunConfig& run);

}  // namespace mmdl
