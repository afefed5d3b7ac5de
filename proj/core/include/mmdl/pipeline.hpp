#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmdl/metrics.hpp"
#include "mmdl/trainer.hpp"

namespace mmdl {

// One end-to-end reproduction: dataset, five baselines, teachers, student,
// omnivore, evaluations and the comparison report.
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string out_dir;
  GeneratorConfig gen;
  ArchConfig arch;
  OptimHyper optim;
  DistillConfig distill;
  int workers = 2;
};

struct OrderingChecks {
  double rgb_drop = 0, box_drop = 0;         // standard - comp top1
  double teacher3_comp = 0, best_baseline_comp = 0;
  double student_comp = 0, rgb_comp = 0, omni_comp = 0, teacher_rb_comp = 0;
  bool drop_gap = false;        // rgb drop exceeds box drop by >= 3
  bool teacher_beats_all = false;
  bool student_gain = false;    // student - rgb baseline >= 3 on comp
  bool omni_beats_rgb = false;
  bool student_beats_omni = false;
  double student_vs_teacher_rb = 0;  // recorded, not gated
};

struct PipelineResult {
  std::vector<EvalResult> results;
  OrderingChecks checks;
  std::string report_md_path;
  std::string report_tsv_path;
};

PipelineResult run_repro(const PipelineConfig& cfg);

}  // namespace mmdl
