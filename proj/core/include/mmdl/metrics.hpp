#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmdl/distill.hpp"
#include "mmdl/nets.hpp"
#include "mmdl/synthworld.hpp"

namespace mmdl {

enum class MethodKind { baseline, teacher, student, omnivore };
const char* to_string(MethodKind k);

struct EvalResult {
  std::string method;      // e.g. "baseline-rgb"
  MethodKind kind = MethodKind::baseline;
  std::string modalities;  // modalities at inference, display label
  std::string split;       // standard | comp
  double top1 = 0;         // percentage
  double top5 = 0;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

// Fraction (as a percentage) of samples whose label ranks in the k largest
// logits; ties break toward the lower class index.
double topk_accuracy(const std::vector<LogitVec>& logits, const std::vector<int>& labels, int k);

// Deterministic eval-mode pass over every manifest episode; multiple members
// are combined with ensemble_logits.
struct EvalOutput {
  double top1 = 0;
  double top5 = 0;
  std::int64_t n = 0;
};
EvalOutput evaluate(const std::vector<const ModelParams*>& members, const Dataset& dataset,
                    const SplitManifest& manifest, int workers = 1);

struct Report {
  std::string markdown;
  std::string tsv;
};

// Table-1-shaped comparison: groups ordered baselines / teachers / students /
// omnivore, per-split Top-1/Top-5 columns, deltas against `baseline_name`,
// plus the fixed paper reference block.
Report emit_table(const std::vector<EvalResult>& results, const std::string& baseline_name);

}  // namespace mmdl
