#include "mmdl/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <sstream>

#include "mmdl/threading.hpp"

namespace mmdl {

const char* to_string(MethodKind k) {
  switch (k) {
    case MethodKind::baseline: return "baseline";
    case MethodKind::teacher: return "teacher";
    case MethodKind::student: return "student";
    case MethodKind::omnivore: return "omnivore";
  }
  return "?";
}

double topk_accuracy(const std::vector<LogitVec>& logits, const std::vector<int>& labels, int k) {
  if (logits.empty()) throw Error(ErrorCategory::contract, "topk_accuracy: empty input");
  if (logits.size() != labels.size())
    throw Error(ErrorCategory::dimension, "topk_accuracy: " + std::to_string(logits.size()) +
                                              " logit rows vs " + std::to_string(labels.size()) + " labels");
  const auto c = logits[0].size();
  if (k < 1 || static_cast<std::size_t>(k) > c)
    throw Error(ErrorCategory::contract, "topk_accuracy: k out of range");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& z = logits[i];
    if (z.size() != c) throw Error(ErrorCategory::dimension, "topk_accuracy: ragged logits");
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw Error(ErrorCategory::contract, "topk_accuracy: label out of range");
    const double lz = z[static_cast<std::size_t>(label)];
    // rank with ties broken toward the lower class index
    std::size_t rank = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (z[j] > lz) ++rank;
      else if (z[j] == lz && j < static_cast<std::size_t>(label)) ++rank;
    }
    if (rank < static_cast<std::size_t>(k)) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.size());
}

EvalOutput evaluate(const std::vector<const ModelParams*>& members, const Dataset& dataset,
                    const SplitManifest& manifest, int workers) {
  if (members.empty()) throw Error(ErrorCategory::config, "evaluate: no models");
  const int n_classes = members[0]->arch.n_classes;
  for (const auto* m : members) {
    if (m->arch.n_classes != n_classes)
      throw Error(ErrorCategory::config, "evaluate: members disagree on n_classes");
    if (m->modality != Modality::boxes && m->arch.image_size != dataset.header().canvas)
      throw Error(ErrorCategory::config, "evaluate: model image_size does not match dataset canvas");
  }
  const auto n = static_cast<std::int64_t>(manifest.episode_ids.size());
  if (n == 0) throw Error(ErrorCategory::contract, "evaluate: empty manifest");

  const ViewPlan eval_view =
      sample_view_plan(dataset.header().raw_length, dataset.header().canvas, false, nullptr);

  std::vector<LogitVec> all_logits(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](std::int64_t i) {
    Episode ep = dataset.episode(manifest.episode_ids[static_cast<std::size_t>(i)]);
    std::vector<LogitVec> member_logits;
    member_logits.reserve(members.size());
    for (const auto* m : members) member_logits.push_back(model_logits(*m, ep, eval_view));
    all_logits[static_cast<std::size_t>(i)] = ensemble_logits(member_logits);
  });

  EvalOutput out;
  out.n = n;
  out.top1 = topk_accuracy(all_logits, manifest.labels, 1);
  out.top5 = topk_accuracy(all_logits, manifest.labels, std::min(5, n_classes));
  return out;
}

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fmt_delta(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", v);
  return buf;
}

std::string fmt_hash(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct PaperRow {
  const char* method;
  const char* modalities;
  double std_top1, std_top5, comp_top1, comp_top5;
};

// Table 1 reference values, printed for side-by-side context only.
constexpr PaperRow kPaperRows[] = {
    {"baseline (paper)", "RGB frames", 59.6, 85.6, 51.7, 78.1},
    {"teacher (paper)", "RGB + flow + detections", 65.7, 90.2, 63.2, 87.3},
    {"student (paper)", "RGB frames", 63.9, 89.2, 59.4, 85.4},
    {"omnivore (paper)", "RGB frames", 62.5, 88.1, 56.8, 83.3},
};

}  // namespace

Report emit_table(const std::vector<EvalResult>& results, const std::string& baseline_name) {
  // baseline row per split, for the delta columns
  std::vector<std::string> splits;
  for (const auto& r : results)
    if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) splits.push_back(r.split);
  std::sort(splits.begin(), splits.end(), [](const std::string& a, const std::string& b) {
    auto key = [](const std::string& s) { return s == "standard" ? 0 : s == "comp" ? 1 : 2; };
    return key(a) < key(b) || (key(a) == key(b) && a < b);
  });

  auto find_baseline = [&](const std::string& split) -> const EvalResult* {
    for (const auto& r : results)
      if (r.method == baseline_name && r.split == split) return &r;
    return nullptr;
  };
  for (const auto& s : splits)
    if (!find_baseline(s))
      throw Error(ErrorCategory::config,
                  "emit_table: baseline '" + baseline_name + "' missing for split '" + s + "'");

  std::vector<const EvalResult*> ordered;
  for (auto kind : {MethodKind::baseline, MethodKind::teacher, MethodKind::student, MethodKind::omnivore})
    for (const auto& s : splits)
      for (const auto& r : results)
        if (r.kind == kind && r.split == s) ordered.push_back(&r);

  // markdown: one row per method, split columns side by side
  std::vector<std::string> methods;
  for (const auto* r : ordered)
    if (std::find(methods.begin(), methods.end(), r->method) == methods.end()) methods.push_back(r->method);

  auto find_result = [&](const std::string& method, const std::string& split) -> const EvalResult* {
    for (const auto& r : results)
      if (r.method == method && r.split == split) return &r;
    return nullptr;
  };

  std::ostringstream md;
  md << "# Action recognition accuracy\n\n";
  md << "| Method | Modalities at inference |";
  for (const auto& s : splits) md << " " << s << " Top-1 | " << s << " Top-5 |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < splits.size(); ++i) md << "---|---|";
  md << "\n";
  MethodKind last_kind = MethodKind::baseline;
  bool first_row = true;
  for (const auto& method : methods) {
    const EvalResult* any = nullptr;
    for (const auto& s : splits)
      if (auto* r = find_result(method, s)) any = r;
    if (!any) continue;
    if (!first_row && any->kind != last_kind) {
      md << "| | |";
      for (std::size_t i = 0; i < splits.size(); ++i) md << " | |";
      md << "\n";
    }
    first_row = false;
    last_kind = any->kind;
    md << "| " << method << " | " << any->modalities << " |";
    for (const auto& s : splits) {
      const auto* r = find_result(method, s);
      if (!r) {
        md << " - | - |";
        continue;
      }
      const auto* base = find_baseline(s);
      if (r->method == baseline_name) {
        md << " " << fmt1(r->top1) << " | " << fmt1(r->top5) << " |";
      } else {
        md << " " << fmt1(r->top1) << " (" << fmt_delta(r->top1 - base->top1) << ") | " << fmt1(r->top5)
           << " (" << fmt_delta(r->top5 - base->top5) << ") |";
      }
    }
    md << "\n";
  }

  md << "\n## Paper reference (paper, not reproduced)\n\n";
  md << "| Method | Modalities at inference | standard Top-1 | standard Top-5 | comp Top-1 | comp Top-5 |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& p : kPaperRows)
    md << "| " << p.method << " | " << p.modalities << " | " << fmt1(p.std_top1) << " | " << fmt1(p.std_top5)
       << " | " << fmt1(p.comp_top1) << " | " << fmt1(p.comp_top5) << " |\n";

  std::ostringstream tsv;
  tsv << "method\tmodalities\tsplit\ttop1\ttop5\tdelta_top1\tdelta_top5\tseed\tconfig_hash\n";
  for (const auto* r : ordered) {
    const auto* base = find_baseline(r->split);
    tsv << r->method << '\t' << r->modalities << '\t' << r->split << '\t' << fmt1(r->top1) << '\t'
        << fmt1(r->top5) << '\t' << fmt_delta(r->top1 - base->top1) << '\t'
        << fmt_delta(r->top5 - base->top5) << '\t' << r->seed << '\t' << fmt_hash(r->config_hash) << '\n';
  }

  return {md.str(), tsv.str()};
}

}  // namespace mmdl
