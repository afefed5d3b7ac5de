#include "mmdl/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <sstream>

#include "mmdl/checkpoint.hpp"
#include "mmdl/log.hpp"

namespace mmdl {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

EvalResult make_result(const std::string& method, MethodKind kind, const std::string& modalities,
                       const std::string& split, const EvalOutput& out, std::uint64_t seed,
                       std::uint64_t config_hash) {
  EvalResult r;
  r.method = method;
  r.kind = kind;
  r.modalities = modalities;
  r.split = split;
  r.top1 = out.top1;
  r.top5 = out.top5;
  r.n_samples = out.n;
  r.seed = seed;
  r.config_hash = config_hash;
  return r;
}

}  // namespace

PipelineResult run_repro(const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(cfg.out_dir);
  const std::string data_path = cfg.out_dir + "/data.mmds";

  generate_dataset(cfg.gen, cfg.seed, data_path, cfg.workers);
  logging::info("dataset ready after %.1fs", seconds_since(t0));

  Dataset dataset = Dataset::load(data_path);
  auto manifests = load_manifests(data_path + ".manifest.tsv");
  auto manifest = [&](const std::string& name) -> const SplitManifest& {
    for (const auto& m : manifests)
      if (m.name == name) return m;
    throw Error(ErrorCategory::config, "missing manifest " + name);
  };

  auto base_run = [&](Modality m, const std::string& split) {
    RunConfig run;
    run.role = RunRole::baseline;
    run.modality = m;
    run.arch = cfg.arch;
    run.optim = cfg.optim;
    run.dataset_path = data_path;
    run.split = split;
    run.seed = cfg.seed;
    run.out_dir = cfg.out_dir;
    run.run_name = std::string("baseline-") + to_string(m) + "-" + split;
    run.workers = cfg.workers;
    return run;
  };

  struct Trained {
    std::string name;
    TrainResult result;
  };
  std::vector<Trained> trained;
  auto train_baseline = [&](Modality m, const std::string& split) {
    auto run = base_run(m, split);
    logging::info("training %s", run.run_name.c_str());
    trained.push_back({run.run_name, train_model(run)});
    logging::info("%s done (%.1fs elapsed)", run.run_name.c_str(), seconds_since(t0));
    return trained.back().result.checkpoint_path;
  };

  const std::string rgb_std_ckpt = train_baseline(Modality::rgb, "standard");
  const std::string box_std_ckpt = train_baseline(Modality::boxes, "standard");
  (void)rgb_std_ckpt;
  (void)box_std_ckpt;
  const std::string rgb_comp_ckpt = train_baseline(Modality::rgb, "comp");
  const std::string box_comp_ckpt = train_baseline(Modality::boxes, "comp");
  const std::string flow_comp_ckpt = train_baseline(Modality::flow, "comp");

  // teacher specs over the comp-trained members
  TeacherSpec teacher_all;
  teacher_all.members = {{rgb_comp_ckpt, Modality::rgb},
                         {flow_comp_ckpt, Modality::flow},
                         {box_comp_ckpt, Modality::boxes}};
  const std::string teacher_all_path = cfg.out_dir + "/teacher-all.tsv";
  teacher_all.save(teacher_all_path);

  TeacherSpec teacher_rb;
  teacher_rb.members = {{rgb_comp_ckpt, Modality::rgb}, {box_comp_ckpt, Modality::boxes}};
  const std::string teacher_rb_path = cfg.out_dir + "/teacher-rgb-boxes.tsv";
  teacher_rb.save(teacher_rb_path);

  RunConfig student_run;
  student_run.role = RunRole::student;
  student_run.modality = Modality::rgb;
  student_run.arch = cfg.arch;
  student_run.optim = cfg.optim;
  student_run.distill = cfg.distill;
  student_run.teacher_spec_path = teacher_all_path;
  student_run.dataset_path = data_path;
  student_run.split = "comp";
  student_run.seed = cfg.seed;
  student_run.out_dir = cfg.out_dir;
  student_run.run_name = "student-comp";
  student_run.workers = cfg.workers;
  logging::info("training %s", student_run.run_name.c_str());
  auto student_result = train_student(student_run);
  logging::info("student done (%.1fs elapsed)", seconds_since(t0));

  RunConfig omni_run;
  omni_run.role = RunRole::omnivore;
  omni_run.modality = Modality::rgb;
  omni_run.arch = cfg.arch;
  omni_run.optim = cfg.optim;
  omni_run.dataset_path = data_path;
  omni_run.split = "comp";
  omni_run.seed = cfg.seed;
  omni_run.out_dir = cfg.out_dir;
  omni_run.run_name = "omnivore-comp";
  omni_run.workers = cfg.workers;
  logging::info("training %s", omni_run.run_name.c_str());
  auto omni_result = train_omnivore(omni_run);
  logging::info("omnivore done (%.1fs elapsed)", seconds_since(t0));

  // evaluations
  auto load = [&](const std::string& path) { return load_model(path); };
  ModelParams rgb_std = load(cfg.out_dir + "/baseline-rgb-standard.ckpt");
  ModelParams box_std = load(cfg.out_dir + "/baseline-boxes-standard.ckpt");
  ModelParams rgb_comp = load(rgb_comp_ckpt);
  ModelParams box_comp = load(box_comp_ckpt);
  ModelParams flow_comp = load(flow_comp_ckpt);
  ModelParams student = load(student_result.checkpoint_path);
  ModelParams omni = load(omni_result.checkpoint_path);

  const auto& std_test = manifest("standard-test");
  const auto& comp_test = manifest("comp-test");
  const std::uint64_t seed = cfg.seed;

  std::vector<EvalResult> results;
  auto eval1 = [&](const ModelParams& m, const SplitManifest& man) {
    return evaluate({&m}, dataset, man, cfg.workers);
  };
  results.push_back(make_result("baseline-rgb", MethodKind::baseline, "RGB frames", "standard",
                                eval1(rgb_std, std_test), seed, 0));
  results.push_back(make_result("baseline-boxes", MethodKind::baseline, "Obj. detections", "standard",
                                eval1(box_std, std_test), seed, 0));
  results.push_back(make_result("baseline-rgb", MethodKind::baseline, "RGB frames", "comp",
                                eval1(rgb_comp, comp_test), seed, 0));
  results.push_back(make_result("baseline-boxes", MethodKind::baseline, "Obj. detections", "comp",
                                eval1(box_comp, comp_test), seed, 0));
  results.push_back(make_result("baseline-flow", MethodKind::baseline, "Optical flow", "comp",
                                eval1(flow_comp, comp_test), seed, 0));
  results.push_back(make_result("teacher-all", MethodKind::teacher, "RGB + flow + detections", "comp",
                                evaluate({&rgb_comp, &flow_comp, &box_comp}, dataset, comp_test, cfg.workers),
                                seed, 0));
  results.push_back(make_result("teacher-rgb-boxes", MethodKind::teacher, "RGB + detections", "comp",
                                evaluate({&rgb_comp, &box_comp}, dataset, comp_test, cfg.workers), seed, 0));
  results.push_back(make_result("student", MethodKind::student, "RGB frames", "comp",
                                eval1(student, comp_test), seed, 0));
  results.push_back(make_result("omnivore", MethodKind::omnivore, "RGB frames", "comp",
                                eval1(omni, comp_test), seed, 0));
  // path-free so reports from different out dirs compare byte-identically
  std::ostringstream cfg_key;
  cfg_key << cfg.arch.to_descriptor(Modality::rgb) << cfg.optim.peak_lr << ' ' << cfg.optim.epochs << ' '
          << cfg.optim.batch_size << ' ' << cfg.distill.tau << ' ' << cfg.gen.n_objects << ' '
          << cfg.gen.comp_train << ' ' << seed;
  const std::uint64_t pipeline_hash = fnv1a64(cfg_key.str());
  for (auto& r : results) r.config_hash = mix64(pipeline_hash, fnv1a64(r.method + "/" + r.split));

  auto find = [&](const std::string& method, const std::string& split) -> const EvalResult& {
    for (const auto& r : results)
      if (r.method == method && r.split == split) return r;
    throw Error(ErrorCategory::contract, "missing result " + method + "/" + split);
  };

  OrderingChecks ch;
  ch.rgb_drop = find("baseline-rgb", "standard").top1 - find("baseline-rgb", "comp").top1;
  ch.box_drop = find("baseline-boxes", "standard").top1 - find("baseline-boxes", "comp").top1;
  ch.teacher3_comp = find("teacher-all", "comp").top1;
  ch.best_baseline_comp = std::max({find("baseline-rgb", "comp").top1, find("baseline-boxes", "comp").top1,
                                    find("baseline-flow", "comp").top1});
  ch.rgb_comp = find("baseline-rgb", "comp").top1;
  ch.student_comp = find("student", "comp").top1;
  ch.omni_comp = find("omnivore", "comp").top1;
  ch.teacher_rb_comp = find("teacher-rgb-boxes", "comp").top1;
  ch.drop_gap = ch.rgb_drop - ch.box_drop >= 3.0;
  ch.teacher_beats_all = ch.teacher3_comp > ch.best_baseline_comp;
  ch.student_gain = ch.student_comp - ch.rgb_comp >= 3.0;
  ch.omni_beats_rgb = ch.omni_comp > ch.rgb_comp;
  ch.student_beats_omni = ch.student_comp > ch.omni_comp;
  ch.student_vs_teacher_rb = ch.student_comp - ch.teacher_rb_comp;

  Report report = emit_table(results, "baseline-rgb");
  std::ostringstream md;
  md << report.markdown << "\n## Ordering checks (seed " << seed << ")\n\n";
  auto mark = [](bool ok) { return ok ? "[PASS]" : "[FAIL]"; };
  char line[256];
  std::snprintf(line, sizeof line,
                "- %s rgb drop (%.1f) exceeds box drop (%.1f) by >= 3\n", mark(ch.drop_gap), ch.rgb_drop,
                ch.box_drop);
  md << line;
  std::snprintf(line, sizeof line, "- %s 3-modality teacher (%.1f) > best baseline (%.1f)\n",
                mark(ch.teacher_beats_all), ch.teacher3_comp, ch.best_baseline_comp);
  md << line;
  std::snprintf(line, sizeof line, "- %s student (%.1f) beats rgb baseline (%.1f) by >= 3\n",
                mark(ch.student_gain), ch.student_comp, ch.rgb_comp);
  md << line;
  std::snprintf(line, sizeof line, "- %s omnivore (%.1f) > rgb baseline (%.1f)\n", mark(ch.omni_beats_rgb),
                ch.omni_comp, ch.rgb_comp);
  md << line;
  std::snprintf(line, sizeof line, "- %s student (%.1f) > omnivore (%.1f)\n", mark(ch.student_beats_omni),
                ch.student_comp, ch.omni_comp);
  md << line;
  std::snprintf(line, sizeof line, "- [INFO] student vs rgb+boxes teacher: %+.1f (recorded, not gated)\n",
                ch.student_vs_teacher_rb);
  md << line;

  PipelineResult out;
  out.results = std::move(results);
  out.checks = ch;
  out.report_md_path = cfg.out_dir + "/report.md";
  out.report_tsv_path = cfg.out_dir + "/report.tsv";
  const std::string md_str = md.str();
  wire::write_file(out.report_md_path, std::vector<unsigned char>(md_str.begin(), md_str.end()));
  wire::write_file(out.report_tsv_path, std::vector<unsigned char>(report.tsv.begin(), report.tsv.end()));
  logging::info("repro finished in %.1fs; report at %s", seconds_since(t0), out.report_md_path.c_str());
  return out;
}

}  // namespace mmdl
