// Command-line front end: dataset generation, training, distillation,
// evaluation, reporting, gradient checking and the end-to-end repro run.

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mmdl/checkpoint.hpp"
#include "mmdl/gradsuite.hpp"
#include "mmdl/log.hpp"
#include "mmdl/metrics.hpp"
#include "mmdl/pipeline.hpp"
#include "mmdl/threading.hpp"
#include "mmdl/trainer.hpp"

namespace {

using namespace mmdl;

struct CommonOpts {
  std::string out;
  std::string dataset;
  std::string split = "standard";
  std::string modality = "rgb";
  std::string teacher;
  std::string checkpoint;
  std::uint64_t seed = 1;
  int epochs = 20;
  int batch_size = 32;
  double lr = 3e-4;
  double tau = 10.0;
  std::string preset = "desk";
  int workers = default_workers();
  // generator sizes (desk-scale defaults; overridable for quick experiments)
  int gen_train = 3000;
  int gen_test = 600;
};

void add_config_flag(CLI::App* cmd) {
  cmd->set_config("--config", "", "key=value config file (flags override file values)");
}

void apply_preset(const CLI::App* cmd, CommonOpts& o) {
  if (o.preset == "desk") return;
  if (o.preset != "paper") throw Error(ErrorCategory::usage, "--preset must be desk or paper");
  // paper protocol: peak lr 5e-5, tau 10, 20 epochs
  if (cmd->count("--lr") == 0) o.lr = 5e-5;
  if (cmd->count("--tau") == 0) o.tau = 10.0;
  if (cmd->count("--epochs") == 0) o.epochs = 20;
}

GeneratorConfig make_gen(const CommonOpts& o) {
  GeneratorConfig g;
  g.standard_train = o.gen_train;
  g.standard_test = o.gen_test;
  g.comp_train = o.gen_train;
  g.comp_test = o.gen_test;
  return g;
}

RunConfig make_run(const CommonOpts& o, RunRole role) {
  RunConfig run;
  run.role = role;
  run.modality = role == RunRole::baseline ? modality_from_string(o.modality) : Modality::rgb;
  run.arch.in_channels = run.modality == Modality::flow ? 2 : 3;
  run.optim.peak_lr = o.lr;
  run.optim.epochs = o.epochs;
  run.optim.batch_size = o.batch_size;
  run.distill.tau = o.tau;
  run.teacher_spec_path = o.teacher;
  run.dataset_path = o.dataset;
  run.split = o.split;
  run.seed = o.seed;
  run.out_dir = o.out;
  run.workers = o.workers;
  return run;
}

void print_train_result(const TrainResult& r) {
  std::printf("checkpoint\t%s\n", r.checkpoint_path.c_str());
  std::printf("metrics\t%s\n", r.metrics_path.c_str());
  std::printf("final_top1\t%.2f\nfinal_top5\t%.2f\n", r.final_top1, r.final_top5);
}

int run_eval(const CommonOpts& o, const std::string& method_label) {
  Dataset dataset = Dataset::load(o.dataset);
  auto manifests = load_manifests(o.dataset + ".manifest.tsv");
  const SplitManifest* manifest = nullptr;
  for (const auto& m : manifests)
    if (m.name == o.split + "-test") manifest = &m;
  if (!manifest) throw Error(ErrorCategory::config, "missing manifest " + o.split + "-test");

  std::vector<ModelParams> loaded;
  std::string modalities;
  if (!o.teacher.empty()) {
    Teacher teacher = load_teacher(TeacherSpec::load(o.teacher));
    for (auto& m : teacher.members) {
      if (!modalities.empty()) modalities += "+";
      modalities += to_string(m.modality);
      loaded.push_back(std::move(m));
    }
  } else if (!o.checkpoint.empty()) {
    loaded.push_back(load_model(o.checkpoint));
    modalities = to_string(loaded.back().modality);
  } else {
    throw Error(ErrorCategory::usage, "eval needs --checkpoint or --teacher");
  }
  std::vector<const ModelParams*> members;
  for (const auto& m : loaded) members.push_back(&m);
  auto out = evaluate(members, dataset, *manifest, o.workers);
  std::printf("method\t%s\nsplit\t%s\ntop1\t%.2f\ntop5\t%.2f\nn\t%lld\n", method_label.c_str(),
              o.split.c_str(), out.top1, out.top5, static_cast<long long>(out.n));
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    std::ostringstream row;
    row << method_label << '\t' << modalities << '\t' << o.split << '\t' << out.top1 << '\t' << out.top5
        << '\t' << out.n << '\t' << o.seed << '\n';
    const std::string path = o.out + "/evals.tsv";
    std::string existing;
    if (std::filesystem::exists(path)) {
      auto bytes = wire::read_file(path);
      existing.assign(bytes.begin(), bytes.end());
    }
    existing += row.str();
    wire::write_file(path, std::vector<unsigned char>(existing.begin(), existing.end()));
  }
  return 0;
}

int run_report(const CommonOpts& o, const std::string& baseline_name) {
  const std::string path = o.out + "/evals.tsv";
  auto bytes = wire::read_file(path);
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  std::vector<EvalResult> results;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EvalResult r;
    std::string top1, top5, n, seed;
    if (!std::getline(ls, r.method, '\t') || !std::getline(ls, r.modalities, '\t') ||
        !std::getline(ls, r.split, '\t') || !std::getline(ls, top1, '\t') || !std::getline(ls, top5, '\t') ||
        !std::getline(ls, n, '\t') || !std::getline(ls, seed, '\t'))
      throw Error(ErrorCategory::format, path + ": bad eval row: " + line);
    r.top1 = std::stod(top1);
    r.top5 = std::stod(top5);
    r.n_samples = std::stoll(n);
    r.seed = std::stoull(seed);
    r.config_hash = fnv1a64(r.method + "/" + r.split);
    if (r.method.rfind("teacher", 0) == 0) r.kind = MethodKind::teacher;
    else if (r.method.rfind("student", 0) == 0) r.kind = MethodKind::student;
    else if (r.method.rfind("omnivore", 0) == 0) r.kind = MethodKind::omnivore;
    else r.kind = MethodKind::baseline;
    results.push_back(std::move(r));
  }
  Report report = emit_table(results, baseline_name);
  wire::write_file(o.out + "/report.md",
                   std::vector<unsigned char>(report.markdown.begin(), report.markdown.end()));
  wire::write_file(o.out + "/report.tsv", std::vector<unsigned char>(report.tsv.begin(), report.tsv.end()));
  std::printf("%s\n", report.markdown.c_str());
  return 0;
}

int run_gradcheck_cmd() {
  auto entries = run_gradcheck_suite(true);
  bool all_ok = true;
  for (const auto& e : entries) {
    std::printf("%-24s max_rel_err %.3e (tol %.0e) %s\n", e.name.c_str(), e.max_rel_err, e.tolerance,
                e.ok() ? "ok" : "FAIL");
    all_ok = all_ok && e.ok();
  }
  if (!all_ok) throw Error(ErrorCategory::numeric, "gradient check failed");
  return 0;
}

int run_repro_cmd(const CommonOpts& o) {
  PipelineConfig cfg;
  cfg.seed = o.seed;
  cfg.out_dir = o.out;
  cfg.gen = make_gen(o);
  cfg.optim.peak_lr = o.lr;
  cfg.optim.epochs = o.epochs;
  cfg.optim.batch_size = o.batch_size;
  cfg.distill.tau = o.tau;
  cfg.workers = o.workers;
  auto result = run_repro(cfg);
  std::printf("report\t%s\n", result.report_md_path.c_str());
  const auto& c = result.checks;
  std::printf("drop_gap\t%s\nteacher_beats_all\t%s\nstudent_gain\t%s\nomni_beats_rgb\t%s\nstudent_beats_omni\t%s\n",
              c.drop_gap ? "PASS" : "FAIL", c.teacher_beats_all ? "PASS" : "FAIL",
              c.student_gain ? "PASS" : "FAIL", c.omni_beats_rgb ? "PASS" : "FAIL",
              c.student_beats_omni ? "PASS" : "FAIL");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal knowledge distillation for action recognition on a synthetic benchmark"};
  app.require_subcommand(1);

  CommonOpts o;

  auto add_common = [&](CLI::App* cmd, bool with_train_flags) {
    cmd->add_option("--out", o.out, "output directory (all writes stay inside it)");
    cmd->add_option("--seed", o.seed, "global seed")->capture_default_str();
    cmd->add_option("--workers", o.workers, "worker threads; results do not depend on it")
        ->capture_default_str();
    add_config_flag(cmd);
    if (with_train_flags) {
      cmd->add_option("--dataset", o.dataset, "dataset container path");
      cmd->add_option("--split", o.split, "standard|comp")->capture_default_str();
      cmd->add_option("--epochs", o.epochs, "training epochs")->capture_default_str();
      cmd->add_option("--batch-size", o.batch_size, "batch size")->capture_default_str();
      cmd->add_option("--lr", o.lr, "peak learning rate")->capture_default_str();
      cmd->add_option("--tau", o.tau, "distillation temperature")->capture_default_str();
      cmd->add_option("--preset", o.preset, "desk|paper hyperparameter preset")->capture_default_str();
    }
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and split manifests");
  add_common(gen, false);
  gen->add_option("--gen-train", o.gen_train, "train episodes per split type")->capture_default_str();
  gen->add_option("--gen-test", o.gen_test, "test episodes per split type")->capture_default_str();

  auto* train = app.add_subcommand("train", "train a per-modality baseline with cross-entropy");
  add_common(train, true);
  train->add_option("--modality", o.modality, "rgb|flow|boxes")->capture_default_str();

  auto* distill = app.add_subcommand("distill", "train the RGB student against a frozen teacher");
  add_common(distill, true);
  distill->add_option("--teacher", o.teacher, "teacher spec file (checkpoint\\tmodality lines)");

  auto* omni = app.add_subcommand("train-omnivore", "train the omnivorous model (3x epochs)");
  add_common(omni, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or teacher ensemble on a split");
  add_common(eval, false);
  eval->add_option("--dataset", o.dataset, "dataset container path");
  eval->add_option("--split", o.split, "standard|comp")->capture_default_str();
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  eval->add_option("--teacher", o.teacher, "teacher spec file");
  std::string method_label = "eval";
  eval->add_option("--method", method_label, "method label for the evals table")->capture_default_str();

  auto* report = app.add_subcommand("report", "emit report.md/report.tsv from --out/evals.tsv");
  add_common(report, false);
  std::string baseline_name = "baseline-rgb";
  report->add_option("--baseline", baseline_name, "baseline row for the delta columns")
      ->capture_default_str();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op and model");

  auto* repro = app.add_subcommand("repro", "end-to-end pipeline: data, training runs, report");
  add_common(repro, true);
  repro->add_option("--gen-train", o.gen_train, "train episodes per split type")->capture_default_str();
  repro->add_option("--gen-test", o.gen_test, "test episodes per split type")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error:usage: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) {
      if (o.out.empty()) throw Error(ErrorCategory::usage, "gen-data needs --out");
      generate_dataset(make_gen(o), o.seed, o.out, o.workers);
      std::printf("dataset\t%s\nmanifest\t%s.manifest.tsv\n", o.out.c_str(), o.out.c_str());
      return 0;
    }
    if (train->parsed()) {
      apply_preset(train, o);
      auto run = make_run(o, RunRole::baseline);
      run.run_name = "baseline-" + o.modality + "-" + o.split;
      print_train_result(train_model(run));
      return 0;
    }
    if (distill->parsed()) {
      apply_preset(distill, o);
      auto run = make_run(o, RunRole::student);
      run.run_name = "student-" + o.split;
      print_train_result(train_student(run));
      return 0;
    }
    if (omni->parsed()) {
      apply_preset(omni, o);
      auto run = make_run(o, RunRole::omnivore);
      run.run_name = "omnivore-" + o.split;
      print_train_result(train_omnivore(run));
      return 0;
    }
    if (eval->parsed()) return run_eval(o, method_label);
    if (report->parsed()) return run_report(o, baseline_name);
    if (gradcheck->parsed()) return run_gradcheck_cmd();
    if (repro->parsed()) {
      apply_preset(repro, o);
      if (o.out.empty()) throw Error(ErrorCategory::usage, "repro needs --out");
      return run_repro_cmd(o);
    }
  } catch (const mmdl::Error& e) {
    std::fprintf(stderr, "error:%s\n", e.what());
    return e.category() == ErrorCategory::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error:internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
