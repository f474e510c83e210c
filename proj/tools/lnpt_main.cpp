// lnpt command-line driver: train-teacher, prune, distill, report, run.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure,
// 4 I/O error.

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "lnpt/error.hpp"
#include "lnpt/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 2, kNumeric = 3, kIo = 4 };

struct Overrides {
  std::optional<double> ratio;
  std::optional<std::string> criterion;
  std::optional<double> alpha;
  std::optional<double> temp;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> score_sampling;
  std::optional<std::string> lnpt_hessian;
};

void add_prune_flags(CLI::App* app, Overrides& o) {
  app->add_option("--ratio", o.ratio, "Pruning ratio in [0, 1)");
  app->add_option("--criterion", o.criterion, "lnpt|snip|grasp|synflow|magnitude|random");
  app->add_option("--score-sampling", o.score_sampling, "balanced-true|balanced-pseudo|uniform");
  app->add_option("--lnpt-hessian", o.lnpt_hessian, "diag|hg");
}

void add_distill_flags(CLI::App* app, Overrides& o) {
  app->add_option("--alpha", o.alpha, "Feature-map loss weight");
  app->add_option("--temp", o.temp, "Feature-map temperature");
  app->add_option("--mode", o.mode, "lnpt|classical_kd|true_label|oh_only|fm_only");
}

// Overrides are applied after loading so the config file stays the single source of defaults.
lnpt::ExperimentConfig resolve(const std::string& path, const Overrides& o, bool teacher_scope) {
  lnpt::ExperimentConfig c = lnpt::load_config(path);
  if (o.ratio) c.prune.ratio = *o.ratio;
  if (o.criterion) c.prune.criterion = lnpt::criterion_from(*o.criterion);
  if (o.score_sampling) c.prune.sampling = lnpt::score_sampling_from(*o.score_sampling);
  if (o.lnpt_hessian) c.prune.lnpt_hessian = lnpt::lnpt_hessian_from(*o.lnpt_hessian);
  if (o.alpha) c.distill.alpha = *o.alpha;
  if (o.temp) c.distill.temperature = *o.temp;
  if (o.mode) c.distill.mode = lnpt::distill_mode_from(*o.mode);
  if (o.epochs) (teacher_scope ? c.teacher.training.epochs : c.distill.epochs) = *o.epochs;
  if (o.seed) {
    if (teacher_scope) {
      c.teacher.seed = *o.seed;
    } else {
      c.seeds = {*o.seed};
    }
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-free pruning at initialization and feature-map distillation"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  std::string teacher_path, run_dir, out_dir, reference;
  std::vector<std::string> runs;

  auto* tt = app.add_subcommand("train-teacher", "Supervised teacher training");
  tt->add_option("--config", config_path, "Experiment config (JSON)")->required();
  tt->add_option("--epochs", o.epochs, "Teacher epochs");
  tt->add_option("--seed", o.seed, "Teacher seed");

  auto* pr = app.add_subcommand("prune", "Score and mask a student for every seed");
  pr->add_option("--config", config_path, "Experiment config (JSON)")->required();
  pr->add_option("--teacher", teacher_path, "Teacher checkpoint (default <out>/teacher/teacher.ckpt)");
  pr->add_option("--run-dir", run_dir, "Run directory (default <out>/<tag>)");
  pr->add_option("--seed", o.seed, "Run a single seed");
  add_prune_flags(pr, o);
  add_distill_flags(pr, o);

  auto* di = app.add_subcommand("distill", "Label-free distillation of pruned students");
  di->add_option("--config", config_path, "Experiment config (JSON)")->required();
  di->add_option("--teacher", teacher_path, "Teacher checkpoint (default <out>/teacher/teacher.ckpt)");
  di->add_option("--run-dir", run_dir, "Run directory holding seed_<s>/pruned.ckpt");
  di->add_option("--epochs", o.epochs, "Distillation epochs");
  di->add_option("--seed", o.seed, "Run a single seed");
  add_prune_flags(di, o);
  add_distill_flags(di, o);

  auto* re = app.add_subcommand("report", "Merge run directories into comparison tables");
  re->add_option("runs", runs, "Run directories")->required();
  re->add_option("--out", out_dir, "Output directory")->required();
  re->add_option("--reference", reference, "Reference table CSV appended to table.csv");

  auto* ru = app.add_subcommand("run", "train-teacher, prune and distill in one go");
  ru->add_option("--config", config_path, "Experiment config (JSON)")->required();
  ru->add_option("--epochs", o.epochs, "Distillation epochs");
  ru->add_option("--seed", o.seed, "Run a single seed");
  add_prune_flags(ru, o);
  add_distill_flags(ru, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (tt->parsed()) {
      auto c = resolve(config_path, o, true);
      auto path = lnpt::train_teacher(c, lnpt::output_root(c) / "teacher");
      std::cout << "teacher: " << path.string() << '\n';
    } else if (pr->parsed() || di->parsed()) {
      auto c = resolve(config_path, o, false);
      const auto root = lnpt::output_root(c);
      const lnpt::fs::path teacher = teacher_path.empty() ? root / "teacher" / "teacher.ckpt" : lnpt::fs::path(teacher_path);
      const lnpt::fs::path dir = run_dir.empty() ? root / lnpt::run_tag(c) : lnpt::fs::path(run_dir);
      if (!lnpt::fs::exists(teacher)) throw lnpt::ConfigError("teacher checkpoint '" + teacher.string() + "' not found");
      if (pr->parsed()) {
        lnpt::prune_students(c, teacher, dir);
      } else {
        lnpt::distill_students(c, teacher, dir);
      }
      std::cout << "run: " << dir.string() << '\n';
    } else if (re->parsed()) {
      std::vector<lnpt::fs::path> dirs(runs.begin(), runs.end());
      std::optional<lnpt::fs::path> ref;
      if (!reference.empty()) ref = reference;
      lnpt::report(dirs, out_dir, ref);
      std::cout << "report: " << out_dir << '\n';
    } else if (ru->parsed()) {
      auto c = resolve(config_path, o, false);
      std::cout << "run: " << lnpt::run_experiment(c).string() << '\n';
    }
  } catch (const lnpt::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const lnpt::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const lnpt::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const lnpt::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
