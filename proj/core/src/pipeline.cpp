#include "lnpt/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "lnpt/diagnostics.hpp"
#include "lnpt/error.hpp"
#include "lnpt/losses.hpp"

namespace lnpt {

namespace {

using nlohmann::json;

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("dataset: ") + what + " path is empty");
  if (!fs::exists(path)) throw ConfigError(std::string("dataset: ") + what + " '" + path + "' does not exist");
}

Dataset head(const Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> idx(limit);
  for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
  return d.subset(idx);
}

std::string fmt(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

fs::path seed_dir(const fs::path& run_dir, std::uint64_t seed) { return run_dir / ("seed_" + std::to_string(seed)); }

struct LoadedTeacher {
  Checkpoint ckpt;
  Network net;
  Parameters params;
};

LoadedTeacher load_teacher(const fs::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!ckpt.spec) throw FormatError("'" + path.string() + "': teacher checkpoint has no model spec");
  Network net(*ckpt.spec);
  Parameters params = ckpt.parameters();
  return {std::move(ckpt), std::move(net), std::move(params)};
}

ModelSpec student_spec(const ExperimentConfig& config, const Dataset& train, const ModelSpec& teacher) {
  ModelSpec spec = preset(config.student, train.inputs().sample_shape, train.class_count());
  if (spec.feature_dim() != teacher.feature_dim()) {
    throw ConfigError("student preset '" + config.student + "' has feature_dim " + std::to_string(spec.feature_dim()) +
                      " but teacher '" + teacher.name() + "' has " + std::to_string(teacher.feature_dim()));
  }
  return spec;
}

std::string method_name(const ExperimentConfig& config) {
  std::string m(to_string(config.prune.criterion));
  if (config.prune.mode == PruneMode::channel) m += "-channel";
  if (config.distill.mode != DistillMode::lnpt) m += "/" + std::string(to_string(config.distill.mode));
  return m;
}

void write_sparsity_csv(const fs::path& path, const PruneMask& mask, const ParamLayout& layout) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "layer,total,kept,fraction,prunable\n";
  for (const auto& row : mask.per_layer(layout)) {
    out << row.name << ',' << row.total << ',' << row.kept << ',' << fmt(row.fraction()) << ',' << (row.prunable ? 1 : 0)
        << '\n';
  }
  out << "prunable_total," << mask.total_count() << ',' << mask.kept_count() << ',' << fmt(mask.density()) << ",1\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

// Splits one CSV line; no quoting is used by any file this project writes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

json teacher_identity(const ExperimentConfig& config) {
  json j = config.to_json();
  return {{"dataset", j["dataset"]}, {"teacher", j["teacher"]}};
}

}  // namespace

ExperimentData load_data(const DatasetConfig& c) {
  std::optional<Dataset> train, test;
  if (c.kind == "spirals" || c.kind == "blobs") {
    Dataset all = c.kind == "spirals" ? synth_spirals(c.classes, c.per_class, c.noise, c.seed)
                                      : synth_blobs(c.classes, c.per_class, c.dim, c.spread, c.seed);
    auto [tr, te] = train_test_split(all, c.test_fraction, c.seed);
    train = std::move(tr);
    test = std::move(te);
  } else if (c.kind == "idx") {
    require_file(c.train_images, "train_images");
    require_file(c.train_labels, "train_labels");
    Dataset all = load_idx(c.train_images, c.train_labels, c.classes, Split::train);
    if (!c.test_images.empty() || !c.test_labels.empty()) {
      require_file(c.test_images, "test_images");
      require_file(c.test_labels, "test_labels");
      train = head(all, c.limit);
      test = load_idx(c.test_images, c.test_labels, c.classes, Split::test);
    } else {
      auto [tr, te] = train_test_split(head(all, c.limit), c.test_fraction, c.seed);
      train = std::move(tr);
      test = std::move(te);
    }
  } else if (c.kind == "csv") {
    require_file(c.path, "path");
    Dataset all = load_csv(c.path, c.classes, Split::train);
    if (!c.test_path.empty()) {
      require_file(c.test_path, "test_path");
      train = head(all, c.limit);
      test = load_csv(c.test_path, all.class_count(), Split::test);
    } else {
      auto [tr, te] = train_test_split(head(all, c.limit), c.test_fraction, c.seed);
      train = std::move(tr);
      test = std::move(te);
    }
  } else {
    throw ConfigError("dataset.kind: unknown kind '" + c.kind + "'");
  }
  if (!train->has_labels() || !test->has_labels()) throw ConfigError("dataset: labels are required for the teacher and evaluation");
  ExperimentData out{train->with_split(Split::train), test->with_split(Split::test), std::nullopt};
  if (c.standardize) {
    out.standardizer = Standardizer::fit(out.train.inputs());
    out.train = out.standardizer->apply(out.train);
    out.test = out.standardizer->apply(out.test);
  }
  return out;
}

fs::path output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv("LNPT_OUT"); env && *env) return fs::path(env);
  return fs::path(config.output_dir);
}

std::string run_tag(const ExperimentConfig& config) {
  std::string tag(to_string(config.prune.criterion));
  if (config.prune.mode == PruneMode::channel) tag += "-channel";
  return tag + "-p" + fmt(config.prune.ratio * 100.0) + "-" + std::string(to_string(config.distill.mode));
}

fs::path train_teacher(const ExperimentConfig& config, const fs::path& out_dir) {
  ExperimentData data = load_data(config.dataset);
  ModelSpec spec = preset(config.teacher.preset, data.train.inputs().sample_shape, data.train.class_count());
  Network net(spec);
  Parameters params = net.init(config.teacher.seed);
  DistillConfig training = config.teacher.training;
  training.seed = config.teacher.seed;
  auto records = train_supervised(net, params, data.train, data.test, training);

  Checkpoint ckpt = Checkpoint::from_parameters(spec, config.teacher.seed, params);
  ckpt.metadata = {{"role", "teacher"},
                   {"identity", teacher_identity(config)},
                   {"test_accuracy", records.back().test_accuracy},
                   {"standardizer", data.standardizer ? data.standardizer->to_json() : json(nullptr)}};
  fs::create_directories(out_dir);
  const fs::path path = out_dir / "teacher.ckpt";
  save_checkpoint(path, ckpt);
  write_run_records_csv(out_dir / "teacher_records.csv", records);
  return path;
}

void prune_students(const ExperimentConfig& config, const fs::path& teacher_ckpt, const fs::path& run_dir) {
  config.validate();
  LoadedTeacher teacher = load_teacher(teacher_ckpt);
  ExperimentData data = load_data(config.dataset);
  ModelSpec spec = student_spec(config, data.train, teacher.net.spec());
  Network student(spec);

  // Teacher predictions drive balanced-pseudo sampling and the baselines' class ids.
  ForwardOutput t_out = forward_all(teacher.net, teacher.params.flat(), data.train.inputs());
  const std::vector<int> pseudo = argmax_rows(t_out.logits.data(), spec.class_count());
  const std::size_t m = spec.feature_dim();

  for (std::uint64_t seed : config.seeds) {
    PruneConfig pc = config.prune;
    pc.seed = seed;
    Parameters params = student.init(config.student_init == "teacher" ? teacher.ckpt.seed : seed);
    auto idx = score_batch_indices(data.train, pc.sampling, pc.score_per_class, pseudo, seed);
    ScoreBatch batch;
    batch.inputs = student.batch(data.train.inputs().subset(idx).values, idx.size());
    std::vector<Scalar> tf;
    tf.reserve(idx.size() * m);
    for (std::size_t i : idx) {
      auto row = t_out.feature_map.data().subspan(i * m, m);
      tf.insert(tf.end(), row.begin(), row.end());
    }
    batch.teacher_features = Tensor({idx.size(), m}, std::move(tf));
    for (std::size_t i : idx) {
      batch.labels.push_back(pc.sampling == ScoreSampling::balanced_true ? data.train.labels()[i] : pseudo[i]);
    }

    PruneResult result = prune(student, params.flat(), batch, pc);
    apply_mask(params.flat(), result.mask);

    Checkpoint ckpt = Checkpoint::from_parameters(spec, seed, params);
    ckpt.mask = std::vector<std::uint8_t>(result.mask.keep().begin(), result.mask.keep().end());
    ckpt.metadata = {{"role", "pruned-student"},
                     {"prune", to_json(pc)},
                     {"density", result.mask.density()},
                     {"kept", result.mask.kept_count()},
                     {"prunable", result.mask.total_count()},
                     {"mask_checksum", result.mask.checksum()}};
    const fs::path dir = seed_dir(run_dir, seed);
    fs::create_directories(dir);
    save_checkpoint(dir / "pruned.ckpt", ckpt);
    write_sparsity_csv(dir / "sparsity.csv", result.mask, student.layout());
  }
}

SummaryStats summarize(const std::vector<Scalar>& values) {
  SummaryStats s;
  if (values.empty()) return s;
  for (Scalar v : values) s.mean += v;
  s.mean /= static_cast<Scalar>(values.size());
  for (Scalar v : values) s.stddev += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<Scalar>(values.size()));
  return s;
}

void distill_students(const ExperimentConfig& config, const fs::path& teacher_ckpt, const fs::path& run_dir) {
  config.validate();
  LoadedTeacher teacher = load_teacher(teacher_ckpt);
  ExperimentData data = load_data(config.dataset);
  ModelSpec spec = student_spec(config, data.train, teacher.net.spec());
  Network student(spec);
  const bool same_arch = spec == teacher.net.spec();
  std::string reference = config.diagnostics.distance_reference;
  if (reference == "auto") reference = same_arch ? "teacher" : "init";
  if (reference == "teacher" && !same_arch) {
    throw ConfigError("diagnostics: teacher distance needs identical teacher and student architectures");
  }

  // Fixed sample set for the kernel diagnostic.
  std::optional<Tensor> ntk_batch;
  if (config.diagnostics.ntk) {
    const std::size_t n = std::min({config.diagnostics.ntk_samples, data.test.size(), kNtkLimit / spec.class_count()});
    ntk_batch = student.batch(std::span<const Scalar>(data.test.inputs().values).first(n * data.test.inputs().sample_size()), n);
  }

  TeacherRef tref{&teacher.net, teacher.params.flat()};
  std::vector<Scalar> finals;
  json per_seed = json::array();
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = seed_dir(run_dir, seed);
    Checkpoint pruned = load_checkpoint(dir / "pruned.ckpt");
    if (!pruned.spec || !(*pruned.spec == spec)) {
      throw ConfigError("'" + (dir / "pruned.ckpt").string() + "' was not pruned for student preset '" + config.student + "'");
    }
    Parameters params = pruned.parameters();
    PruneMask mask = pruned.mask ? PruneMask(student.layout(), *pruned.mask)
                                 : PruneMask::all_kept(student.layout());

    DistillConfig dc = config.distill;
    dc.seed = seed;
    TrainOptions opts;
    opts.distance_reference = reference == "teacher" ? teacher.params.values() : params.values();

    std::map<std::size_t, DiagnosticsRow> extra;
    std::optional<Eigen::MatrixXd> s0;
    opts.on_epoch = [&](const EpochState& st) {
      DiagnosticsRow& row = extra[st.epoch];
      row.epoch = st.epoch;
      if (config.diagnostics.learning_gap && st.lr > 0) {
        LearningGapStep gap = learning_gap_step(student, st.theta, st.last_batch, st.last_batch_loss, st.lr, &mask);
        row.delta_ell_pred = gap.predicted_norm();
        row.delta_ell_meas = gap.measured_norm();
      }
      if (ntk_batch) {
        Eigen::MatrixXd s = sensitivity(ntk(student, st.theta, *ntk_batch), ClassifierView::of(student, st.theta));
        if (!s0) s0 = s;
        row.s_drift = s0->norm() > 0 ? std::optional<Scalar>(sensitivity_drift(s, *s0)) : std::nullopt;
      }
    };

    auto records = train(student, params, mask, tref, data.train, data.test, dc, opts);
    std::vector<DiagnosticsRow> rows;
    for (const auto& r : records) {
      DiagnosticsRow row = extra[r.epoch];
      row.epoch = r.epoch;
      row.dtd = r.dtd;
      row.mean_lm = r.mean_lm;
      rows.push_back(row);
    }
    write_run_records_csv(dir / "records.csv", records);
    write_diagnostics_csv(dir / "diagnostics.csv", rows);
    Checkpoint out = Checkpoint::from_parameters(spec, seed, params);
    out.mask = pruned.mask;
    out.metadata = {{"role", "student"}, {"final_test_accuracy", records.back().test_accuracy}};
    save_checkpoint(dir / "student.ckpt", out);
    finals.push_back(records.back().test_accuracy);
    per_seed.push_back({{"seed", seed},
                        {"final_test_accuracy", records.back().test_accuracy},
                        {"initial_mean_Lm", records.front().mean_lm},
                        {"final_mean_Lm", records.back().mean_lm}});
  }

  const SummaryStats st = summarize(finals);
  json summary = {{"name", config.name},
                  {"method", method_name(config)},
                  {"criterion", std::string(to_string(config.prune.criterion))},
                  {"ratio", config.prune.ratio},
                  {"mode", std::string(to_string(config.distill.mode))},
                  {"student", config.student},
                  {"teacher", teacher.net.spec().name()},
                  {"dataset", config.dataset.kind},
                  {"distance_reference", reference},
                  {"sensitivity_convention", "mean over sample pairs of the K x K kernel blocks"},
                  {"seeds", per_seed},
                  {"mean_test_accuracy", st.mean},
                  {"std_test_accuracy", st.stddev},
                  {"prune", to_json(config.prune)},
                  {"distill", to_json(config.distill)}};
  write_json(run_dir / "summary.json", summary);
}

void report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, const std::optional<fs::path>& reference) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  for (const auto& d : run_dirs) {
    if (!fs::is_directory(d)) throw IoError("report: run directory '" + d.string() + "' does not exist");
    if (!fs::exists(d / "summary.json")) throw IoError("report: '" + d.string() + "' has no summary.json");
  }
  fs::create_directories(out_dir);
  std::ofstream results(out_dir / "results.csv", std::ios::trunc);
  std::ofstream layers(out_dir / "layers.csv", std::ios::trunc);
  std::ofstream table(out_dir / "table.csv", std::ios::trunc);
  if (!results || !layers || !table) throw IoError("report: cannot write into '" + out_dir.string() + "'");
  results << "method,ratio,seed,epoch,metric,value\n";
  layers << "method,ratio,seed,layer,total,kept,fraction,prunable\n";
  table << "source,model,dataset,method,ratio,mode,seeds,mean_test_acc,std_test_acc\n";

  static const char* metrics[] = {"L_oh", "L_m", "L_total", "test_acc", "dtd", "mean_Lm", "lr"};
  for (const auto& d : run_dirs) {
    json s = read_json(d / "summary.json");
    const std::string method = s.at("method").get<std::string>();
    const std::string ratio = fmt(s.at("ratio").get<Scalar>());
    for (const auto& entry : s.at("seeds")) {
      const auto seed = entry.at("seed").get<std::uint64_t>();
      const fs::path sd = seed_dir(d, seed);
      for (const auto& r : read_run_records_csv(sd / "records.csv")) {
        const Scalar vals[] = {r.loss_oh, r.loss_m, r.loss_total, r.test_accuracy, r.dtd, r.mean_lm, r.lr};
        for (std::size_t i = 0; i < std::size(metrics); ++i) {
          results << method << ',' << ratio << ',' << seed << ',' << r.epoch << ',' << metrics[i] << ',' << fmt(vals[i])
                  << '\n';
        }
      }
      std::ifstream sp(sd / "sparsity.csv");
      std::string line;
      std::getline(sp, line);
      while (std::getline(sp, line)) {
        if (!line.empty()) layers << method << ',' << ratio << ',' << seed << ',' << line << '\n';
      }
    }
    // Accuracies in percent, matching the reference rows.
    table << "measured," << s.at("student").get<std::string>() << ',' << s.at("dataset").get<std::string>() << ','
          << method << ',' << ratio << ',' << s.at("mode").get<std::string>() << ',' << s.at("seeds").size() << ','
          << fmt(100.0 * s.at("mean_test_accuracy").get<Scalar>()) << ','
          << fmt(100.0 * s.at("std_test_accuracy").get<Scalar>()) << '\n';
  }

  if (reference) {
    std::ifstream in(*reference);
    if (!in) throw IoError("report: cannot open reference table '" + reference->string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "model,dataset,ratio,method,test_acc,note") {
      throw FormatError("report: '" + reference->string() + "' is not a reference table");
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto c = split_csv(line);
      if (c.size() != 6) throw FormatError("report: malformed reference row '" + line + "'");
      table << "reference," << c[0] << ',' << c[1] << ',' << c[3] << ',' << c[2] << ",,," << c[4] << ",\n";
    }
  }
}

fs::path run_experiment(const ExperimentConfig& config) {
  config.validate();
  const fs::path root = output_root(config);
  const fs::path teacher_dir = root / "teacher";
  const fs::path teacher_ckpt = teacher_dir / "teacher.ckpt";
  bool reuse = false;
  if (fs::exists(teacher_ckpt)) {
    Checkpoint existing = load_checkpoint(teacher_ckpt);
    reuse = existing.metadata.value("identity", json()) == teacher_identity(config);
  }
  if (!reuse) train_teacher(config, teacher_dir);
  const fs::path run_dir = root / run_tag(config);
  prune_students(config, teacher_ckpt, run_dir);
  distill_students(config, teacher_ckpt, run_dir);
  return run_dir;
}

}  // namespace lnpt
