#include "lnpt/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "lnpt/error.hpp"
#include "lnpt/model.hpp"

namespace lnpt {

namespace {

using nlohmann::json;

// Reads fields out of one JSON object and rejects whatever it did not consume.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (" + it->type_name() + ")");
    }
  }

  template <class Parse, class T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    bool present = j_.contains(key);
    get(key, s);
    if (present) out = parse(s);
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read(const json& j, DistillConfig& c, const std::string& where) {
  Fields f(j, where);
  f.get("alpha", c.alpha);
  f.get("temperature", c.temperature);
  f.get("epochs", c.epochs);
  f.get("lr", c.lr);
  f.get("lr_min", c.lr_min);
  f.get("momentum", c.momentum);
  f.get("weight_decay", c.weight_decay);
  f.get("batch_size", c.batch_size);
  f.get("seed", c.seed);
  f.get_enum("mode", c.mode, distill_mode_from);
  f.get("symmetric_temp", c.symmetric_temp);
  f.finish();
}

void read(const json& j, PruneConfig& c) {
  Fields f(j, "prune");
  f.get_enum("criterion", c.criterion, criterion_from);
  f.get("ratio", c.ratio);
  f.get_enum("mode", c.mode, prune_mode_from);
  f.get("score_per_class", c.score_per_class);
  f.get_enum("sampling", c.sampling, score_sampling_from);
  f.get("hessian_samples", c.hessian_samples);
  f.get_enum("hessian_mode", c.hessian_mode, hessian_mode_from);
  f.get_enum("lnpt_hessian", c.lnpt_hessian, lnpt_hessian_from);
  f.get_enum("baseline_loss", c.baseline_loss, baseline_loss_from);
  f.get("hvp_step", c.hvp_step);
  f.get("seed", c.seed);
  f.finish();
}

void read(const json& j, DatasetConfig& c) {
  Fields f(j, "dataset");
  f.get("kind", c.kind);
  f.get("classes", c.classes);
  f.get("per_class", c.per_class);
  f.get("dim", c.dim);
  f.get("spread", c.spread);
  f.get("noise", c.noise);
  f.get("seed", c.seed);
  f.get("test_fraction", c.test_fraction);
  f.get("train_images", c.train_images);
  f.get("train_labels", c.train_labels);
  f.get("test_images", c.test_images);
  f.get("test_labels", c.test_labels);
  f.get("path", c.path);
  f.get("test_path", c.test_path);
  f.get("limit", c.limit);
  f.get("standardize", c.standardize);
  f.finish();
}

void read(const json& j, TeacherConfig& c) {
  Fields f(j, "teacher");
  f.get("preset", c.preset);
  f.get("seed", c.seed);
  if (const json* t = f.sub("training")) read(*t, c.training, "teacher.training");
  f.finish();
}

void read(const json& j, DiagnosticsConfig& c) {
  Fields f(j, "diagnostics");
  f.get("distance_reference", c.distance_reference);
  f.get("ntk", c.ntk);
  f.get("ntk_samples", c.ntk_samples);
  f.get("learning_gap", c.learning_gap);
  f.finish();
}

void require_preset(const std::string& name, const char* role) {
  auto names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string all;
    for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
    throw ConfigError(std::string(role) + ": unknown preset '" + name + "' (" + all + ")");
  }
}

}  // namespace

json to_json(const DistillConfig& c) {
  return {{"alpha", c.alpha},       {"temperature", c.temperature},   {"epochs", c.epochs},
          {"lr", c.lr},             {"lr_min", c.lr_min},             {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size}, {"seed", c.seed},
          {"mode", std::string(to_string(c.mode))}, {"symmetric_temp", c.symmetric_temp}};
}

json to_json(const PruneConfig& c) {
  return {{"criterion", std::string(to_string(c.criterion))},
          {"ratio", c.ratio},
          {"mode", std::string(to_string(c.mode))},
          {"score_per_class", c.score_per_class},
          {"sampling", std::string(to_string(c.sampling))},
          {"hessian_samples", c.hessian_samples},
          {"hessian_mode", std::string(to_string(c.hessian_mode))},
          {"lnpt_hessian", std::string(to_string(c.lnpt_hessian))},
          {"baseline_loss", std::string(to_string(c.baseline_loss))},
          {"hvp_step", c.hvp_step},
          {"seed", c.seed}};
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> kinds{"spirals", "blobs", "idx", "csv"};
  if (!kinds.count(dataset.kind)) throw ConfigError("dataset.kind: unknown kind '" + dataset.kind + "' (spirals, blobs, idx, csv)");
  if (dataset.kind == "idx" && (dataset.train_images.empty() || dataset.train_labels.empty())) {
    throw ConfigError("dataset: idx needs train_images and train_labels");
  }
  if (dataset.kind == "csv" && dataset.path.empty()) throw ConfigError("dataset: csv needs path");
  if ((dataset.kind == "spirals" || dataset.kind == "blobs") && (dataset.classes < 2 || dataset.per_class == 0)) {
    throw ConfigError("dataset: synthetic data needs classes >= 2 and per_class > 0");
  }
  if (!(dataset.test_fraction > 0 && dataset.test_fraction < 1)) throw ConfigError("dataset.test_fraction must lie in (0, 1)");
  require_preset(teacher.preset, "teacher.preset");
  require_preset(student, "student");
  if (student_init != "seed" && student_init != "teacher") throw ConfigError("student_init: expected seed or teacher");
  if (student_init == "teacher" && student != teacher.preset) {
    throw ConfigError("student_init teacher needs the student preset to equal the teacher preset");
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (diagnostics.distance_reference != "auto" && diagnostics.distance_reference != "teacher" &&
      diagnostics.distance_reference != "init") {
    throw ConfigError("diagnostics.distance_reference: expected auto, teacher or init");
  }
  if (diagnostics.ntk_samples == 0) throw ConfigError("diagnostics.ntk_samples must be positive");
  teacher.training.validate();
  prune.validate();
  distill.validate();
}

json ExperimentConfig::to_json() const {
  json d = {{"kind", dataset.kind},
            {"classes", dataset.classes},
            {"per_class", dataset.per_class},
            {"dim", dataset.dim},
            {"spread", dataset.spread},
            {"noise", dataset.noise},
            {"seed", dataset.seed},
            {"test_fraction", dataset.test_fraction},
            {"train_images", dataset.train_images},
            {"train_labels", dataset.train_labels},
            {"test_images", dataset.test_images},
            {"test_labels", dataset.test_labels},
            {"path", dataset.path},
            {"test_path", dataset.test_path},
            {"limit", dataset.limit},
            {"standardize", dataset.standardize}};
  return {{"name", name},
          {"dataset", d},
          {"teacher", {{"preset", teacher.preset}, {"seed", teacher.seed}, {"training", lnpt::to_json(teacher.training)}}},
          {"student", student},
          {"student_init", student_init},
          {"prune", lnpt::to_json(prune)},
          {"distill", lnpt::to_json(distill)},
          {"seeds", seeds},
          {"output_dir", output_dir},
          {"diagnostics",
           {{"distance_reference", diagnostics.distance_reference},
            {"ntk", diagnostics.ntk},
            {"ntk_samples", diagnostics.ntk_samples},
            {"learning_gap", diagnostics.learning_gap}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "config");
  f.get("name", c.name);
  if (const json* d = f.sub("dataset")) read(*d, c.dataset);
  if (const json* t = f.sub("teacher")) read(*t, c.teacher);
  f.get("student", c.student);
  f.get("student_init", c.student_init);
  if (const json* p = f.sub("prune")) read(*p, c.prune);
  if (const json* d = f.sub("distill")) read(*d, c.distill, "distill");
  f.get("seeds", c.seeds);
  f.get("output_dir", c.output_dir);
  if (const json* d = f.sub("diagnostics")) read(*d, c.diagnostics);
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

}  // namespace lnpt
