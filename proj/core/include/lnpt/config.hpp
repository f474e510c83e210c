#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "lnpt/distill.hpp"
#include "lnpt/pruning.hpp"

namespace lnpt {

// Where samples come from. kind: spirals | blobs | idx | csv.
struct DatasetConfig {
  std::string kind = "spirals";
  std::size_t classes = 4;
  // synthetic generators
  std::size_t per_class = 500;
  std::size_t dim = 2;
  Scalar spread = 1.0;
  Scalar noise = 0.2;
  std::uint64_t seed = 0;
  // Fraction held out when the source has no separate test files.
  Scalar test_fraction = 0.2;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // csv; test_path optional
  std::string path, test_path;
  // Keep only the first `limit` training samples (0 keeps all).
  std::size_t limit = 0;
  bool standardize = true;
};

struct TeacherConfig {
  std::string preset = "mlp-teacher";
  std::uint64_t seed = 0;
  // Supervised training hyperparameters; mode/alpha/temperature are ignored.
  DistillConfig training;
};

// distance_reference: auto picks the teacher when architectures match, else
// the student's own initial parameters.
struct DiagnosticsConfig {
  std::string distance_reference = "auto";
  bool ntk = false;
  std::size_t ntk_samples = 8;
  bool learning_gap = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  TeacherConfig teacher;
  std::string student = "mlp-small";
  // seed: each student starts from init(seed). teacher: every student starts
  // from the teacher's own initialisation (needs identical architectures).
  std::string student_init = "seed";
  PruneConfig prune;
  DistillConfig distill;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  DiagnosticsConfig diagnostics;

  // Checks presets, seeds and nested configs. Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  // Strict: unknown keys and wrong types are ConfigErrors. Missing keys keep defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const DistillConfig& c);
nlohmann::json to_json(const PruneConfig& c);

}  // namespace lnpt
