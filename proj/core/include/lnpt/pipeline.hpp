#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lnpt/checkpoint.hpp"
#include "lnpt/config.hpp"
#include "lnpt/data.hpp"

namespace lnpt {

namespace fs = std::filesystem;

// Training and test splits after preprocessing.
struct ExperimentData {
  Dataset train;
  Dataset test;
  std::optional<Standardizer> standardizer;
};

// Loads or synthesises the dataset. Standardisation statistics come from the
// training split only. Missing input files are ConfigErrors.
ExperimentData load_data(const DatasetConfig& config);

// config.output_dir, or $LNPT_OUT when set.
fs::path output_root(const ExperimentConfig& config);
// Directory of one prune/distill run under the output root, e.g. "lnpt-p95-lnpt".
std::string run_tag(const ExperimentConfig& config);

// Supervised teacher training on true labels. Writes teacher.ckpt and
// teacher_records.csv under `out_dir`; returns the checkpoint path.
fs::path train_teacher(const ExperimentConfig& config, const fs::path& out_dir);

// For each seed: init the student, score it against the frozen teacher, and
// write seed_<s>/pruned.ckpt (with mask) and seed_<s>/sparsity.csv.
void prune_students(const ExperimentConfig& config, const fs::path& teacher_ckpt, const fs::path& run_dir);

// For each seed: distill seed_<s>/pruned.ckpt and write records.csv,
// diagnostics.csv and student.ckpt, then summary.json for the run.
void distill_students(const ExperimentConfig& config, const fs::path& teacher_ckpt, const fs::path& run_dir);

struct SummaryStats {
  Scalar mean = 0;
  Scalar stddev = 0;  // population standard deviation
};
SummaryStats summarize(const std::vector<Scalar>& values);

// Merges run directories into long-format results.csv (method, ratio, seed,
// epoch, metric, value), layers.csv (per-layer kept fractions) and table.csv.
// Rows of `reference` (model,dataset,ratio,method,test_acc,note) are appended
// to table.csv as external results. Throws IoError naming any missing run dir.
void report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir,
            const std::optional<fs::path>& reference = std::nullopt);

// train-teacher, prune and distill in sequence; returns the run directory.
fs::path run_experiment(const ExperimentConfig& config);

}  // namespace lnpt
