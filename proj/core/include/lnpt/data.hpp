#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "lnpt/tensor.hpp"

namespace lnpt {

enum class Split { train, test, score };
std::string_view to_string(Split split);

// Row-major sample matrix: `count` samples of `sample_shape` each.
struct Inputs {
  Shape sample_shape;
  std::size_t count = 0;
  std::vector<Scalar> values;

  std::size_t sample_size() const { return shape_numel(sample_shape); }
  std::span<const Scalar> row(std::size_t i) const {
    return std::span<const Scalar>(values).subspan(i * sample_size(), sample_size());
  }
  Inputs subset(std::span<const std::size_t> indices) const;
};

class UnlabeledDataset;

// Inputs with optional integer labels in [0, class_count).
class Dataset {
 public:
  Dataset(Inputs inputs, std::optional<std::vector<int>> labels, std::size_t class_count, Split split);

  const Inputs& inputs() const { return inputs_; }
  std::size_t size() const { return inputs_.count; }
  std::size_t class_count() const { return class_count_; }
  Split split() const { return split_; }
  bool has_labels() const { return labels_.has_value(); }
  // Throws ConfigError when the dataset is unlabeled.
  std::span<const int> labels() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset with_split(Split split) const;
  Dataset with_labels(std::vector<int> labels) const;
  // Student-side view; carries no label storage at all.
  UnlabeledDataset without_labels() const;

 private:
  Inputs inputs_;
  std::optional<std::vector<int>> labels_;
  std::size_t class_count_;
  Split split_;
};

class UnlabeledDataset {
 public:
  UnlabeledDataset(Inputs inputs, std::size_t class_count) : inputs_(std::move(inputs)), class_count_(class_count) {}

  const Inputs& inputs() const { return inputs_; }
  std::size_t size() const { return inputs_.count; }
  std::size_t class_count() const { return class_count_; }

 private:
  Inputs inputs_;
  std::size_t class_count_;
};

// Per-feature standardisation fitted on the training split.
struct Standardizer {
  std::vector<Scalar> mean;
  std::vector<Scalar> stddev;

  static Standardizer fit(const Inputs& train);
  void apply(Inputs& inputs) const;
  void invert(Inputs& inputs) const;
  Dataset apply(const Dataset& data) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

// IDX (big-endian) parsing: images 0x00000803 [N,rows,cols] u8 scaled by 1/255,
// labels 0x00000801 [N] u8. Throws FormatError on bad magic, truncation,
// trailing bytes or mismatched counts.
Inputs parse_idx_images(std::span<const std::byte> bytes);
std::vector<int> parse_idx_labels(std::span<const std::byte> bytes);
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count = 10, Split split = Split::train);

// CSV with a header row; a column named "label" holds class ids, every other
// column is a numeric feature. class_count 0 infers max(label) + 1.
Dataset load_csv(const std::filesystem::path& path, std::size_t class_count = 0, Split split = Split::train);

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, Scalar spread, std::uint64_t seed);
Dataset synth_spirals(std::size_t classes, std::size_t per_class, Scalar noise, std::uint64_t seed);

// Disjoint train/test index sets drawn from a seeded permutation.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
SplitIndices split_indices(std::size_t n, Scalar test_fraction, std::uint64_t seed);
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, Scalar test_fraction, std::uint64_t seed);

enum class ScoreSampling { balanced_true, balanced_pseudo, uniform };
std::string_view to_string(ScoreSampling s);
ScoreSampling score_sampling_from(std::string_view s);

// Indices for the pruning score batch. Balanced modes draw up to per_class
// samples from each class (true labels or teacher predictions); uniform draws
// per_class * K samples regardless of class.
std::vector<std::size_t> score_batch_indices(const Dataset& data, ScoreSampling sampling, std::size_t per_class,
                                             std::span<const int> teacher_predictions, std::uint64_t seed);

}  // namespace lnpt
