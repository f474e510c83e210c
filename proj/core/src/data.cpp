#include "lnpt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lnpt/checkpoint.hpp"
#include "lnpt/error.hpp"
#include "lnpt/rng.hpp"

namespace lnpt {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::score: return "score";
  }
  return "unknown";
}

Inputs Inputs::subset(std::span<const std::size_t> indices) const {
  Inputs out{sample_shape, indices.size(), {}};
  out.values.reserve(indices.size() * sample_size());
  for (std::size_t i : indices) {
    if (i >= count) throw ConfigError("subset: index " + std::to_string(i) + " out of range");
    auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  return out;
}

Dataset::Dataset(Inputs inputs, std::optional<std::vector<int>> labels, std::size_t class_count, Split split)
    : inputs_(std::move(inputs)), labels_(std::move(labels)), class_count_(class_count), split_(split) {
  if (inputs_.values.size() != inputs_.count * inputs_.sample_size()) {
    throw ShapeError("dataset: " + std::to_string(inputs_.values.size()) + " values for " +
                     std::to_string(inputs_.count) + " samples of " + shape_string(inputs_.sample_shape));
  }
  if (class_count_ == 0) throw ConfigError("dataset: class count must be positive");
  if (labels_) {
    if (labels_->size() != inputs_.count) {
      throw ConfigError("dataset: " + std::to_string(labels_->size()) + " labels for " +
                        std::to_string(inputs_.count) + " samples");
    }
    for (int y : *labels_) {
      if (y < 0 || static_cast<std::size_t>(y) >= class_count_) {
        throw ConfigError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(class_count_) + ")");
      }
    }
  }
}

std::span<const int> Dataset::labels() const {
  if (!labels_) throw ConfigError("dataset: labels requested from an unlabeled dataset");
  return *labels_;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::optional<std::vector<int>> y;
  if (labels_) {
    y.emplace();
    y->reserve(indices.size());
    for (std::size_t i : indices) y->push_back((*labels_).at(i));
  }
  return Dataset(inputs_.subset(indices), std::move(y), class_count_, split_);
}

Dataset Dataset::with_split(Split split) const { return Dataset(inputs_, labels_, class_count_, split); }

Dataset Dataset::with_labels(std::vector<int> labels) const {
  return Dataset(inputs_, std::move(labels), class_count_, split_);
}

UnlabeledDataset Dataset::without_labels() const { return UnlabeledDataset(inputs_, class_count_); }

Standardizer Standardizer::fit(const Inputs& train) {
  const std::size_t d = train.sample_size();
  if (train.count == 0) throw ConfigError("standardizer: empty training split");
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < train.count; ++i) {
    auto r = train.row(i);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (Scalar& m : s.mean) m /= static_cast<Scalar>(train.count);
  for (std::size_t i = 0; i < train.count; ++i) {
    auto r = train.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar c = r[j] - s.mean[j];
      s.stddev[j] += c * c;
    }
  }
  for (Scalar& v : s.stddev) {
    v = std::sqrt(v / static_cast<Scalar>(train.count));
    // Constant features (e.g. MNIST border pixels) are only centred.
    if (v < 1e-12) v = 1.0;
  }
  return s;
}

void Standardizer::apply(Inputs& inputs) const {
  const std::size_t d = inputs.sample_size();
  if (d != mean.size()) throw ShapeError("standardizer: fitted on width " + std::to_string(mean.size()) +
                                         ", applied to width " + std::to_string(d));
  for (std::size_t i = 0; i < inputs.count; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      Scalar& v = inputs.values[i * d + j];
      v = (v - mean[j]) / stddev[j];
    }
}

void Standardizer::invert(Inputs& inputs) const {
  const std::size_t d = inputs.sample_size();
  if (d != mean.size()) throw ShapeError("standardizer: width mismatch on invert");
  for (std::size_t i = 0; i < inputs.count; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      Scalar& v = inputs.values[i * d + j];
      v = v * stddev[j] + mean[j];
    }
}

Dataset Standardizer::apply(const Dataset& data) const {
  Inputs x = data.inputs();
  apply(x);
  std::optional<std::vector<int>> y;
  if (data.has_labels()) y.emplace(data.labels().begin(), data.labels().end());
  return Dataset(std::move(x), std::move(y), data.class_count(), data.split());
}

nlohmann::json Standardizer::to_json() const { return {{"mean", mean}, {"stddev", stddev}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  Standardizer s;
  try {
    s.mean = j.at("mean").get<std::vector<Scalar>>();
    s.stddev = j.at("stddev").get<std::vector<Scalar>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("standardizer: ") + e.what());
  }
  if (s.mean.size() != s.stddev.size()) throw FormatError("standardizer: mean/stddev length mismatch");
  return s;
}

namespace {

std::uint32_t read_be32(std::span<const std::byte> b, std::size_t pos) {
  return (static_cast<std::uint32_t>(b[pos]) << 24) | (static_cast<std::uint32_t>(b[pos + 1]) << 16) |
         (static_cast<std::uint32_t>(b[pos + 2]) << 8) | static_cast<std::uint32_t>(b[pos + 3]);
}

// Validates magic and dimension header; returns the dimension sizes.
std::vector<std::size_t> idx_header(std::span<const std::byte> bytes, std::uint32_t magic, std::size_t ndims,
                                    std::string_view what) {
  if (bytes.size() < 4) throw FormatError(std::string(what) + ": truncated IDX file (no magic)");
  const std::uint32_t got = read_be32(bytes, 0);
  if (got != magic) {
    std::ostringstream os;
    os << what << ": bad IDX magic 0x" << std::hex << got << ", expected 0x" << magic;
    throw FormatError(os.str());
  }
  if (bytes.size() < 4 + 4 * ndims) throw FormatError(std::string(what) + ": truncated IDX dimension header");
  std::vector<std::size_t> dims(ndims);
  std::size_t expect = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = read_be32(bytes, 4 + 4 * i);
    expect *= dims[i];
  }
  const std::size_t body = bytes.size() - 4 - 4 * ndims;
  if (body < expect) {
    throw FormatError(std::string(what) + ": truncated IDX payload (" + std::to_string(body) + " of " +
                      std::to_string(expect) + " bytes)");
  }
  if (body > expect) throw FormatError(std::string(what) + ": " + std::to_string(body - expect) + " trailing bytes");
  return dims;
}

}  // namespace

Inputs parse_idx_images(std::span<const std::byte> bytes) {
  auto dims = idx_header(bytes, 0x00000803u, 3, "idx images");
  Inputs x{{1, dims[1], dims[2]}, dims[0], {}};
  const std::size_t n = dims[0] * dims[1] * dims[2];
  x.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) x.values[i] = static_cast<Scalar>(bytes[16 + i]) / 255.0;
  return x;
}

std::vector<int> parse_idx_labels(std::span<const std::byte> bytes) {
  auto dims = idx_header(bytes, 0x00000801u, 1, "idx labels");
  std::vector<int> y(dims[0]);
  for (std::size_t i = 0; i < dims[0]; ++i) y[i] = static_cast<int>(bytes[8 + i]);
  return y;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t class_count,
                 Split split) {
  Inputs x = parse_idx_images(read_file(images));
  std::vector<int> y = parse_idx_labels(read_file(labels));
  if (x.count != y.size()) {
    throw FormatError("idx: " + std::to_string(x.count) + " images but " + std::to_string(y.size()) + " labels");
  }
  for (int v : y) {
    if (static_cast<std::size_t>(v) >= class_count) {
      throw FormatError("idx: label " + std::to_string(v) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
  return Dataset(std::move(x), std::move(y), class_count, split);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::size_t class_count, Split split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv '" + path.string() + "': missing header row");
  auto header = split_csv_line(line);
  std::optional<std::size_t> label_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label") label_col = i;
  }
  const std::size_t features = header.size() - (label_col ? 1 : 0);
  if (features == 0) throw FormatError("csv '" + path.string() + "': no feature columns");

  Inputs x{{features}, 0, {}};
  std::vector<int> y;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError("csv '" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string& c = cells[i];
      if (label_col && i == *label_col) {
        int v = 0;
        auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
        if (ec != std::errc() || p != c.data() + c.size() || v < 0) {
          throw FormatError("csv line " + std::to_string(line_no) + ": bad label '" + c + "'");
        }
        y.push_back(v);
      } else {
        double v = 0;
        auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
        if (ec != std::errc() || p != c.data() + c.size() || !std::isfinite(v)) {
          throw FormatError("csv line " + std::to_string(line_no) + ": bad number '" + c + "'");
        }
        x.values.push_back(v);
      }
    }
    ++x.count;
  }
  std::optional<std::vector<int>> labels;
  if (label_col) {
    if (class_count == 0) class_count = y.empty() ? 1 : static_cast<std::size_t>(*std::max_element(y.begin(), y.end())) + 1;
    labels = std::move(y);
  } else if (class_count == 0) {
    class_count = 1;
  }
  return Dataset(std::move(x), std::move(labels), class_count, split);
}

namespace {

Dataset shuffled(Inputs x, std::vector<int> y, std::size_t classes, std::uint64_t seed) {
  std::vector<std::size_t> order(x.count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, "data-shuffle");
  rng.shuffle(std::span(order));
  Dataset d(std::move(x), std::move(y), classes, Split::train);
  return d.subset(order);
}

}  // namespace

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, Scalar spread, std::uint64_t seed) {
  if (classes == 0 || per_class == 0 || dim == 0) throw ConfigError("synth_blobs: sizes must be positive");
  if (spread < 0) throw ConfigError("synth_blobs: spread must be non-negative");
  Rng centers_rng(seed, "blob-centers");
  Rng noise_rng(seed, "blob-noise");
  std::vector<Scalar> centers(classes * dim);
  for (Scalar& c : centers) c = -10.0 + 20.0 * centers_rng.uniform();
  Inputs x{{dim}, classes * per_class, {}};
  x.values.reserve(x.count * dim);
  std::vector<int> y;
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        const Scalar noise = spread > 0 ? noise_rng.normal(0.0, spread) : 0.0;
        x.values.push_back(centers[k * dim + j] + noise);
      }
      y.push_back(static_cast<int>(k));
    }
  return shuffled(std::move(x), std::move(y), classes, seed);
}

Dataset synth_spirals(std::size_t classes, std::size_t per_class, Scalar noise, std::uint64_t seed) {
  if (classes == 0 || per_class == 0) throw ConfigError("synth_spirals: sizes must be positive");
  if (noise < 0) throw ConfigError("synth_spirals: noise must be non-negative");
  Rng rng(seed, "spiral-noise");
  Inputs x{{2}, classes * per_class, {}};
  std::vector<int> y;
  const Scalar two_pi = 2.0 * std::numbers::pi;
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      const Scalar t = per_class == 1 ? 0.0 : static_cast<Scalar>(i) / static_cast<Scalar>(per_class - 1);
      const Scalar r = 0.1 + 0.9 * t;
      const Scalar a = two_pi * static_cast<Scalar>(k) / static_cast<Scalar>(classes) + 1.5 * std::numbers::pi * t;
      const Scalar nx = noise > 0 ? rng.normal(0.0, noise) : 0.0;
      const Scalar ny = noise > 0 ? rng.normal(0.0, noise) : 0.0;
      x.values.push_back(r * std::cos(a) + nx);
      x.values.push_back(r * std::sin(a) + ny);
      y.push_back(static_cast<int>(k));
    }
  return shuffled(std::move(x), std::move(y), classes, seed);
}

SplitIndices split_indices(std::size_t n, Scalar test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("split: test fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, "split");
  rng.shuffle(std::span(order));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<Scalar>(n)));
  SplitIndices s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, Scalar test_fraction, std::uint64_t seed) {
  auto idx = split_indices(data.size(), test_fraction, seed);
  return {data.subset(idx.train).with_split(Split::train), data.subset(idx.test).with_split(Split::test)};
}

std::string_view to_string(ScoreSampling s) {
  switch (s) {
    case ScoreSampling::balanced_true: return "balanced-true";
    case ScoreSampling::balanced_pseudo: return "balanced-pseudo";
    case ScoreSampling::uniform: return "uniform";
  }
  return "unknown";
}

ScoreSampling score_sampling_from(std::string_view s) {
  for (auto v : {ScoreSampling::balanced_true, ScoreSampling::balanced_pseudo, ScoreSampling::uniform}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown score sampling '" + std::string(s) + "' (balanced-true|balanced-pseudo|uniform)");
}

std::vector<std::size_t> score_batch_indices(const Dataset& data, ScoreSampling sampling, std::size_t per_class,
                                             std::span<const int> teacher_predictions, std::uint64_t seed) {
  if (per_class == 0) throw ConfigError("score batch: per_class must be positive");
  Rng rng(seed, "score-batch");
  const std::size_t k = data.class_count();
  if (sampling == ScoreSampling::uniform) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    order.resize(std::min(order.size(), per_class * k));
    return order;
  }
  std::span<const int> classes;
  if (sampling == ScoreSampling::balanced_true) {
    classes = data.labels();
  } else {
    if (teacher_predictions.size() != data.size()) {
      throw ConfigError("score batch: balanced-pseudo needs one teacher prediction per sample");
    }
    classes = teacher_predictions;
  }
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (c < 0 || static_cast<std::size_t>(c) >= k) throw ConfigError("score batch: class id out of range");
    members[static_cast<std::size_t>(c)].push_back(i);
  }
  std::vector<std::size_t> out;
  for (auto& m : members) {
    rng.shuffle(std::span(m));
    const std::size_t take = std::min(per_class, m.size());
    out.insert(out.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

}  // namespace lnpt
