#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lnpt/tensor.hpp"

namespace lnpt {

enum class LayerKind { dense, conv, relu, avg_pool, global_avg_pool, flatten };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // dense
  std::size_t in = 0;
  std::size_t out = 0;
  // conv
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  // avg_pool
  std::size_t window = 0;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                        std::size_t pad = 0);
  static LayerSpec relu();
  static LayerSpec avg_pool(std::size_t window);
  static LayerSpec global_avg_pool();
  static LayerSpec flatten();

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv; }
  bool operator==(const LayerSpec&) const = default;
};

// Validated architecture. The last layer is a dense classifier with
// class_count outputs; its input width is the feature dimension M.
class ModelSpec {
 public:
  ModelSpec(std::string name, Shape input_shape, std::vector<LayerSpec> layers);

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t input_size() const { return shape_numel(input_shape_); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t class_count() const { return class_count_; }
  std::size_t feature_dim() const { return feature_dim_; }
  // Index of the final dense layer.
  std::size_t classifier_layer() const { return layers_.size() - 1; }

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  bool operator==(const ModelSpec& other) const {
    return name_ == other.name_ && input_shape_ == other.input_shape_ && layers_ == other.layers_;
  }

 private:
  std::string name_;
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::size_t class_count_ = 0;
  std::size_t feature_dim_ = 0;
};

// Built-in presets: mlp-tiny, mlp-small, mlp-teacher, cnn-small.
// MLP presets flatten any input shape; cnn-small needs a [C,H,W] input.
ModelSpec preset(std::string_view name, const Shape& input_shape, std::size_t classes);
std::vector<std::string> preset_names();

enum class ParamRole { weight, bias };

struct ParamSlot {
  std::string name;
  std::size_t layer = 0;
  ParamRole role = ParamRole::weight;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool classifier = false;

  // Output channels (conv) or neurons (dense); shape[0] for both roles.
  std::size_t channels() const { return shape.empty() ? 0 : shape[0]; }
};

// Placement of every weight and bias inside the flat parameter vector.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelSpec& spec);

  std::span<const ParamSlot> slots() const { return slots_; }
  const ParamSlot& slot(std::size_t i) const { return slots_.at(i); }
  std::size_t size() const { return total_; }
  // Slot that owns a flat index.
  std::size_t slot_of(std::size_t flat_index) const;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t total_ = 0;
};

// Flat parameter vector theta with per-layer views into the same storage.
class Parameters {
 public:
  Parameters(ParamLayout layout, std::vector<Scalar> values);

  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<Scalar> flat() { return values_; }
  std::span<const Scalar> flat() const { return values_; }
  std::span<Scalar> view(std::size_t slot);
  std::span<const Scalar> view(std::size_t slot) const;
  const std::vector<Scalar>& values() const { return values_; }

 private:
  ParamLayout layout_;
  std::vector<Scalar> values_;
};

struct ForwardOutput {
  Tensor logits;       // [N, K]
  Tensor feature_map;  // [N, M], input of the final dense layer
};

class Network {
 public:
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.size(); }

  // Kaiming-normal weights (fan-in, relu gain) and zero biases from the "init" stream of seed.
  Parameters init(std::uint64_t seed) const;

  // Forward pass over a rank-1 theta tensor. Records a graph when theta requires grad.
  ForwardOutput forward(const Tensor& theta, const Tensor& batch) const;
  // Untaped forward pass.
  ForwardOutput forward(std::span<const Scalar> theta, const Tensor& batch) const;
  ForwardOutput forward(const Parameters& params, const Tensor& batch) const {
    return forward(params.flat(), batch);
  }

  // Wraps `n` row-major samples as a [n, input_shape...] tensor.
  Tensor batch(std::span<const Scalar> inputs, std::size_t n) const;

 private:
  ModelSpec spec_;
  ParamLayout layout_;
};

// Final dense layer of a network: logits = W m + b.
struct ClassifierView {
  Eigen::MatrixXd weight;  // K x M
  Eigen::VectorXd bias;    // K

  static ClassifierView of(const Network& net, std::span<const Scalar> theta);
  // Moore-Penrose pseudoinverse W+ (M x K).
  Eigen::MatrixXd pseudo_inverse() const;
  // Logits recomputed from an [N, M] feature map, row-major [N, K].
  std::vector<Scalar> logits(const Tensor& feature_map) const;
};

}  // namespace lnpt
