#include "lnpt/model.hpp"

#include <algorithm>
#include <cmath>

#include "lnpt/error.hpp"
#include "lnpt/ops.hpp"
#include "lnpt/rng.hpp"

namespace lnpt {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

namespace {

LayerKind layer_kind_from(std::string_view s) {
  for (LayerKind k : {LayerKind::dense, LayerKind::conv, LayerKind::relu, LayerKind::avg_pool,
                      LayerKind::global_avg_pool, LayerKind::flatten}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("model spec: unknown layer kind '" + std::string(s) + "'");
}

}  // namespace

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in = in;
  l.out = out;
  return l;
}

LayerSpec LayerSpec::conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                          std::size_t pad) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::avg_pool(std::size_t window) {
  LayerSpec l;
  l.kind = LayerKind::avg_pool;
  l.window = window;
  return l;
}

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec l;
  l.kind = LayerKind::global_avg_pool;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

ModelSpec::ModelSpec(std::string name, Shape input_shape, std::vector<LayerSpec> layers)
    : name_(std::move(name)), input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  auto fail = [&](std::size_t i, const std::string& why) {
    throw ConfigError("model spec '" + name_ + "': layer " + std::to_string(i) + " (" +
                      std::string(to_string(layers_[i].kind)) + "): " + why);
  };
  if (layers_.empty()) throw ConfigError("model spec '" + name_ + "': no layers");
  if (input_shape_.empty() || shape_numel(input_shape_) == 0) {
    throw ConfigError("model spec '" + name_ + "': empty input shape");
  }
  Shape cur = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    switch (l.kind) {
      case LayerKind::dense:
        if (cur.size() != 1) fail(i, "expects a flat input, got " + shape_string(cur));
        if (l.in != cur[0]) fail(i, "in=" + std::to_string(l.in) + " but incoming width is " + std::to_string(cur[0]));
        if (l.out == 0) fail(i, "out must be positive");
        cur = {l.out};
        break;
      case LayerKind::conv: {
        if (cur.size() != 3) fail(i, "expects [C,H,W] input, got " + shape_string(cur));
        if (l.in_channels != cur[0]) fail(i, "in_channels mismatch with " + shape_string(cur));
        if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) fail(i, "zero-sized conv");
        if (cur[1] + 2 * l.pad < l.kernel || cur[2] + 2 * l.pad < l.kernel) fail(i, "kernel larger than input");
        cur = {l.out_channels, (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1,
               (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::avg_pool:
        if (cur.size() != 3) fail(i, "expects [C,H,W] input, got " + shape_string(cur));
        if (l.window == 0 || cur[1] < l.window || cur[2] < l.window) fail(i, "window does not fit");
        cur = {cur[0], cur[1] / l.window, cur[2] / l.window};
        break;
      case LayerKind::global_avg_pool:
        if (cur.size() != 3) fail(i, "expects [C,H,W] input, got " + shape_string(cur));
        cur = {cur[0]};
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
    }
  }
  const LayerSpec& last = layers_.back();
  if (last.kind != LayerKind::dense) fail(layers_.size() - 1, "the final layer must be a dense classifier");
  class_count_ = last.out;
  feature_dim_ = last.in;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    nlohmann::json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::dense:
        j["in"] = l.in;
        j["out"] = l.out;
        break;
      case LayerKind::conv:
        j["in_channels"] = l.in_channels;
        j["out_channels"] = l.out_channels;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["pad"] = l.pad;
        break;
      case LayerKind::avg_pool:
        j["window"] = l.window;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"name", name_}, {"input_shape", input_shape_}, {"layers", std::move(layers)}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  try {
    std::vector<LayerSpec> layers;
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from(lj.at("kind").get<std::string>());
      switch (l.kind) {
        case LayerKind::dense:
          l.in = lj.at("in").get<std::size_t>();
          l.out = lj.at("out").get<std::size_t>();
          break;
        case LayerKind::conv:
          l.in_channels = lj.at("in_channels").get<std::size_t>();
          l.out_channels = lj.at("out_channels").get<std::size_t>();
          l.kernel = lj.at("kernel").get<std::size_t>();
          l.stride = lj.at("stride").get<std::size_t>();
          l.pad = lj.at("pad").get<std::size_t>();
          break;
        case LayerKind::avg_pool:
          l.window = lj.at("window").get<std::size_t>();
          break;
        default:
          break;
      }
      layers.push_back(l);
    }
    return ModelSpec(j.at("name").get<std::string>(), j.at("input_shape").get<Shape>(), std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

std::vector<std::string> preset_names() { return {"mlp-tiny", "mlp-small", "mlp-teacher", "cnn-small"}; }

ModelSpec preset(std::string_view name, const Shape& input_shape, std::size_t classes) {
  if (classes == 0) throw ConfigError("preset: class count must be positive");
  const std::size_t d = shape_numel(input_shape);
  auto mlp = [&](std::vector<std::size_t> widths) {
    std::vector<LayerSpec> layers;
    if (input_shape.size() != 1) layers.push_back(LayerSpec::flatten());
    std::size_t in = d;
    for (std::size_t w : widths) {
      layers.push_back(LayerSpec::dense(in, w));
      layers.push_back(LayerSpec::relu());
      in = w;
    }
    layers.push_back(LayerSpec::dense(in, classes));
    return ModelSpec(std::string(name), input_shape, std::move(layers));
  };
  if (name == "mlp-tiny") return mlp({16, 8});
  if (name == "mlp-small") return mlp({300, 100});
  // Shares feature_dim 100 with mlp-small so feature maps can be compared directly.
  if (name == "mlp-teacher") return mlp({800, 300, 100});
  if (name == "cnn-small") {
    if (input_shape.size() != 3) {
      throw ConfigError("preset cnn-small: needs a [C,H,W] input shape, got " + shape_string(input_shape));
    }
    const std::size_t c = input_shape[0];
    const std::size_t h = input_shape[1] / 4, w = input_shape[2] / 4;
    if (h == 0 || w == 0) throw ConfigError("preset cnn-small: input smaller than 4x4");
    return ModelSpec(std::string(name), input_shape,
                     {LayerSpec::conv(c, 8, 3, 1, 1), LayerSpec::relu(), LayerSpec::avg_pool(2),
                      LayerSpec::conv(8, 16, 3, 1, 1), LayerSpec::relu(), LayerSpec::avg_pool(2),
                      LayerSpec::flatten(), LayerSpec::dense(16 * h * w, 100), LayerSpec::relu(),
                      LayerSpec::dense(100, classes)});
  }
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

ParamLayout::ParamLayout(const ModelSpec& spec) {
  const auto& layers = spec.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (!l.has_params()) continue;
    Shape wshape = l.kind == LayerKind::dense ? Shape{l.out, l.in}
                                              : Shape{l.out_channels, l.in_channels, l.kernel, l.kernel};
    Shape bshape = {l.kind == LayerKind::dense ? l.out : l.out_channels};
    const bool cls = i == spec.classifier_layer();
    for (auto [role, shape] : {std::pair{ParamRole::weight, wshape}, std::pair{ParamRole::bias, bshape}}) {
      ParamSlot s;
      s.name = "layer" + std::to_string(i) + (role == ParamRole::weight ? ".weight" : ".bias");
      s.layer = i;
      s.role = role;
      s.shape = shape;
      s.offset = total_;
      s.size = shape_numel(shape);
      s.classifier = cls;
      total_ += s.size;
      slots_.push_back(std::move(s));
    }
  }
}

std::size_t ParamLayout::slot_of(std::size_t flat_index) const {
  auto it = std::upper_bound(slots_.begin(), slots_.end(), flat_index,
                             [](std::size_t v, const ParamSlot& s) { return v < s.offset; });
  if (it == slots_.begin() || flat_index >= total_) throw ConfigError("slot_of: index out of range");
  return static_cast<std::size_t>(std::distance(slots_.begin(), it)) - 1;
}

Parameters::Parameters(ParamLayout layout, std::vector<Scalar> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.size()) {
    throw ShapeError("parameters: layout expects " + std::to_string(layout_.size()) + " values, got " +
                     std::to_string(values_.size()));
  }
}

std::span<Scalar> Parameters::view(std::size_t slot) {
  const auto& s = layout_.slot(slot);
  return std::span<Scalar>(values_).subspan(s.offset, s.size);
}

std::span<const Scalar> Parameters::view(std::size_t slot) const {
  const auto& s = layout_.slot(slot);
  return std::span<const Scalar>(values_).subspan(s.offset, s.size);
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)), layout_(spec_) {}

Parameters Network::init(std::uint64_t seed) const {
  Rng rng(seed, "init");
  std::vector<Scalar> values(layout_.size(), 0.0);
  for (const auto& s : layout_.slots()) {
    if (s.role == ParamRole::bias) continue;
    const std::size_t fan_in = s.size / s.shape[0];
    const Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
    for (std::size_t i = 0; i < s.size; ++i) values[s.offset + i] = rng.normal(0.0, stddev);
  }
  return Parameters(layout_, std::move(values));
}

Tensor Network::batch(std::span<const Scalar> inputs, std::size_t n) const {
  Shape shape{n};
  shape.insert(shape.end(), spec_.input_shape().begin(), spec_.input_shape().end());
  if (inputs.size() != shape_numel(shape)) {
    throw ShapeError("forward: " + std::to_string(inputs.size()) + " input values do not form " + shape_string(shape));
  }
  return Tensor(std::move(shape), std::vector<Scalar>(inputs.begin(), inputs.end()));
}

ForwardOutput Network::forward(const Tensor& theta, const Tensor& batch) const {
  if (theta.rank() != 1 || theta.numel() != layout_.size()) {
    throw ShapeError("forward: parameter vector " + shape_string(theta.shape()) + " does not match P=" +
                     std::to_string(layout_.size()));
  }
  Shape expected = spec_.input_shape();
  if (batch.rank() != expected.size() + 1 ||
      !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw ShapeError("forward: batch shape " + shape_string(batch.shape()) + " does not match input " +
                     shape_string(expected));
  }
  const auto& layers = spec_.layers();
  auto slots = layout_.slots();
  std::size_t next_slot = 0;
  Tensor x = batch;
  ForwardOutput out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::dense: {
        if (i == spec_.classifier_layer()) out.feature_map = x;
        const auto& ws = slots[next_slot++];
        const auto& bs = slots[next_slot++];
        Tensor w = ops::slice(theta, ws.offset, ws.shape);
        Tensor b = ops::slice(theta, bs.offset, bs.shape);
        x = ops::add_bias(ops::matmul(x, ops::transpose(w)), b);
        break;
      }
      case LayerKind::conv: {
        const auto& ws = slots[next_slot++];
        const auto& bs = slots[next_slot++];
        Tensor w = ops::slice(theta, ws.offset, ws.shape);
        Tensor b = ops::slice(theta, bs.offset, bs.shape);
        x = ops::add_bias(ops::conv2d(x, w, l.stride, l.pad), b);
        break;
      }
      case LayerKind::relu:
        x = ops::relu(x);
        break;
      case LayerKind::avg_pool:
        x = ops::avg_pool2d(x, l.window);
        break;
      case LayerKind::global_avg_pool:
        x = ops::global_avg_pool(x);
        break;
      case LayerKind::flatten:
        x = ops::flatten(x);
        break;
    }
  }
  out.logits = x;
  return out;
}

ForwardOutput Network::forward(std::span<const Scalar> theta, const Tensor& batch) const {
  Tensor t({theta.size()}, std::vector<Scalar>(theta.begin(), theta.end()), false);
  return forward(t, batch);
}

ClassifierView ClassifierView::of(const Network& net, std::span<const Scalar> theta) {
  const auto& layout = net.layout();
  const std::size_t n = layout.slots().size();
  const ParamSlot& ws = layout.slot(n - 2);
  const ParamSlot& bs = layout.slot(n - 1);
  const std::size_t k = ws.shape[0], m = ws.shape[1];
  ClassifierView v;
  v.weight.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  v.bias.resize(static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < m; ++c) v.weight(r, c) = theta[ws.offset + r * m + c];
    v.bias(r) = theta[bs.offset + r];
  }
  return v;
}

Eigen::MatrixXd ClassifierView::pseudo_inverse() const {
  return weight.completeOrthogonalDecomposition().pseudoInverse();
}

std::vector<Scalar> ClassifierView::logits(const Tensor& feature_map) const {
  const auto n = feature_map.dim(0);
  const auto m = static_cast<std::size_t>(weight.cols());
  const auto k = static_cast<std::size_t>(weight.rows());
  if (feature_map.dim(1) != m) throw ShapeError("classifier: feature width mismatch");
  std::vector<Scalar> out(n * k);
  auto f = feature_map.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < k; ++r) {
      Scalar s = 0;
      for (std::size_t c = 0; c < m; ++c) s += weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * f[i * m + c];
      out[i * k + r] = s + bias(static_cast<Eigen::Index>(r));
    }
  return out;
}

}  // namespace lnpt
