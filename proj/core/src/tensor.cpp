#include "lnpt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "lnpt/error.hpp"

namespace lnpt {

namespace {

std::atomic<std::uint64_t> g_sequence{0};

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw ConfigError("tensor: use of undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const Scalar> Tensor::data() const { return checked(impl_).data; }

std::span<Scalar> Tensor::mutable_data() {
  auto& impl = checked(impl_);
  if (impl.producer) throw ConfigError("tensor: only leaf tensors are mutable");
  return impl.data;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }
bool Tensor::is_leaf() const { return checked(impl_).producer == nullptr; }
bool Tensor::has_grad() const { return checked(impl_).grad.has_value(); }

std::span<const Scalar> Tensor::grad() const {
  const auto& impl = checked(impl_);
  if (!impl.grad) throw ConfigError("grad: tensor has no gradient");
  return *impl.grad;
}

void Tensor::zero_grad() { checked(impl_).grad.reset(); }

void Tensor::backward() const { lnpt::backward(*this); }

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return Tensor(impl.shape, impl.data, false);
}

Graph Graph::collect(const Tensor& root) {
  Graph g;
  std::unordered_set<const Node*> seen;
  std::vector<const detail::TensorImpl*> stack{root.impl().get()};
  while (!stack.empty()) {
    const detail::TensorImpl* t = stack.back();
    stack.pop_back();
    const Node* n = t->producer.get();
    if (!n || !seen.insert(n).second) continue;
    g.nodes_.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  std::sort(g.nodes_.begin(), g.nodes_.end(),
            [](const Node* a, const Node* b) { return a->sequence < b->sequence; });
  return g;
}

Tensor make_result(std::string_view op, Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  for (Scalar v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in result");
  }
  Tensor out(std::move(shape), std::move(data));
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    auto node = std::make_shared<Node>();
    node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
    node->op = std::string(op);
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    node->backward = std::move(backward);
    out.impl()->requires_grad = true;
    out.impl()->producer = std::move(node);
  }
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  Graph graph = Graph::collect(loss);
  // Gradient buffers for intermediates live only for the duration of the sweep.
  std::unordered_map<const detail::TensorImpl*, std::vector<Scalar>> scratch;
  auto buffer_for = [&](detail::TensorImpl* t) -> std::vector<Scalar>* {
    if (!t->requires_grad) return nullptr;
    if (!t->producer) {
      if (!t->grad) t->grad.emplace(t->data.size(), 0.0);
      return &*t->grad;
    }
    auto [it, inserted] = scratch.try_emplace(t);
    if (inserted) it->second.assign(t->data.size(), 0.0);
    return &it->second;
  };

  auto* root = loss.impl().get();
  if (!root->producer) {
    // A leaf loss: d loss / d loss = 1.
    buffer_for(root)->at(0) += 1.0;
    return;
  }
  buffer_for(root)->at(0) = 1.0;

  // Output tensor of each node, needed to look up its gradient buffer.
  std::unordered_map<const Node*, detail::TensorImpl*> outputs;
  {
    std::vector<detail::TensorImpl*> stack{root};
    std::unordered_set<const detail::TensorImpl*> seen;
    while (!stack.empty()) {
      auto* t = stack.back();
      stack.pop_back();
      if (!t->producer || !seen.insert(t).second) continue;
      outputs[t->producer.get()] = t;
      for (const auto& in : t->producer->inputs) {
        if (in->requires_grad) stack.push_back(in.get());
      }
    }
  }

  auto nodes = graph.nodes();
  std::vector<std::vector<Scalar>*> in_grads;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Node* node = *it;
    detail::TensorImpl* out = outputs.at(node);
    auto found = scratch.find(out);
    if (found == scratch.end()) continue;
    in_grads.clear();
    for (const auto& in : node->inputs) in_grads.push_back(buffer_for(in.get()));
    node->backward(*out, found->second, in_grads);
  }
}

ValueAndGrad value_and_grad(const Objective& f, std::span<const Scalar> theta) {
  Tensor leaf({theta.size()}, std::vector<Scalar>(theta.begin(), theta.end()), true);
  Tensor loss = f(leaf);
  if (loss.numel() != 1) throw ShapeError("value_and_grad: objective returned shape " + shape_string(loss.shape()));
  backward(loss);
  ValueAndGrad out;
  out.value = loss.item();
  if (leaf.has_grad()) {
    auto g = leaf.grad();
    out.grad.assign(g.begin(), g.end());
  } else {
    out.grad.assign(theta.size(), 0.0);
  }
  return out;
}

}  // namespace lnpt
