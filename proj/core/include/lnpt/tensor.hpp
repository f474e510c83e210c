#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lnpt {

// All numeric paths run in 64-bit floating point.
using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<Scalar> data;
  bool requires_grad = false;
  std::optional<std::vector<Scalar>> grad;
  // Null for leaves.
  std::shared_ptr<Node> producer;
};

}  // namespace detail

// Dense row-major tensor with reverse-mode gradient support.
//
// Tensor is a cheap handle; copies share the same underlying buffer. Values
// produced by ops are never mutated afterwards. Only leaves expose
// mutable_data(), which the trainer uses for in-place parameter updates.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const Scalar> data() const;
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  // Gradient buffer; present only on requires_grad leaves after backward().
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void zero_grad();

  // Reverse-mode sweep from this scalar. Gradients accumulate into leaves
  // across repeated calls until zero_grad().
  void backward() const;

  // Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Accumulates the op's input gradients given the output gradient.
// in_grads[i] is null when input i does not take part in differentiation.
using BackwardFn = std::function<void(const detail::TensorImpl& out, std::span<const Scalar> out_grad,
                                      std::span<std::vector<Scalar>* const> in_grads)>;

struct Node {
  std::uint64_t sequence = 0;
  std::string op;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  BackwardFn backward;
};

// The op nodes reachable from a root, ordered by creation (a valid topological
// order). backward() walks it in exact reverse, so accumulation order is fixed.
class Graph {
 public:
  static Graph collect(const Tensor& root);

  std::span<const Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<const Node*> nodes_;
};

// Builds an op result, recording a graph node when any input requires grad.
// Throws NumericError naming the op if the values are not all finite.
Tensor make_result(std::string_view op, Shape shape, std::vector<Scalar> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

void backward(const Tensor& loss);

// Scalar objective over a flat parameter vector, written against the tensor ops.
using Objective = std::function<Tensor(const Tensor& theta)>;

struct ValueAndGrad {
  Scalar value = 0;
  std::vector<Scalar> grad;
};

// Evaluates f at theta and returns the reverse-mode gradient.
ValueAndGrad value_and_grad(const Objective& f, std::span<const Scalar> theta);

}  // namespace lnpt
