#pragma once

#include <cstddef>

#include "lnpt/tensor.hpp"

// Differentiable primitives. Each validates shapes and throws ShapeError
// naming the op and the offending shapes.
namespace lnpt::ops {

// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);
// [n,m] -> [m,n]
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);

// Adds a per-channel bias b[C] along axis 1 of x ([N,C] or [N,C,H,W]).
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor relu(const Tensor& x);

// x[N,C,H,W] * w[O,C,kh,kw] -> [N,O,H',W'] with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad);
// Non-overlapping k x k average pooling; trailing rows/cols that do not fill a window are dropped.
Tensor avg_pool2d(const Tensor& x, std::size_t k);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Contiguous window of a rank-1 tensor reshaped to `shape`.
Tensor slice(const Tensor& flat, std::size_t offset, Shape shape);

// Row-wise softmax over the last axis of a [N,K] tensor.
Tensor softmax(const Tensor& logits);
// Batch-mean cross-entropy between softmax(logits) and a target distribution.
Tensor cross_entropy(const Tensor& logits, const Tensor& target);
// Mean of squared differences over every element.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor sum_squares(const Tensor& a);

}  // namespace lnpt::ops
