#include "lnpt/losses.hpp"

#include <cmath>

#include "lnpt/error.hpp"
#include "lnpt/ops.hpp"

namespace lnpt {

std::vector<int> argmax_rows(std::span<const Scalar> logits, std::size_t classes) {
  if (classes == 0 || logits.size() % classes != 0) throw ShapeError("argmax: logits do not divide into rows");
  const std::size_t n = logits.size() / classes;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      const Scalar v = logits[i * classes + j];
      if (std::isnan(v)) throw NumericError("argmax: NaN logit in row " + std::to_string(i));
      if (v > logits[i * classes + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor onehot(std::span<const int> labels, std::size_t classes) {
  std::vector<Scalar> t(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ConfigError("onehot: label out of range");
    t[i * classes + static_cast<std::size_t>(y)] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(t));
}

Tensor pseudo_onehot(const Tensor& teacher_logits) {
  if (teacher_logits.rank() != 2) throw ShapeError("pseudo_onehot: expected [N,K], got " + shape_string(teacher_logits.shape()));
  const std::size_t k = teacher_logits.dim(1);
  return onehot(argmax_rows(teacher_logits.data(), k), k);
}

Tensor loss_oh(const Tensor& student_logits, const Tensor& targets) { return ops::cross_entropy(student_logits, targets); }

Tensor loss_feature_kd(const Tensor& teacher_features, const Tensor& student_features, Scalar temperature,
                       bool symmetric) {
  if (!(temperature > 0)) throw ConfigError("loss_feature_kd: temperature must be positive");
  const Tensor teacher = symmetric ? ops::scale(teacher_features, 1.0 / temperature) : teacher_features;
  return ops::mse(teacher, ops::scale(student_features, 1.0 / temperature));
}

Tensor loss_total(const Tensor& oh, const Tensor& feature, Scalar alpha) {
  return ops::add(oh, ops::scale(feature, alpha));
}

Tensor loss_kd_classical(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& labels_onehot,
                         Scalar alpha, Scalar temperature) {
  if (!(temperature > 0)) throw ConfigError("loss_kd_classical: temperature must be positive");
  Tensor soft = ops::softmax(ops::scale(teacher_logits.detach(), 1.0 / temperature));
  return ops::add(ops::cross_entropy(student_logits, labels_onehot),
                  ops::scale(ops::cross_entropy(student_logits, soft), alpha));
}

}  // namespace lnpt
