#pragma once

#include <span>
#include <vector>

#include "lnpt/tensor.hpp"

namespace lnpt {

// One-hot targets at the row argmax of teacher logits; ties go to the lowest
// class index. Throws NumericError on NaN logits.
Tensor pseudo_onehot(const Tensor& teacher_logits);
// Argmax per row with the same tie rule.
std::vector<int> argmax_rows(std::span<const Scalar> logits, std::size_t classes);
Tensor onehot(std::span<const int> labels, std::size_t classes);

// Batch-mean cross-entropy between softmax(student_logits) and hard targets.
Tensor loss_oh(const Tensor& student_logits, const Tensor& targets);

// MSE(m_t, m_s / T) averaged over batch and feature dims. With symmetric set,
// the teacher map is divided by T as well.
Tensor loss_feature_kd(const Tensor& teacher_features, const Tensor& student_features, Scalar temperature,
                       bool symmetric = false);

// L_oh + alpha * L_m.
Tensor loss_total(const Tensor& oh, const Tensor& feature, Scalar alpha);

// Supervised cross-entropy plus alpha times the cross-entropy against the
// softened teacher distribution softmax(f_t / T).
Tensor loss_kd_classical(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& labels_onehot,
                         Scalar alpha, Scalar temperature);

}  // namespace lnpt
