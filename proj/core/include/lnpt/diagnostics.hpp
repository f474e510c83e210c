#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lnpt/model.hpp"
#include "lnpt/pruning.hpp"
#include "lnpt/tensor.hpp"

namespace lnpt {

// d^T d with d = theta_t - theta_s, masked student entries counted as zero.
Scalar weight_distance(std::span<const Scalar> teacher, std::span<const Scalar> student, const PruneMask& mask);

// Mean over samples of MSE(m_t, m_s / T), the per-epoch feature-loss trace value.
Scalar mean_feature_loss(const Network& student, std::span<const Scalar> theta, const Tensor& inputs,
                         const Tensor& teacher_features, Scalar temperature, bool symmetric = false);

// Upper bound on P * M for the explicit feature-map Jacobian.
inline constexpr std::size_t kLearningGapLimit = 1'000'000;

struct LearningGapStep {
  // lr * J g, with J the Jacobian of the batch-mean feature map.
  std::vector<Scalar> predicted;
  // Change of (m_t - m_s) after one plain SGD step on a scratch copy.
  std::vector<Scalar> measured;

  Scalar predicted_norm() const;
  Scalar measured_norm() const;
  // |predicted - measured| / |measured|; 0 when both vanish.
  Scalar relative_error() const;
};

// Predicted vs measured one-step change of the learning gap over a batch.
// `loss` is the training objective; masked gradient entries are zeroed when a mask is given.
// Throws ConfigError when P * M exceeds kLearningGapLimit.
LearningGapStep learning_gap_step(const Network& net, std::span<const Scalar> theta, const Tensor& batch,
                                  const Objective& loss, Scalar lr, const PruneMask* mask = nullptr);

// Largest N * K allowed for the empirical NTK.
inline constexpr std::size_t kNtkLimit = 256;

// Empirical neural tangent kernel over N samples with K outputs each:
// full(n*K + i, m*K + j) = <d f_{n,i} / d theta, d f_{m,j} / d theta>.
struct NtkMatrix {
  std::size_t samples = 0;
  std::size_t outputs = 0;
  Eigen::MatrixXd full;

  // K x K block average over all sample pairs.
  Eigen::MatrixXd mean_block() const;
  Scalar asymmetry() const;
  Scalar min_eigenvalue() const;
  Scalar norm() const { return full.norm(); }
};

NtkMatrix ntk(const Network& net, std::span<const Scalar> theta, const Tensor& batch);

// s = W+ Theta_bar (W+)^T with Theta_bar the mean K x K block; M x M.
Eigen::MatrixXd sensitivity(const NtkMatrix& kernel, const ClassifierView& classifier);
// ||s_t - s_0||_F / ||s_0||_F
Scalar sensitivity_drift(const Eigen::MatrixXd& current, const Eigen::MatrixXd& initial);

// One diagnostics CSV row. Optional columns are written empty when not computed.
struct DiagnosticsRow {
  std::size_t epoch = 0;
  Scalar dtd = 0;
  Scalar mean_lm = 0;
  std::optional<Scalar> delta_ell_pred;
  std::optional<Scalar> delta_ell_meas;
  std::optional<Scalar> s_drift;
};

void write_diagnostics_csv(const std::filesystem::path& path, std::span<const DiagnosticsRow> rows);

}  // namespace lnpt
