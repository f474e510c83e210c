#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lnpt/data.hpp"
#include "lnpt/model.hpp"
#include "lnpt/second_order.hpp"
#include "lnpt/tensor.hpp"

namespace lnpt {

enum class Criterion { lnpt, snip, grasp, synflow, magnitude, random };
enum class PruneMode { unstructured, channel };
// How diag(H) is obtained for the LNPT score. `automatic` uses the exact
// column-by-column Hessian when P <= kExactHessianLimit, Hutchinson otherwise.
enum class HessianMode { automatic, hutchinson, exact };
// diag: |theta * H_ii * g_i|.  hg: |theta * (H g)_i|.
enum class LnptHessian { diag, hg };
// Objective used by the SNIP and GraSP baselines.
enum class BaselineLoss { feature, cross_entropy };

std::string_view to_string(Criterion c);
std::string_view to_string(PruneMode m);
std::string_view to_string(HessianMode m);
std::string_view to_string(LnptHessian h);
std::string_view to_string(BaselineLoss l);
Criterion criterion_from(std::string_view s);
PruneMode prune_mode_from(std::string_view s);
HessianMode hessian_mode_from(std::string_view s);
LnptHessian lnpt_hessian_from(std::string_view s);
BaselineLoss baseline_loss_from(std::string_view s);

struct PruneConfig {
  Criterion criterion = Criterion::lnpt;
  double ratio = 0.9;
  PruneMode mode = PruneMode::unstructured;
  std::size_t score_per_class = 10;
  ScoreSampling sampling = ScoreSampling::balanced_pseudo;
  std::size_t hessian_samples = 8;
  HessianMode hessian_mode = HessianMode::automatic;
  LnptHessian lnpt_hessian = LnptHessian::diag;
  BaselineLoss baseline_loss = BaselineLoss::feature;
  Scalar hvp_step = kDefaultHvpStep;
  std::uint64_t seed = 0;

  // Throws ConfigError unless 0 <= ratio < 1 and counts are positive.
  void validate() const;
};

// Only non-classifier weights are prunable; biases and the final dense layer are always kept.
inline bool prunable(const ParamSlot& s) { return s.role == ParamRole::weight && !s.classifier; }

struct LayerDensity {
  std::string name;
  std::size_t total = 0;
  std::size_t kept = 0;
  bool prunable = true;
  double fraction() const { return total ? static_cast<double>(kept) / static_cast<double>(total) : 1.0; }
};

// Binary keep mask over the flat parameter vector.
class PruneMask {
 public:
  static PruneMask all_kept(const ParamLayout& layout);
  // keep must have one 0/1 entry per parameter; non-prunable entries must be 1.
  PruneMask(const ParamLayout& layout, std::vector<std::uint8_t> keep);

  std::span<const std::uint8_t> keep() const { return keep_; }
  bool kept(std::size_t i) const { return keep_[i] != 0; }
  std::size_t size() const { return keep_.size(); }
  // Counts over prunable entries only.
  std::size_t kept_count() const { return kept_; }
  std::size_t total_count() const { return total_; }
  double density() const { return total_ ? static_cast<double>(kept_) / static_cast<double>(total_) : 1.0; }
  std::uint64_t checksum() const;

  // One row per parameter slot.
  std::vector<LayerDensity> per_layer(const ParamLayout& layout) const;

  bool operator==(const PruneMask& other) const { return keep_ == other.keep_; }

 private:
  std::vector<std::uint8_t> keep_;
  std::size_t kept_ = 0;
  std::size_t total_ = 0;
};

// Data the scorers need: score-batch inputs, the frozen teacher's feature map
// on them, and class ids (true or pseudo) for the cross-entropy baselines.
struct ScoreBatch {
  Tensor inputs;
  Tensor teacher_features;
  std::vector<int> labels;
};

// Sum over the batch of squared feature differences, sum((m_t - m_s)^2).
Tensor feature_loss(const Tensor& teacher_features, const Tensor& student_features);

// theta -> feature_loss(m_t, m_s(theta)) on the score batch.
Objective feature_objective(const Network& student, const ScoreBatch& batch);
// theta -> mean cross-entropy against one-hot batch.labels.
Objective cross_entropy_objective(const Network& student, const ScoreBatch& batch);

// Gradient of the feature loss w.r.t. every student parameter.
std::vector<Scalar> grad_flow(const Objective& feature_obj, std::span<const Scalar> theta);
// First-order change of the feature loss along its own gradient: g_i * g_i.
std::vector<Scalar> feature_loss_change(std::span<const Scalar> grad);

using ScoreVector = std::vector<Scalar>;

// |theta_i * d2L/dtheta_i2 * dL/dtheta_i| for the feature objective.
ScoreVector score_lnpt(const Objective& feature_obj, std::span<const Scalar> theta, const PruneConfig& config);
// |theta_i * dL/dtheta_i|
ScoreVector score_snip(const Objective& loss, std::span<const Scalar> theta);
// -theta * (H g), as defined by GraSP; lower means more important.
std::vector<Scalar> grasp_raw(const Objective& loss, std::span<const Scalar> theta, Scalar step = kDefaultHvpStep);
// Nonnegative GraSP score: max(raw) - raw, so higher is more important.
ScoreVector score_grasp(const Objective& loss, std::span<const Scalar> theta, Scalar step = kDefaultHvpStep);
// Data-free path-norm saliency on |theta| with an all-ones input.
ScoreVector score_synflow(const Network& net, std::span<const Scalar> theta);
ScoreVector score_magnitude(std::span<const Scalar> theta);
ScoreVector score_random(std::size_t count, std::uint64_t seed);

// Dispatches on config.criterion. Throws NumericError naming the slot when a score is not finite.
ScoreVector compute_scores(const Network& student, std::span<const Scalar> theta, const ScoreBatch& batch,
                           const PruneConfig& config);

// Keep flags for the top (1 - ratio) fraction of scores. Exactly
// n - round(ratio * n) entries are kept; ties go to the lower index.
std::vector<std::uint8_t> select_top(std::span<const Scalar> scores, double ratio);

// Global unstructured mask over prunable weights.
PruneMask make_mask(const ParamLayout& layout, std::span<const Scalar> scores, double ratio);

// Sum of member-weight scores per output channel (conv) / neuron (dense),
// for every prunable slot in layout order.
std::vector<Scalar> channel_scores(const ParamLayout& layout, std::span<const Scalar> scores);
std::size_t channel_count(const ParamLayout& layout);
// Channel-granularity mask with one global ratio over all prunable channels.
PruneMask make_channel_mask(const ParamLayout& layout, std::span<const Scalar> scores, double ratio);

struct PruneResult {
  ScoreVector scores;
  PruneMask mask;
};

PruneResult prune(const Network& student, std::span<const Scalar> theta, const ScoreBatch& batch,
                  const PruneConfig& config);

// Zeroes masked parameters.
void apply_mask(std::span<Scalar> theta, const PruneMask& mask);
// Zeroes gradients of masked parameters; called after every backward pass.
void mask_gradient(std::span<Scalar> grad, const PruneMask& mask);

}  // namespace lnpt
