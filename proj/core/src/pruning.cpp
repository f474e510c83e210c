#include "lnpt/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lnpt/error.hpp"
#include "lnpt/ops.hpp"
#include "lnpt/rng.hpp"

namespace lnpt {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::lnpt: return "lnpt";
    case Criterion::snip: return "snip";
    case Criterion::grasp: return "grasp";
    case Criterion::synflow: return "synflow";
    case Criterion::magnitude: return "magnitude";
    case Criterion::random: return "random";
  }
  return "unknown";
}

std::string_view to_string(PruneMode m) { return m == PruneMode::unstructured ? "unstructured" : "channel"; }

std::string_view to_string(HessianMode m) {
  switch (m) {
    case HessianMode::automatic: return "auto";
    case HessianMode::hutchinson: return "hutchinson";
    case HessianMode::exact: return "exact";
  }
  return "unknown";
}

std::string_view to_string(LnptHessian h) { return h == LnptHessian::diag ? "diag" : "hg"; }
std::string_view to_string(BaselineLoss l) { return l == BaselineLoss::feature ? "feature" : "cross-entropy"; }

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const E (&values)[N], std::string_view what) {
  std::string options;
  for (E v : values) {
    if (to_string(v) == s) return v;
    if (!options.empty()) options += '|';
    options += to_string(v);
  }
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (" + options + ")");
}

}  // namespace

Criterion criterion_from(std::string_view s) {
  constexpr Criterion all[] = {Criterion::lnpt, Criterion::snip, Criterion::grasp,
                               Criterion::synflow, Criterion::magnitude, Criterion::random};
  return parse_enum(s, all, "criterion");
}

PruneMode prune_mode_from(std::string_view s) {
  constexpr PruneMode all[] = {PruneMode::unstructured, PruneMode::channel};
  return parse_enum(s, all, "prune mode");
}

HessianMode hessian_mode_from(std::string_view s) {
  constexpr HessianMode all[] = {HessianMode::automatic, HessianMode::hutchinson, HessianMode::exact};
  return parse_enum(s, all, "hessian mode");
}

LnptHessian lnpt_hessian_from(std::string_view s) {
  constexpr LnptHessian all[] = {LnptHessian::diag, LnptHessian::hg};
  return parse_enum(s, all, "lnpt hessian");
}

BaselineLoss baseline_loss_from(std::string_view s) {
  constexpr BaselineLoss all[] = {BaselineLoss::feature, BaselineLoss::cross_entropy};
  return parse_enum(s, all, "baseline loss");
}

void PruneConfig::validate() const {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("prune: ratio must satisfy 0 <= ratio < 1, got " + std::to_string(ratio));
  if (score_per_class == 0) throw ConfigError("prune: score_per_class must be positive");
  if (hessian_samples == 0) throw ConfigError("prune: hessian_samples must be positive");
  if (!(hvp_step > 0)) throw ConfigError("prune: hvp_step must be positive");
}

PruneMask PruneMask::all_kept(const ParamLayout& layout) {
  return PruneMask(layout, std::vector<std::uint8_t>(layout.size(), 1));
}

PruneMask::PruneMask(const ParamLayout& layout, std::vector<std::uint8_t> keep) : keep_(std::move(keep)) {
  if (keep_.size() != layout.size()) {
    throw ShapeError("mask: " + std::to_string(keep_.size()) + " entries for " + std::to_string(layout.size()) +
                     " parameters");
  }
  for (const auto& s : layout.slots()) {
    for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
      if (keep_[i] > 1) throw ConfigError("mask: entries must be 0 or 1");
      if (!prunable(s)) {
        if (!keep_[i]) throw ConfigError("mask: slot '" + s.name + "' is never pruned");
        continue;
      }
      ++total_;
      kept_ += keep_[i];
    }
  }
}

std::uint64_t PruneMask::checksum() const { return lnpt::checksum(std::span<const std::uint8_t>(keep_)); }

std::vector<LayerDensity> PruneMask::per_layer(const ParamLayout& layout) const {
  std::vector<LayerDensity> rows;
  for (const auto& s : layout.slots()) {
    LayerDensity r{s.name, s.size, 0, prunable(s)};
    for (std::size_t i = s.offset; i < s.offset + s.size; ++i) r.kept += keep_[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

Tensor feature_loss(const Tensor& teacher_features, const Tensor& student_features) {
  if (teacher_features.shape() != student_features.shape()) {
    throw ShapeError("feature_loss: shape mismatch " + shape_string(teacher_features.shape()) + " vs " +
                     shape_string(student_features.shape()));
  }
  return ops::sum_squares(ops::sub(teacher_features, student_features));
}

Objective feature_objective(const Network& student, const ScoreBatch& batch) {
  return [&student, &batch](const Tensor& theta) {
    return feature_loss(batch.teacher_features, student.forward(theta, batch.inputs).feature_map);
  };
}

Objective cross_entropy_objective(const Network& student, const ScoreBatch& batch) {
  const std::size_t n = batch.inputs.dim(0);
  const std::size_t k = student.spec().class_count();
  if (batch.labels.size() != n) throw ConfigError("cross-entropy objective: one label per score sample required");
  std::vector<Scalar> onehot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * k + static_cast<std::size_t>(batch.labels[i])] = 1.0;
  Tensor target({n, k}, std::move(onehot));
  return [&student, &batch, target](const Tensor& theta) {
    return ops::cross_entropy(student.forward(theta, batch.inputs).logits, target);
  };
}

std::vector<Scalar> grad_flow(const Objective& feature_obj, std::span<const Scalar> theta) {
  return value_and_grad(feature_obj, theta).grad;
}

std::vector<Scalar> feature_loss_change(std::span<const Scalar> grad) {
  std::vector<Scalar> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] * grad[i];
  return out;
}

namespace {

bool all_zero(std::span<const Scalar> v) {
  return std::all_of(v.begin(), v.end(), [](Scalar x) { return x == 0.0; });
}

}  // namespace

ScoreVector score_lnpt(const Objective& feature_obj, std::span<const Scalar> theta, const PruneConfig& config) {
  auto g = grad_flow(feature_obj, theta);
  ScoreVector s(theta.size(), 0.0);
  // A zero gradient (e.g. teacher == student) gives identically zero scores.
  if (all_zero(g)) return s;
  if (config.lnpt_hessian == LnptHessian::hg) {
    auto hg = hvp(feature_obj, theta, g, config.hvp_step);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(theta[i] * hg[i]);
    return s;
  }
  const bool exact = config.hessian_mode == HessianMode::exact ||
                     (config.hessian_mode == HessianMode::automatic && theta.size() <= kExactHessianLimit);
  std::vector<Scalar> h;
  if (exact) {
    h = hessian_diag_exact(feature_obj, theta, config.hvp_step);
  } else {
    Rng rng(config.seed, "hutchinson");
    h = hessian_diag_hutchinson(feature_obj, theta, config.hessian_samples, rng, config.hvp_step);
  }
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(theta[i] * h[i] * g[i]);
  return s;
}

ScoreVector score_snip(const Objective& loss, std::span<const Scalar> theta) {
  auto g = value_and_grad(loss, theta).grad;
  ScoreVector s(theta.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(theta[i] * g[i]);
  return s;
}

std::vector<Scalar> grasp_raw(const Objective& loss, std::span<const Scalar> theta, Scalar step) {
  auto g = value_and_grad(loss, theta).grad;
  std::vector<Scalar> raw(theta.size(), 0.0);
  if (all_zero(g)) return raw;
  auto hg = hvp(loss, theta, g, step);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = -theta[i] * hg[i];
  return raw;
}

ScoreVector score_grasp(const Objective& loss, std::span<const Scalar> theta, Scalar step) {
  auto raw = grasp_raw(loss, theta, step);
  if (raw.empty()) return raw;
  const Scalar top = *std::max_element(raw.begin(), raw.end());
  for (Scalar& r : raw) r = top - r;
  return raw;
}

ScoreVector score_synflow(const Network& net, std::span<const Scalar> theta) {
  std::vector<Scalar> abs_theta(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) abs_theta[i] = std::abs(theta[i]);
  Tensor ones = net.batch(std::vector<Scalar>(net.spec().input_size(), 1.0), 1);
  auto vg = value_and_grad([&](const Tensor& t) { return ops::sum(net.forward(t, ones).logits); }, abs_theta);
  ScoreVector s(theta.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(abs_theta[i] * vg.grad[i]);
  return s;
}

ScoreVector score_magnitude(std::span<const Scalar> theta) {
  ScoreVector s(theta.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(theta[i]);
  return s;
}

ScoreVector score_random(std::size_t count, std::uint64_t seed) {
  Rng rng(seed, "random-prune");
  ScoreVector s(count);
  for (Scalar& v : s) v = rng.uniform();
  return s;
}

ScoreVector compute_scores(const Network& student, std::span<const Scalar> theta, const ScoreBatch& batch,
                           const PruneConfig& config) {
  config.validate();
  auto baseline = [&]() {
    return config.baseline_loss == BaselineLoss::feature ? feature_objective(student, batch)
                                                         : cross_entropy_objective(student, batch);
  };
  ScoreVector s;
  switch (config.criterion) {
    case Criterion::lnpt: s = score_lnpt(feature_objective(student, batch), theta, config); break;
    case Criterion::snip: s = score_snip(baseline(), theta); break;
    case Criterion::grasp: s = score_grasp(baseline(), theta, config.hvp_step); break;
    case Criterion::synflow: s = score_synflow(student, theta); break;
    case Criterion::magnitude: s = score_magnitude(theta); break;
    case Criterion::random: s = score_random(theta.size(), config.seed); break;
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s[i]) || s[i] < 0) {
      const auto& slot = student.layout().slot(student.layout().slot_of(i));
      throw NumericError(std::string(to_string(config.criterion)) + " score: invalid value in '" + slot.name +
                         "' at flat index " + std::to_string(i));
    }
  }
  return s;
}

std::vector<std::uint8_t> select_top(std::span<const Scalar> scores, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("make_mask: ratio must satisfy 0 <= ratio < 1");
  for (Scalar v : scores) {
    if (!std::isfinite(v)) throw NumericError("make_mask: scores must be finite");
  }
  const std::size_t n = scores.size();
  const auto removed = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  const std::size_t keep = n - removed;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::uint8_t> flags(n, 0);
  for (std::size_t i = 0; i < keep; ++i) flags[order[i]] = 1;
  return flags;
}

PruneMask make_mask(const ParamLayout& layout, std::span<const Scalar> scores, double ratio) {
  if (scores.size() != layout.size()) throw ShapeError("make_mask: score vector does not match parameter count");
  std::vector<std::size_t> index;
  std::vector<Scalar> pool;
  for (const auto& s : layout.slots()) {
    if (!prunable(s)) continue;
    for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
      index.push_back(i);
      pool.push_back(scores[i]);
    }
  }
  auto flags = select_top(pool, ratio);
  std::vector<std::uint8_t> keep(layout.size(), 1);
  for (std::size_t j = 0; j < index.size(); ++j) keep[index[j]] = flags[j];
  return PruneMask(layout, std::move(keep));
}

std::size_t channel_count(const ParamLayout& layout) {
  std::size_t n = 0;
  for (const auto& s : layout.slots())
    if (prunable(s)) n += s.channels();
  return n;
}

std::vector<Scalar> channel_scores(const ParamLayout& layout, std::span<const Scalar> scores) {
  if (scores.size() != layout.size()) throw ShapeError("channel_scores: score vector does not match parameter count");
  std::vector<Scalar> out;
  for (const auto& s : layout.slots()) {
    if (!prunable(s)) continue;
    const std::size_t per = s.size / s.channels();
    for (std::size_t c = 0; c < s.channels(); ++c) {
      Scalar acc = 0;
      for (std::size_t i = 0; i < per; ++i) acc += scores[s.offset + c * per + i];
      out.push_back(acc);
    }
  }
  return out;
}

PruneMask make_channel_mask(const ParamLayout& layout, std::span<const Scalar> scores, double ratio) {
  auto flags = select_top(channel_scores(layout, scores), ratio);
  std::vector<std::uint8_t> keep(layout.size(), 1);
  std::size_t ch = 0;
  for (const auto& s : layout.slots()) {
    if (!prunable(s)) continue;
    const std::size_t per = s.size / s.channels();
    for (std::size_t c = 0; c < s.channels(); ++c, ++ch) {
      if (flags[ch]) continue;
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(s.offset + c * per), per, std::uint8_t{0});
    }
  }
  return PruneMask(layout, std::move(keep));
}

PruneResult prune(const Network& student, std::span<const Scalar> theta, const ScoreBatch& batch,
                  const PruneConfig& config) {
  auto scores = compute_scores(student, theta, batch, config);
  auto mask = config.mode == PruneMode::unstructured ? make_mask(student.layout(), scores, config.ratio)
                                                     : make_channel_mask(student.layout(), scores, config.ratio);
  return {std::move(scores), std::move(mask)};
}

void apply_mask(std::span<Scalar> theta, const PruneMask& mask) {
  if (theta.size() != mask.size()) throw ShapeError("apply_mask: size mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (!mask.kept(i)) theta[i] = 0.0;
}

void mask_gradient(std::span<Scalar> grad, const PruneMask& mask) { apply_mask(grad, mask); }

}  // namespace lnpt
