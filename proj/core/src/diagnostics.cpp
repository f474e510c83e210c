#include "lnpt/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lnpt/error.hpp"
#include "lnpt/losses.hpp"
#include "lnpt/ops.hpp"

namespace lnpt {

Scalar weight_distance(std::span<const Scalar> teacher, std::span<const Scalar> student, const PruneMask& mask) {
  if (teacher.size() != student.size() || mask.size() != student.size()) {
    throw ShapeError("weight_distance: teacher has " + std::to_string(teacher.size()) + " parameters, student " +
                     std::to_string(student.size()));
  }
  Scalar acc = 0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const Scalar d = teacher[i] - (mask.kept(i) ? student[i] : 0.0);
    acc += d * d;
  }
  return acc;
}

Scalar mean_feature_loss(const Network& student, std::span<const Scalar> theta, const Tensor& inputs,
                         const Tensor& teacher_features, Scalar temperature, bool symmetric) {
  const std::size_t n = inputs.dim(0);
  if (n == 0) return 0.0;
  if (teacher_features.dim(0) != n) throw ShapeError("mean_feature_loss: sample counts differ");
  // Chunked so large evaluation sets do not materialise every activation at once.
  constexpr std::size_t chunk = 512;
  const std::size_t in_w = inputs.numel() / n;
  const std::size_t m_w = teacher_features.numel() / n;
  Scalar acc = 0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    Tensor x = student.batch(inputs.data().subspan(start * in_w, len * in_w), len);
    Tensor t({len, m_w}, std::vector<Scalar>(teacher_features.data().begin() + static_cast<std::ptrdiff_t>(start * m_w),
                                             teacher_features.data().begin() + static_cast<std::ptrdiff_t>((start + len) * m_w)));
    Tensor fm = student.forward(theta, x).feature_map;
    acc += loss_feature_kd(t, fm, temperature, symmetric).item() * static_cast<Scalar>(len);
  }
  return acc / static_cast<Scalar>(n);
}

namespace {

Scalar l2(std::span<const Scalar> v) {
  Scalar s = 0;
  for (Scalar x : v) s += x * x;
  return std::sqrt(s);
}

// Rows of d out / d theta for every entry of `out`, one backward pass each.
Eigen::MatrixXd jacobian_rows(const Tensor& leaf, const Tensor& out) {
  const std::size_t rows = out.numel();
  const std::size_t p = leaf.numel();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(p));
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<Scalar> sel(rows, 0.0);
    sel[r] = 1.0;
    Tensor pick = ops::sum(ops::mul(out, Tensor(out.shape(), std::move(sel))));
    Tensor(leaf).zero_grad();
    pick.backward();
    if (!leaf.has_grad()) continue;
    auto g = leaf.grad();
    for (std::size_t c = 0; c < p; ++c) j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = g[c];
  }
  Tensor(leaf).zero_grad();
  return j;
}

std::vector<Scalar> batch_mean_features(const Network& net, std::span<const Scalar> theta, const Tensor& batch) {
  Tensor fm = net.forward(theta, batch).feature_map;
  const std::size_t n = fm.dim(0), m = fm.dim(1);
  std::vector<Scalar> mean(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) mean[j] += fm.at(i * m + j);
  for (Scalar& v : mean) v /= static_cast<Scalar>(n);
  return mean;
}

}  // namespace

Scalar LearningGapStep::predicted_norm() const { return l2(predicted); }
Scalar LearningGapStep::measured_norm() const { return l2(measured); }

Scalar LearningGapStep::relative_error() const {
  std::vector<Scalar> diff(predicted.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = predicted[i] - measured[i];
  const Scalar num = l2(diff);
  const Scalar den = measured_norm();
  if (den == 0) return num == 0 ? 0.0 : std::numeric_limits<Scalar>::infinity();
  return num / den;
}

LearningGapStep learning_gap_step(const Network& net, std::span<const Scalar> theta, const Tensor& batch,
                                  const Objective& loss, Scalar lr, const PruneMask* mask) {
  const std::size_t p = theta.size();
  const std::size_t m = net.spec().feature_dim();
  if (p * m > kLearningGapLimit) {
    throw ConfigError("learning gap: P*M = " + std::to_string(p * m) + " exceeds the limit of " +
                      std::to_string(kLearningGapLimit) + "; use a smaller model");
  }
  if (!(lr > 0)) throw ConfigError("learning gap: step size must be positive");

  ValueAndGrad vg = value_and_grad(loss, theta);
  if (mask) mask_gradient(vg.grad, *mask);

  Tensor leaf({p}, std::vector<Scalar>(theta.begin(), theta.end()), true);
  Tensor fm = net.forward(leaf, batch).feature_map;
  const std::size_t n = fm.dim(0);
  Tensor mean = ops::matmul(Tensor::full({1, n}, 1.0 / static_cast<Scalar>(n)), fm);
  Eigen::MatrixXd j = jacobian_rows(leaf, mean);
  Eigen::Map<const Eigen::VectorXd> g(vg.grad.data(), static_cast<Eigen::Index>(p));
  Eigen::VectorXd pred = lr * (j * g);

  std::vector<Scalar> stepped(theta.begin(), theta.end());
  for (std::size_t i = 0; i < p; ++i) stepped[i] -= lr * vg.grad[i];
  const auto before = batch_mean_features(net, theta, batch);
  const auto after = batch_mean_features(net, stepped, batch);

  LearningGapStep out;
  out.predicted.assign(pred.data(), pred.data() + pred.size());
  out.measured.resize(m);
  // Gap is m_t - m_s; the teacher term cancels in the difference.
  for (std::size_t i = 0; i < m; ++i) out.measured[i] = before[i] - after[i];
  return out;
}

Eigen::MatrixXd NtkMatrix::mean_block() const {
  const auto k = static_cast<Eigen::Index>(outputs);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t a = 0; a < samples; ++a)
    for (std::size_t b = 0; b < samples; ++b)
      acc += full.block(static_cast<Eigen::Index>(a) * k, static_cast<Eigen::Index>(b) * k, k, k);
  return acc / static_cast<Scalar>(samples * samples);
}

Scalar NtkMatrix::asymmetry() const {
  const Scalar n = full.norm();
  return n == 0 ? 0.0 : (full - full.transpose()).norm() / n;
}

Scalar NtkMatrix::min_eigenvalue() const {
  Eigen::MatrixXd sym = 0.5 * (full + full.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

NtkMatrix ntk(const Network& net, std::span<const Scalar> theta, const Tensor& batch) {
  const std::size_t n = batch.dim(0);
  const std::size_t k = net.spec().class_count();
  if (n == 0) throw ConfigError("ntk: empty batch");
  if (n * k > kNtkLimit) {
    throw ConfigError("ntk: N*K = " + std::to_string(n * k) + " exceeds the limit of " + std::to_string(kNtkLimit));
  }
  Tensor leaf({theta.size()}, std::vector<Scalar>(theta.begin(), theta.end()), true);
  Tensor logits = net.forward(leaf, batch).logits;
  Eigen::MatrixXd j = jacobian_rows(leaf, logits);
  NtkMatrix out;
  out.samples = n;
  out.outputs = k;
  out.full = j * j.transpose();
  return out;
}

Eigen::MatrixXd sensitivity(const NtkMatrix& kernel, const ClassifierView& classifier) {
  const Eigen::MatrixXd pinv = classifier.pseudo_inverse();
  if (pinv.cols() != static_cast<Eigen::Index>(kernel.outputs)) {
    throw ShapeError("sensitivity: classifier has " + std::to_string(pinv.cols()) + " outputs, kernel " +
                     std::to_string(kernel.outputs));
  }
  return pinv * kernel.mean_block() * pinv.transpose();
}

Scalar sensitivity_drift(const Eigen::MatrixXd& current, const Eigen::MatrixXd& initial) {
  if (current.rows() != initial.rows() || current.cols() != initial.cols()) throw ShapeError("sensitivity_drift: size mismatch");
  const Scalar base = initial.norm();
  if (base == 0) throw NumericError("sensitivity_drift: initial sensitivity is zero");
  return (current - initial).norm() / base;
}

void write_diagnostics_csv(const std::filesystem::path& path, std::span<const DiagnosticsRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  auto put = [&](const std::optional<Scalar>& v) {
    out << ',';
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", *v);
      out << buf;
    }
  };
  out << "epoch,dtd,mean_Lm,delta_ell_pred,delta_ell_meas,s_drift\n";
  for (const auto& r : rows) {
    out << r.epoch;
    put(r.dtd);
    put(r.mean_lm);
    put(r.delta_ell_pred);
    put(r.delta_ell_meas);
    put(r.s_drift);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace lnpt
