#include "lnpt/distill.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lnpt/diagnostics.hpp"
#include "lnpt/error.hpp"
#include "lnpt/ops.hpp"
#include "lnpt/rng.hpp"

namespace lnpt {

std::string_view to_string(DistillMode m) {
  switch (m) {
    case DistillMode::lnpt: return "lnpt";
    case DistillMode::classical_kd: return "classical_kd";
    case DistillMode::true_label: return "true_label";
    case DistillMode::oh_only: return "oh_only";
    case DistillMode::fm_only: return "fm_only";
  }
  return "unknown";
}

DistillMode distill_mode_from(std::string_view s) {
  for (auto m : {DistillMode::lnpt, DistillMode::classical_kd, DistillMode::true_label, DistillMode::oh_only,
                 DistillMode::fm_only}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown distill mode '" + std::string(s) + "' (lnpt|classical_kd|true_label|oh_only|fm_only)");
}

bool needs_labels(DistillMode m) { return m == DistillMode::classical_kd || m == DistillMode::true_label; }

void DistillConfig::validate() const {
  if (!(temperature > 0)) throw ConfigError("distill: temperature must be positive");
  if (!(alpha >= 0)) throw ConfigError("distill: alpha must be non-negative");
  if (!(lr > 0)) throw ConfigError("distill: learning rate must be positive");
  if (!(lr_min >= 0 && lr_min <= lr)) throw ConfigError("distill: lr_min must lie in [0, lr]");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("distill: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("distill: weight decay must be non-negative");
  if (batch_size == 0) throw ConfigError("distill: batch size must be positive");
}

Scalar cosine_lr(std::size_t epoch, std::size_t epochs, Scalar lr0, Scalar lr_min) {
  if (epochs == 0) return lr0;
  const Scalar t = static_cast<Scalar>(epoch) / static_cast<Scalar>(epochs);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

void SgdMomentum::step(std::span<Scalar> theta, std::span<const Scalar> grad, Scalar lr) {
  if (theta.size() != velocity_.size() || grad.size() != velocity_.size()) throw ShapeError("sgd: size mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + grad[i] + weight_decay_ * theta[i];
    theta[i] -= lr * velocity_[i];
  }
}

namespace {

std::string fmt6(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void write_run_records_csv(const std::filesystem::path& path, std::span<const RunRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "epoch,L_oh,L_m,L_total,test_acc,dtd,mean_Lm,lr\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << fmt6(r.loss_oh) << ',' << fmt6(r.loss_m) << ',' << fmt6(r.loss_total) << ','
        << fmt6(r.test_accuracy) << ',' << fmt6(r.dtd) << ',' << fmt6(r.mean_lm) << ',' << fmt6(r.lr) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<RunRecord> read_run_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string line;
  std::getline(in, line);
  if (line != "epoch,L_oh,L_m,L_total,test_acc,dtd,mean_Lm,lr") throw FormatError("'" + path.string() + "': not a run-record CSV");
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    RunRecord r;
    char c = 0;
    if (!(is >> r.epoch >> c >> r.loss_oh >> c >> r.loss_m >> c >> r.loss_total >> c >> r.test_accuracy >> c >> r.dtd >>
          c >> r.mean_lm >> c >> r.lr)) {
      throw FormatError("'" + path.string() + "': malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

namespace {

constexpr std::size_t kEvalChunk = 512;

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t width = t.numel() / t.dim(0);
  std::vector<Scalar> out;
  out.reserve(idx.size() * width);
  auto d = t.data();
  for (std::size_t i : idx) out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(i * width),
                                       d.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  Shape s = t.shape();
  s[0] = idx.size();
  return Tensor(std::move(s), std::move(out));
}

Tensor concat_rows(const std::vector<Tensor>& parts, std::size_t width) {
  std::vector<Scalar> out;
  std::size_t n = 0;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    n += p.dim(0);
  }
  return Tensor({n, width}, std::move(out));
}

// Loss terms recorded by the most recent objective evaluation.
struct LossLog {
  Scalar oh = 0;
  Scalar m = 0;
  Scalar total = 0;
};

// Builds the objective for a set of sample indices.
using ObjectiveFactory = std::function<Objective(std::span<const std::size_t> idx, LossLog& log)>;

std::vector<RunRecord> run_training(const Network& student, Parameters& params, const PruneMask& mask,
                                    const Inputs& inputs, const Dataset& test, const DistillConfig& config,
                                    const TrainOptions& options, const ObjectiveFactory& make_objective,
                                    const std::function<Scalar(std::span<const Scalar>)>& eval_feature_loss) {
  config.validate();
  if (mask.size() != params.size()) throw ShapeError("train: mask does not match parameters");
  if (!options.distance_reference.empty() && options.distance_reference.size() != params.size()) {
    throw ShapeError("train: distance reference does not match parameter count");
  }
  auto theta = params.flat();
  apply_mask(theta, mask);

  const std::size_t n = inputs.count;
  if (n == 0) throw ConfigError("train: empty training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng batch_rng(config.seed, "batch-order");
  SgdMomentum opt(params.size(), config.momentum, config.weight_decay);

  std::vector<RunRecord> records;
  auto evaluate = [&](RunRecord& r) {
    r.test_accuracy = accuracy(student, theta, test);
    r.dtd = options.distance_reference.empty() ? 0.0 : weight_distance(options.distance_reference, theta, mask);
    r.mean_lm = eval_feature_loss(theta);
  };

  // Epoch 0: losses over the full training set at the starting point.
  {
    RunRecord r;
    Scalar soh = 0, sm = 0, st = 0;
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
      const std::size_t len = std::min(kEvalChunk, n - start);
      std::span<const std::size_t> idx(order.data() + start, len);
      LossLog log;
      Objective f = make_objective(idx, log);
      f(Tensor({theta.size()}, std::vector<Scalar>(theta.begin(), theta.end())));
      soh += log.oh * static_cast<Scalar>(len);
      sm += log.m * static_cast<Scalar>(len);
      st += log.total * static_cast<Scalar>(len);
    }
    r.loss_oh = soh / static_cast<Scalar>(n);
    r.loss_m = sm / static_cast<Scalar>(n);
    r.loss_total = st / static_cast<Scalar>(n);
    r.lr = cosine_lr(0, config.epochs, config.lr, config.lr_min);
    evaluate(r);
    records.push_back(r);
    if (options.on_epoch) {
      std::span<const std::size_t> idx(order.data(), std::min(config.batch_size, n));
      LossLog scratch;
      options.on_epoch({0, theta, r.lr, student.batch(inputs.subset(idx).values, idx.size()), make_objective(idx, scratch)});
    }
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const Scalar lr = cosine_lr(epoch - 1, config.epochs, config.lr, config.lr_min);
    batch_rng.shuffle(std::span(order));
    Scalar soh = 0, sm = 0, st = 0;
    std::span<const std::size_t> last_idx;
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
      const std::size_t len = std::min(config.batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, len);
      LossLog log;
      Objective f = make_objective(idx, log);
      ValueAndGrad vg;
      try {
        vg = value_and_grad(f, theta);
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(vg.value)) {
        throw NumericError("train: loss is not finite at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      mask_gradient(vg.grad, mask);
      opt.step(theta, vg.grad, lr);
      soh += log.oh * static_cast<Scalar>(len);
      sm += log.m * static_cast<Scalar>(len);
      st += log.total * static_cast<Scalar>(len);
      last_idx = idx;
    }
    for (Scalar v : theta) {
      if (!std::isfinite(v)) throw NumericError("train: parameters diverged at epoch " + std::to_string(epoch));
    }
    RunRecord r;
    r.epoch = epoch;
    r.loss_oh = soh / static_cast<Scalar>(n);
    r.loss_m = sm / static_cast<Scalar>(n);
    r.loss_total = st / static_cast<Scalar>(n);
    r.lr = lr;
    evaluate(r);
    records.push_back(r);
    if (options.on_epoch) {
      // The last batch of the epoch; its order slice is still intact.
      std::vector<std::size_t> idx(last_idx.begin(), last_idx.end());
      LossLog scratch;
      options.on_epoch({epoch, theta, lr, student.batch(inputs.subset(idx).values, idx.size()), make_objective(idx, scratch)});
    }
  }
  return records;
}

void require_feature_parity(const Network& student, const TeacherRef& teacher) {
  if (!teacher.net) throw ConfigError("train: teacher network missing");
  if (teacher.net->spec().feature_dim() != student.spec().feature_dim()) {
    throw ConfigError("train: teacher feature_dim " + std::to_string(teacher.net->spec().feature_dim()) +
                      " differs from student feature_dim " + std::to_string(student.spec().feature_dim()));
  }
  if (teacher.net->spec().class_count() != student.spec().class_count()) {
    throw ConfigError("train: teacher and student class counts differ");
  }
}

std::vector<RunRecord> train_impl(const Network& student, Parameters& params, const PruneMask& mask,
                                  const TeacherRef& teacher, const Inputs& inputs, std::span<const int> labels,
                                  const Dataset& test, const DistillConfig& config, const TrainOptions& options) {
  require_feature_parity(student, teacher);
  const std::size_t k = student.spec().class_count();
  const TeacherOutputs train_t = teacher_outputs(teacher, inputs);
  const TeacherOutputs test_t = teacher_outputs(teacher, test.inputs());
  const Tensor pseudo = pseudo_onehot(train_t.logits);
  const Tensor truth = labels.empty() ? Tensor() : onehot(labels, k);
  const DistillMode mode = config.mode;

  ObjectiveFactory factory = [&](std::span<const std::size_t> idx, LossLog& log) -> Objective {
    Tensor xb = student.batch(inputs.subset(idx).values, idx.size());
    Tensor tf = gather_rows(train_t.features, idx);
    Tensor tl = gather_rows(train_t.logits, idx);
    Tensor hard = gather_rows(mode == DistillMode::lnpt || mode == DistillMode::oh_only || mode == DistillMode::fm_only
                                  ? pseudo
                                  : truth,
                              idx);
    return [&student, &config, &log, mode, xb, tf, tl, hard](const Tensor& theta) {
      ForwardOutput out = student.forward(theta, xb);
      Tensor oh = loss_oh(out.logits, hard);
      Tensor fm = loss_feature_kd(tf, out.feature_map, config.temperature, config.symmetric_temp);
      Tensor total;
      switch (mode) {
        case DistillMode::lnpt:
        case DistillMode::true_label: total = loss_total(oh, fm, config.alpha); break;
        case DistillMode::oh_only: total = oh; break;
        case DistillMode::fm_only: total = ops::scale(fm, config.alpha); break;
        case DistillMode::classical_kd:
          total = loss_kd_classical(out.logits, tl, hard, config.alpha, config.temperature);
          break;
      }
      log.oh = oh.item();
      log.m = fm.item();
      log.total = total.item();
      return total;
    };
  };
  auto eval_lm = [&](std::span<const Scalar> theta) {
    Tensor x = student.batch(test.inputs().values, test.size());
    return mean_feature_loss(student, theta, x, test_t.features, config.temperature, config.symmetric_temp);
  };
  return run_training(student, params, mask, inputs, test, config, options, factory, eval_lm);
}

}  // namespace

TeacherOutputs teacher_outputs(const TeacherRef& teacher, const Inputs& inputs) {
  if (!teacher.net) throw ConfigError("teacher_outputs: teacher network missing");
  ForwardOutput out = forward_all(*teacher.net, teacher.theta, inputs);
  return {out.logits, out.feature_map};
}

ForwardOutput forward_all(const Network& net, std::span<const Scalar> theta, const Inputs& inputs) {
  std::vector<Tensor> logits, features;
  for (std::size_t start = 0; start < inputs.count; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, inputs.count - start);
    std::span<const Scalar> rows(inputs.values.data() + start * inputs.sample_size(), len * inputs.sample_size());
    ForwardOutput o = net.forward(theta, net.batch(rows, len));
    logits.push_back(o.logits);
    features.push_back(o.feature_map);
  }
  return {concat_rows(logits, net.spec().class_count()), concat_rows(features, net.spec().feature_dim())};
}

Scalar accuracy(const Network& net, std::span<const Scalar> theta, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  ForwardOutput out = forward_all(net, theta, data.inputs());
  auto pred = argmax_rows(out.logits.data(), net.spec().class_count());
  auto y = data.labels();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == y[i];
  return static_cast<Scalar>(hit) / static_cast<Scalar>(pred.size());
}

std::vector<RunRecord> train(const Network& student, Parameters& params, const PruneMask& mask,
                             const TeacherRef& teacher, const UnlabeledDataset& data, const Dataset& test,
                             const DistillConfig& config, const TrainOptions& options) {
  if (needs_labels(config.mode)) {
    throw ConfigError("train: mode " + std::string(to_string(config.mode)) + " needs labeled training data");
  }
  return train_impl(student, params, mask, teacher, data.inputs(), {}, test, config, options);
}

std::vector<RunRecord> train(const Network& student, Parameters& params, const PruneMask& mask,
                             const TeacherRef& teacher, const Dataset& data, const Dataset& test,
                             const DistillConfig& config, const TrainOptions& options) {
  if (!needs_labels(config.mode)) return train(student, params, mask, teacher, data.without_labels(), test, config, options);
  return train_impl(student, params, mask, teacher, data.inputs(), data.labels(), test, config, options);
}

std::vector<RunRecord> train_supervised(const Network& net, Parameters& params, const Dataset& data,
                                        const Dataset& test, const DistillConfig& config,
                                        const TrainOptions& options) {
  const std::size_t k = net.spec().class_count();
  const Tensor truth = onehot(data.labels(), k);
  const Inputs& inputs = data.inputs();
  ObjectiveFactory factory = [&](std::span<const std::size_t> idx, LossLog& log) -> Objective {
    Tensor xb = net.batch(inputs.subset(idx).values, idx.size());
    Tensor yb = gather_rows(truth, idx);
    return [&net, &log, xb, yb](const Tensor& theta) {
      Tensor ce = ops::cross_entropy(net.forward(theta, xb).logits, yb);
      log.oh = ce.item();
      log.m = 0;
      log.total = log.oh;
      return ce;
    };
  };
  auto no_lm = [](std::span<const Scalar>) { return 0.0; };
  return run_training(net, params, PruneMask::all_kept(net.layout()), inputs, test, config, options, factory, no_lm);
}

}  // namespace lnpt
