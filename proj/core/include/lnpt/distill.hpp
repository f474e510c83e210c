#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "lnpt/data.hpp"
#include "lnpt/losses.hpp"
#include "lnpt/model.hpp"
#include "lnpt/pruning.hpp"

namespace lnpt {

// lnpt: L_oh(pseudo) + alpha L_m.  classical_kd: CE(y) + alpha CE(softmax(f_t/T)).
// true_label: CE(y) + alpha L_m.  oh_only: L_oh.  fm_only: alpha L_m.
enum class DistillMode { lnpt, classical_kd, true_label, oh_only, fm_only };
std::string_view to_string(DistillMode m);
DistillMode distill_mode_from(std::string_view s);
// Modes that consume dataset labels during training.
bool needs_labels(DistillMode m);

struct DistillConfig {
  Scalar alpha = 1.0;
  Scalar temperature = 4.0;
  std::size_t epochs = 30;
  Scalar lr = 0.1;
  Scalar lr_min = 0.0;
  Scalar momentum = 0.9;
  Scalar weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  DistillMode mode = DistillMode::lnpt;
  bool symmetric_temp = false;

  void validate() const;
};

// lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / epochs)) / 2
Scalar cosine_lr(std::size_t epoch, std::size_t epochs, Scalar lr0, Scalar lr_min);

// Heavy-ball SGD with L2 weight decay folded into the gradient:
//   v = mu v + (g + wd theta);  theta -= lr v
class SgdMomentum {
 public:
  SgdMomentum(std::size_t size, Scalar momentum, Scalar weight_decay)
      : velocity_(size, 0.0), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<Scalar> theta, std::span<const Scalar> grad, Scalar lr);
  std::span<const Scalar> velocity() const { return velocity_; }

 private:
  std::vector<Scalar> velocity_;
  Scalar momentum_;
  Scalar weight_decay_;
};

// Per-epoch metrics. Epoch 0 is the state before any update.
struct RunRecord {
  std::size_t epoch = 0;
  Scalar loss_oh = 0;
  Scalar loss_m = 0;
  Scalar loss_total = 0;
  Scalar test_accuracy = 0;
  Scalar dtd = 0;
  Scalar mean_lm = 0;
  Scalar lr = 0;
};

void write_run_records_csv(const std::filesystem::path& path, std::span<const RunRecord> records);
std::vector<RunRecord> read_run_records_csv(const std::filesystem::path& path);

// A frozen network and its parameters.
struct TeacherRef {
  const Network* net = nullptr;
  std::span<const Scalar> theta;
};

// Teacher logits and feature maps over a whole input set.
struct TeacherOutputs {
  Tensor logits;
  Tensor features;
};
TeacherOutputs teacher_outputs(const TeacherRef& teacher, const Inputs& inputs);

// Student forward over a whole input set without taping.
ForwardOutput forward_all(const Network& net, std::span<const Scalar> theta, const Inputs& inputs);
Scalar accuracy(const Network& net, std::span<const Scalar> theta, const Dataset& data);

struct EpochState {
  std::size_t epoch = 0;
  std::span<const Scalar> theta;
  Scalar lr = 0;
  // Inputs of the last training batch and the training objective on it.
  // The objective is only valid for the duration of the callback.
  Tensor last_batch;
  Objective last_batch_loss;
};

struct TrainOptions {
  // Reference for d^T d: the teacher's parameters (same architecture) or the
  // student's own initialisation. Empty disables the column (written as 0).
  std::vector<Scalar> distance_reference;
  // Called after each epoch's evaluation, including epoch 0.
  std::function<void(const EpochState&)> on_epoch;
};

// Label-free training: the trainer never sees labels. Rejects label-consuming modes.
std::vector<RunRecord> train(const Network& student, Parameters& params, const PruneMask& mask,
                             const TeacherRef& teacher, const UnlabeledDataset& data, const Dataset& test,
                             const DistillConfig& config, const TrainOptions& options = {});

// Labeled entry point. Label-free modes drop the labels before training.
std::vector<RunRecord> train(const Network& student, Parameters& params, const PruneMask& mask,
                             const TeacherRef& teacher, const Dataset& data, const Dataset& test,
                             const DistillConfig& config, const TrainOptions& options = {});

// Plain cross-entropy training on true labels, used for the teacher.
// Records carry the CE in loss_oh and loss_total; loss_m and mean_lm stay 0.
std::vector<RunRecord> train_supervised(const Network& net, Parameters& params, const Dataset& data,
                                        const Dataset& test, const DistillConfig& config,
                                        const TrainOptions& options = {});

}  // namespace lnpt
