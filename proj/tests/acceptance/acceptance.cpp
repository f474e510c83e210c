// Acceptance run: prints one [PASS]/[FAIL] line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lnpt/checkpoint.hpp"
#include "lnpt/config.hpp"
#include "lnpt/diagnostics.hpp"
#include "lnpt/error.hpp"
#include "lnpt/losses.hpp"
#include "lnpt/ops.hpp"
#include "lnpt/pipeline.hpp"
#include "lnpt/rng.hpp"
#include "oracles.hpp"

using namespace lnpt;
namespace o = oracle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path source(const std::string& rel) { return fs::path(LNPT_SOURCE_DIR) / rel; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<RunRecord> records(const fs::path& run, std::uint64_t seed) {
  return read_run_records_csv(run / ("seed_" + std::to_string(seed)) / "records.csv");
}

double mean_final_accuracy(const fs::path& run, const std::vector<std::uint64_t>& seeds) {
  double acc = 0;
  for (auto s : seeds) acc += records(run, s).back().test_accuracy;
  return 100.0 * acc / static_cast<double>(seeds.size());
}

// 1. Reverse-mode gradients against central differences.

double primitive_error(const std::function<Tensor(std::vector<Tensor>&)>& op, const std::vector<Shape>& shapes,
                       std::uint64_t seed) {
  std::vector<std::vector<double>> values;
  for (std::size_t i = 0; i < shapes.size(); ++i) values.push_back(o::random_away_from_zero(shape_numel(shapes[i]), seed + i));
  std::vector<double> weights;
  auto eval = [&](const std::vector<std::vector<double>>& v, bool tape) {
    std::vector<Tensor> in;
    for (std::size_t i = 0; i < shapes.size(); ++i) in.emplace_back(shapes[i], v[i], tape);
    Tensor out = op(in);
    if (weights.empty()) weights = o::random_vector(out.numel(), seed + 99);
    return std::make_pair(ops::sum(ops::mul(out, Tensor(out.shape(), weights))), in);
  };
  auto [loss, leaves] = eval(values, true);
  loss.backward();
  double worst = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    o::Fn f = [&](std::span<const double> x) {
      auto v = values;
      v[i].assign(x.begin(), x.end());
      return eval(v, false).first.item();
    };
    auto fd = o::fd_gradient(f, values[i]);
    auto g = leaves[i].grad();
    worst = std::max(worst, o::max_rel_err(std::vector<double>(g.begin(), g.end()), fd));
  }
  return worst;
}

double network_error(const ModelSpec& spec, std::uint64_t seed, std::size_t coords) {
  Network net(spec);
  Parameters p = net.init(seed);
  for (std::size_t s = 0; s < net.layout().slots().size(); ++s)
    if (net.layout().slot(s).role == ParamRole::bias)
      for (double& b : p.view(s)) b = 0.05;
  Tensor x = net.batch(o::random_vector(2 * spec.input_size(), seed + 7), 2);
  Tensor y = onehot(std::vector<int>{0, static_cast<int>(spec.class_count() - 1)}, spec.class_count());
  Objective f = [&](const Tensor& t) { return ops::cross_entropy(net.forward(t, x).logits, y); };
  auto vg = value_and_grad(f, p.values());
  o::Fn fv = [&](std::span<const double> t) {
    return f(Tensor({t.size()}, std::vector<double>(t.begin(), t.end()))).item();
  };
  Rng pick(seed, "coords");
  double worst = 0;
  for (std::size_t k = 0; k < coords; ++k) {
    const std::size_t i = pick.index(p.size());
    worst = std::max(worst, o::rel_err(vg.grad[i], o::central_difference(fv, p.values(), i, 1e-6)));
  }
  return worst;
}

Outcome gradient_correctness() {
  using In = std::vector<Tensor>;
  const std::vector<std::pair<std::string, std::pair<std::function<Tensor(In&)>, std::vector<Shape>>>> prims = {
      {"matmul", {[](In& i) { return ops::matmul(i[0], i[1]); }, {{3, 4}, {4, 2}}}},
      {"transpose", {[](In& i) { return ops::transpose(i[0]); }, {{3, 2}}}},
      {"add", {[](In& i) { return ops::add(i[0], i[1]); }, {{2, 3}, {2, 3}}}},
      {"sub", {[](In& i) { return ops::sub(i[0], i[1]); }, {{2, 3}, {2, 3}}}},
      {"mul", {[](In& i) { return ops::mul(i[0], i[1]); }, {{2, 3}, {2, 3}}}},
      {"scale", {[](In& i) { return ops::scale(i[0], 1.3); }, {{4}}}},
      {"add_bias", {[](In& i) { return ops::add_bias(i[0], i[1]); }, {{2, 3, 2, 2}, {3}}}},
      {"relu", {[](In& i) { return ops::relu(i[0]); }, {{8}}}},
      {"conv2d", {[](In& i) { return ops::conv2d(i[0], i[1], 1, 1); }, {{2, 2, 4, 4}, {3, 2, 3, 3}}}},
      {"conv2d_stride2", {[](In& i) { return ops::conv2d(i[0], i[1], 2, 0); }, {{1, 2, 5, 5}, {2, 2, 3, 3}}}},
      {"avg_pool2d", {[](In& i) { return ops::avg_pool2d(i[0], 2); }, {{2, 2, 4, 4}}}},
      {"global_avg_pool", {[](In& i) { return ops::global_avg_pool(i[0]); }, {{2, 3, 2, 2}}}},
      {"flatten", {[](In& i) { return ops::flatten(i[0]); }, {{2, 2, 3}}}},
      {"reshape", {[](In& i) { return ops::reshape(i[0], {3, 4}); }, {{2, 6}}}},
      {"slice", {[](In& i) { return ops::slice(i[0], 2, {2, 3}); }, {{9}}}},
      {"softmax", {[](In& i) { return ops::softmax(i[0]); }, {{3, 4}}}},
      {"cross_entropy", {[](In& i) { return ops::cross_entropy(i[0], ops::softmax(i[1])); }, {{3, 4}, {3, 4}}}},
      {"mse", {[](In& i) { return ops::mse(i[0], i[1]); }, {{2, 3}, {2, 3}}}},
      {"sum", {[](In& i) { return ops::sum(i[0]); }, {{5}}}},
      {"sum_squares", {[](In& i) { return ops::sum_squares(i[0]); }, {{5}}}},
  };
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, spec] : prims) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const double e = primitive_error(spec.first, spec.second, 100 * s + 1);
      if (e > worst) worst = e, worst_name = name;
    }
  }
  for (std::uint64_t s = 0; s < 3; ++s) {
    for (const auto& spec : {preset("mlp-small", {10}, 4), preset("cnn-small", {2, 8, 8}, 3)}) {
      const double e = network_error(spec, s, 300);
      if (e > worst) worst = e, worst_name = spec.name() + " seed " + std::to_string(s);
    }
  }
  return {worst <= 1e-4, "max rel err " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

// 2. LNPT scores against a loss-value-only oracle.

Outcome second_order_oracle() {
  double worst = 0;
  std::size_t nets = 0;
  for (std::uint64_t seed = 0; nets < 10; ++seed) {
    const std::size_t in = 1 + seed % 2;
    Network net(ModelSpec("p10", {in}, {LayerSpec::dense(in, 2), LayerSpec::relu(), LayerSpec::dense(2, 1)}));
    if (net.parameter_count() > 10) return {false, "oracle net too large"};
    Parameters p = net.init(seed);
    for (std::size_t s = 0; s < net.layout().slots().size(); ++s)
      if (net.layout().slot(s).role == ParamRole::bias)
        for (double& b : p.view(s)) b = 0.2;
    const auto x = o::random_vector(4 * in, seed + 11);
    if (o::relu_margin(p.values(), x, in, 2) < 0.01) continue;
    ++nets;
    ScoreBatch batch;
    batch.inputs = net.batch(x, 4);
    batch.teacher_features = Tensor({4, 2}, o::random_vector(8, seed + 12));
    o::Fn loss = [&](std::span<const double> t) {
      auto fm = net.forward(t, batch.inputs).feature_map;
      double acc = 0;
      for (std::size_t i = 0; i < fm.numel(); ++i) acc += std::pow(batch.teacher_features.at(i) - fm.at(i), 2);
      return acc;
    };
    auto s = score_lnpt(feature_objective(net, batch), p.values(), PruneConfig{});
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = o::central_difference(loss, p.values(), i, 1e-5);
      const double h = o::second_difference(loss, p.values(), i, 1e-4);
      const double want = std::abs(p.values()[i] * h * g);
      if (want < 1e-6 && std::abs(s[i] - want) <= 1e-6) continue;
      worst = std::max(worst, std::abs(s[i] - want) / std::abs(want));
    }
  }
  return {worst <= 1e-3, "max rel err " + fmt("%.2e", worst) + " over 10 nets"};
}

// 3. Mask exactness for every criterion and ratio.

Outcome mask_exactness() {
  Network student(preset("mlp-tiny", {4}, 3)), teacher(preset("mlp-tiny", {4}, 3));
  Parameters theta = student.init(3), t = teacher.init(4);
  Dataset blobs = synth_blobs(3, 10, 4, 1.0, 9);
  ScoreBatch batch;
  batch.inputs = student.batch(blobs.inputs().values, blobs.size());
  batch.teacher_features = teacher.forward(t, batch.inputs).feature_map;
  batch.labels.assign(blobs.labels().begin(), blobs.labels().end());
  std::size_t checked = 0;
  for (auto crit : {Criterion::lnpt, Criterion::snip, Criterion::grasp, Criterion::synflow, Criterion::magnitude,
                    Criterion::random}) {
    for (double ratio : {0.5, 0.9, 0.95, 0.98, 0.99}) {
      PruneConfig cfg;
      cfg.criterion = crit;
      cfg.ratio = ratio;
      auto a = prune(student, theta.values(), batch, cfg);
      auto b = prune(student, theta.values(), batch, cfg);
      const std::size_t total = a.mask.total_count();
      const auto want = total - static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
      if (a.mask.kept_count() != want || !(a.mask == b.mask)) {
        return {false, std::string(to_string(crit)) + " at " + fmt("%.2f", ratio) + " kept " +
                           std::to_string(a.mask.kept_count()) + ", want " + std::to_string(want)};
      }
      ++checked;
    }
  }
  return {true, std::to_string(checked) + " criterion/ratio pairs exact and repeatable"};
}

// 4. A student identical to its teacher has nothing to learn.

Outcome zero_gap() {
  Network net(preset("mlp-tiny", {4}, 3));
  Parameters p = net.init(5);
  auto [train_set, test_set] = train_test_split(synth_blobs(3, 30, 4, 1.0, 2), 0.25, 1);
  ScoreBatch batch;
  batch.inputs = net.batch(train_set.inputs().values, train_set.size());
  batch.teacher_features = net.forward(p, batch.inputs).feature_map;
  double max_score = 0;
  for (auto mode : {HessianMode::automatic, HessianMode::hutchinson, HessianMode::exact}) {
    PruneConfig cfg;
    cfg.hessian_mode = mode;
    if (mode == HessianMode::exact && net.parameter_count() > kExactHessianLimit) continue;
    for (double v : score_lnpt(feature_objective(net, batch), p.values(), cfg)) max_score = std::max(max_score, v);
  }
  // Feature-only distillation at T = 1 without weight decay: the gap stays closed.
  DistillConfig dc;
  dc.mode = DistillMode::fm_only;
  dc.temperature = 1.0;
  dc.weight_decay = 0.0;
  dc.epochs = 3;
  Parameters student = p;
  auto rec = train(net, student, PruneMask::all_kept(net.layout()), {&net, p.values()}, train_set.without_labels(), test_set,
                   dc);
  double max_lm = 0;
  for (const auto& r : rec) max_lm = std::max({max_lm, r.loss_m, r.mean_lm});
  return {max_score == 0.0 && max_lm == 0.0,
          "max score " + fmt("%.3g", max_score) + ", max L_m trace " + fmt("%.3g", max_lm)};
}

// 5-8. Desk-scale experiments on the efficacy preset.

struct Efficacy {
  std::vector<std::uint64_t> seeds;
  fs::path lnpt, random, magnitude, true_label;
  std::string dataset;
};

Efficacy run_efficacy(const fs::path& out) {
  ExperimentConfig base;
  const fs::path mnist = source("data/mnist");
  if (fs::exists(mnist / "train-images-idx3-ubyte") && fs::exists(mnist / "train-labels-idx1-ubyte")) {
    base = load_config(source("configs/mnist.json"));
    base.dataset.train_images = (mnist / "train-images-idx3-ubyte").string();
    base.dataset.train_labels = (mnist / "train-labels-idx1-ubyte").string();
    base.dataset.test_images.clear();
    base.dataset.test_labels.clear();
  } else {
    base = load_config(source("configs/spirals.json"));
  }
  base.output_dir = out.string();
  Efficacy e;
  e.seeds = base.seeds;
  e.dataset = base.dataset.kind;
  e.lnpt = run_experiment(base);
  auto c = base;
  c.prune.criterion = Criterion::random;
  e.random = run_experiment(c);
  c.prune.criterion = Criterion::magnitude;
  e.magnitude = run_experiment(c);
  c = base;
  c.distill.mode = DistillMode::true_label;
  e.true_label = run_experiment(c);
  return e;
}

Outcome efficacy(const Efficacy& e) {
  const double l = mean_final_accuracy(e.lnpt, e.seeds), r = mean_final_accuracy(e.random, e.seeds),
               m = mean_final_accuracy(e.magnitude, e.seeds);
  return {l >= r + 2.0 && l >= m - 0.5, e.dataset + ": lnpt " + fmt("%.2f", l) + "%, random " + fmt("%.2f", r) +
                                            "%, magnitude " + fmt("%.2f", m) + "%"};
}

Outcome label_ablation(const Efficacy& e) {
  const double l = mean_final_accuracy(e.lnpt, e.seeds), t = mean_final_accuracy(e.true_label, e.seeds);
  return {l >= t - 1.0, "lnpt " + fmt("%.2f", l) + "%, true_label " + fmt("%.2f", t) + "%"};
}

Outcome lm_trajectory(const Efficacy& e) {
  bool ok = true;
  std::string detail;
  for (auto s : e.seeds) {
    auto rec = records(e.lnpt, s);
    std::size_t down = 0, n = 0;
    for (std::size_t k = 4; k < rec.size(); ++k, ++n)
      if (rec[k].loss_m < rec[k - 1].loss_m) ++down;
    const double frac = n ? static_cast<double>(down) / static_cast<double>(n) : 0.0;
    const bool seed_ok = frac >= 0.8 && rec.back().loss_m < rec.front().loss_m;
    ok = ok && seed_ok;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(s) + " " + fmt("%.0f%%", 100 * frac) +
              (rec.back().loss_m < rec.front().loss_m ? "" : " (final >= initial)");
  }
  return {ok, "decreasing epochs after 3: " + detail};
}

Outcome init_advantage(const Efficacy& e) {
  double l = 0, r = 0;
  for (auto s : e.seeds) {
    l += records(e.lnpt, s).front().loss_m / static_cast<double>(e.seeds.size());
    r += records(e.random, s).front().loss_m / static_cast<double>(e.seeds.size());
  }
  return {l < r, "epoch-0 L_m lnpt " + fmt("%.4f", l) + " vs random " + fmt("%.4f", r)};
}

// 9. Weight escape: d^T d rises, peaks in the interior, then falls.

Outcome weight_escape(const fs::path& out) {
  ExperimentConfig c = load_config(source("configs/same-arch.json"));
  c.output_dir = out.string();
  const fs::path run = run_experiment(c);
  std::size_t interior = 0;
  std::string peaks;
  for (auto s : c.seeds) {
    auto rec = records(run, s);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < rec.size(); ++k)
      if (rec[k].dtd > rec[arg].dtd) arg = k;
    const std::size_t final = rec.size() - 1;
    if (arg > 1 && arg < final) ++interior;
    peaks += (peaks.empty() ? "" : ",") + std::to_string(arg);
  }
  return {interior >= 4, std::to_string(interior) + "/" + std::to_string(c.seeds.size()) +
                             " seeds peak in the interior (peak epochs " + peaks + ")"};
}

// 10. Kernel and sensitivity properties on the tiny preset.

Outcome ntk_properties(const fs::path& out) {
  ExperimentConfig c = load_config(source("configs/tiny-diagnostics.json"));
  c.output_dir = out.string();
  const fs::path run = run_experiment(c);
  ExperimentData data = load_data(c.dataset);
  double worst_asym = 0, worst_eig = 0, worst_pinv = 0, worst_s = 0;
  std::size_t logged = 0, rows = 0;
  for (auto s : c.seeds) {
    const fs::path sd = run / ("seed_" + std::to_string(s));
    for (const char* which : {"pruned.ckpt", "student.ckpt"}) {
      Checkpoint ck = load_checkpoint(sd / which);
      Network net(*ck.spec);
      Parameters p = ck.parameters();
      const std::size_t n = 8;
      Tensor batch = net.batch(std::span<const double>(data.test.inputs().values).first(n * data.test.inputs().sample_size()), n);
      NtkMatrix k = ntk(net, p.values(), batch);
      worst_asym = std::max(worst_asym, k.asymmetry());
      worst_eig = std::max(worst_eig, -k.min_eigenvalue() / k.norm());
      auto cls = ClassifierView::of(net, p.values());
      Eigen::MatrixXd w = cls.weight;
      worst_pinv = std::max(worst_pinv, (w * cls.pseudo_inverse() * w - w).cwiseAbs().maxCoeff());
      Eigen::MatrixXd sens = sensitivity(k, cls);
      worst_s = std::max(worst_s, (sens - sens.transpose()).cwiseAbs().maxCoeff() / std::max(1e-300, sens.norm()));
    }
    std::istringstream csv(slurp(sd / "diagnostics.csv"));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      ++rows;
      if (line.back() != ',') ++logged;
    }
  }
  const bool ok = worst_asym <= 1e-12 && worst_eig <= 1e-6 && worst_pinv <= 1e-6 && worst_s <= 1e-12 && logged == rows;
  return {ok, "asym " + fmt("%.1e", worst_asym) + ", -min eig/|K| " + fmt("%.1e", worst_eig) + ", |WW+W-W| " +
                  fmt("%.1e", worst_pinv) + ", s asym " + fmt("%.1e", worst_s) + ", drift logged " +
                  std::to_string(logged) + "/" + std::to_string(rows) + " epochs"};
}

// 11. First-order learning-gap prediction: halving the step at least
// shrinks the relative error by the Taylor-remainder factor (with slack).

// The Taylor argument needs a smooth path, so nets whose relu pattern flips anywhere on
// theta - t g, t in [0, eta], are skipped and further seeds drawn.
bool smooth_step(const Network& net, std::span<const double> theta, const Tensor& inputs, const Objective& f,
                 double eta) {
  const std::vector<std::size_t> widths{16, 8};
  const std::size_t d = net.spec().input_size();
  auto g = value_and_grad(f, theta).grad;
  std::vector<double> x(inputs.numel());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = inputs.at(i);
  const auto base = o::relu_pattern(theta, x, d, widths);
  std::vector<double> t(theta.begin(), theta.end());
  for (int k = 1; k <= 64; ++k) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = theta[i] - eta * k / 64.0 * g[i];
    if (o::relu_pattern(t, x, d, widths) != base) return false;
  }
  return true;
}

Outcome learning_gap() {
  double worst = 0;
  std::size_t used = 0, skipped = 0;
  const double eta = 1e-3;
  for (std::uint64_t seed = 0; used < 10 && seed < 200; ++seed) {
    Network net(preset("mlp-tiny", {3 + seed % 3}, 2 + seed % 2));
    Parameters p = net.init(seed);
    ScoreBatch b;
    const std::size_t n = 6, d = net.spec().input_size(), m = net.spec().feature_dim();
    b.inputs = net.batch(o::random_vector(n * d, seed + 40), n);
    b.teacher_features = Tensor({n, m}, o::random_vector(n * m, seed + 41));
    Objective f = feature_objective(net, b);
    if (!smooth_step(net, p.values(), b.inputs, f, eta)) {
      ++skipped;
      continue;
    }
    ++used;
    const double big = learning_gap_step(net, p.values(), b.inputs, f, eta).relative_error();
    const double half = learning_gap_step(net, p.values(), b.inputs, f, eta / 2).relative_error();
    worst = std::max(worst, big > 0 ? half / big : (half > 0 ? INFINITY : 0.0));
  }
  return {used == 10 && worst <= 0.7, "worst err(eta/2)/err(eta) " + fmt("%.3f", worst) + " over " +
                                          std::to_string(used) + " nets (" + std::to_string(skipped) +
                                          " skipped for relu flips)"};
}

// 12. Determinism and on-disk formats.

bool same_tree(const fs::path& a, const fs::path& b, std::string& diff) {
  std::map<std::string, std::string> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa[fs::relative(e.path(), a).string()] = slurp(e.path());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb[fs::relative(e.path(), b).string()] = slurp(e.path());
  if (fa.size() != fb.size()) {
    diff = "file counts differ";
    return false;
  }
  for (const auto& [k, v] : fa) {
    if (!fb.count(k) || fb[k] != v) {
      diff = k;
      return false;
    }
  }
  diff = std::to_string(fa.size()) + " files";
  return true;
}

std::vector<std::byte> be32(std::uint32_t v) {
  return {std::byte(v >> 24), std::byte((v >> 16) & 0xff), std::byte((v >> 8) & 0xff), std::byte(v & 0xff)};
}

Outcome determinism_and_formats(const fs::path& out) {
  ExperimentConfig c = load_config(source("configs/tiny-diagnostics.json"));
  c.output_dir = (out / "a").string();
  run_experiment(c);
  c.output_dir = (out / "b").string();
  run_experiment(c);
  std::string diff;
  const bool rerun = same_tree(out / "a", out / "b", diff);
  if (!rerun) return {false, "rerun differs at " + diff};

  Network net(preset("cnn-small", {1, 8, 8}, 3));
  Checkpoint ck = Checkpoint::from_parameters(net.spec(), 7, net.init(7));
  ck.mask = std::vector<std::uint8_t>(net.parameter_count(), 1);
  save_checkpoint(out / "c1.ckpt", ck);
  save_checkpoint(out / "c2.ckpt", load_checkpoint(out / "c1.ckpt"));
  const bool ckpt_ok = slurp(out / "c1.ckpt") == slurp(out / "c2.ckpt");

  auto images = [](std::uint32_t n, std::size_t pixels) {
    std::vector<std::byte> b;
    for (auto v : {0x803u, n, 2u, 2u}) {
      auto w = be32(v);
      b.insert(b.end(), w.begin(), w.end());
    }
    b.resize(b.size() + pixels, std::byte{7});
    return b;
  };
  std::vector<std::byte> labels;
  for (auto v : {0x801u, 3u}) {
    auto w = be32(v);
    labels.insert(labels.end(), w.begin(), w.end());
  }
  labels.resize(labels.size() + 3, std::byte{1});
  auto bad_magic = images(2, 8);
  bad_magic[2] = std::byte{9};
  write_file(out / "x2", images(2, 8));
  write_file(out / "y3", labels);
  std::size_t rejected = 0;
  auto rejects = [&](const std::function<void()>& f) {
    try {
      f();
    } catch (const FormatError&) {
      ++rejected;
    }
  };
  rejects([&] { parse_idx_images(bad_magic); });
  rejects([&] { parse_idx_images(images(2, 7)); });
  rejects([&] { parse_idx_images(images(2, 9)); });
  rejects([&] { parse_idx_images(std::vector<std::byte>(6)); });
  rejects([&] { parse_idx_labels(std::vector<std::byte>(labels.begin(), labels.end() - 1)); });
  rejects([&] { load_idx(out / "x2", out / "y3", 10); });
  return {rerun && ckpt_ok && rejected == 6, "rerun identical (" + diff + "), checkpoint round trip " +
                                                 (ckpt_ok ? "identical" : "differs") + ", " + std::to_string(rejected) +
                                                 "/6 malformed IDX fixtures rejected"};
}

}  // namespace

int main() {
  ::unsetenv("LNPT_OUT");
  const fs::path root = o::temp_dir("acceptance");
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = f();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!r.pass) ++failures;
    std::printf("[%s] %2d %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", id, name, r.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "second-order oracle", second_order_oracle);
  report(3, "mask exactness", mask_exactness);
  report(4, "zero-gap degeneracy", zero_gap);

  std::optional<Efficacy> eff;
  std::string eff_error;
  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      eff = run_efficacy(root / "efficacy");
    } catch (const std::exception& e) {
      eff_error = e.what();
    }
    std::printf("     efficacy runs took %.1fs\n",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  auto with_runs = [&](const std::function<Outcome(const Efficacy&)>& f) {
    return [&, f]() -> Outcome {
      if (!eff) return {false, "efficacy runs failed: " + eff_error};
      return f(*eff);
    };
  };
  report(5, "desk-scale efficacy", with_runs(efficacy));
  report(6, "label-free vs true-label", with_runs(label_ablation));
  report(7, "L_m trajectory", with_runs(lm_trajectory));
  report(8, "initialization advantage", with_runs(init_advantage));
  report(9, "weight escape", [&] { return weight_escape(root / "same-arch"); });
  report(10, "NTK and sensitivity", [&] { return ntk_properties(root / "tiny"); });
  report(11, "learning-gap first order", learning_gap);
  report(12, "determinism and formats", [&] { return determinism_and_formats(root / "determinism"); });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
