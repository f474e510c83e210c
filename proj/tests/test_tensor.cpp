#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "lnpt/error.hpp"
#include "lnpt/ops.hpp"
#include "lnpt/rng.hpp"
#include "lnpt/second_order.hpp"
#include "lnpt/tensor.hpp"
#include "oracles.hpp"

using namespace lnpt;
namespace o = oracle;

namespace {

using Build = std::function<Tensor(const std::vector<Tensor>&)>;

struct Input {
  Shape shape;
  std::vector<double> values;
};

// Largest relative error between the taped gradient of <build(inputs), r> and
// central differences of the same scalar, over every input entry.
double gradient_error(const Build& build, const std::vector<Input>& inputs, std::uint64_t seed) {
  std::vector<Tensor> leaves;
  for (const auto& in : inputs) leaves.emplace_back(in.shape, in.values, true);
  Tensor out = build(leaves);
  const Tensor r = o::weights_like(out, seed);
  backward(ops::sum(ops::mul(out, r)));

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    o::Fn f = [&](std::span<const double> x) {
      std::vector<Tensor> vals;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        vals.emplace_back(inputs[j].shape, j == k ? std::vector<double>(x.begin(), x.end()) : inputs[j].values);
      }
      Tensor y = build(vals);
      double s = 0;
      for (std::size_t i = 0; i < y.numel(); ++i) s += y.at(i) * r.at(i);
      return s;
    };
    auto fd = o::fd_gradient(f, inputs[k].values, 1e-6);
    auto g = leaves[k].grad();
    worst = std::max(worst, o::max_rel_err(g, fd));
  }
  return worst;
}

constexpr int kTrials = 100;

void check(const char* name, const Build& build, const std::function<std::vector<Input>(std::uint64_t)>& make) {
  double worst = 0;
  for (int t = 0; t < kTrials; ++t) {
    const auto seed = static_cast<std::uint64_t>(1000 + t);
    worst = std::max(worst, gradient_error(build, make(seed), seed * 7 + 1));
  }
  EXPECT_LE(worst, 1e-4) << name;
}

Input rnd(Shape s, std::uint64_t seed) {
  const auto n = shape_numel(s);
  return {std::move(s), o::random_away_from_zero(n, seed)};
}

}  // namespace

TEST(Forward, ReluClampsNegatives) {
  Tensor y = ops::relu(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Forward, SoftmaxOfEqualLogitsIsUniform) {
  Tensor y = ops::softmax(Tensor({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Forward, MseIsMeanOfSquares) {
  EXPECT_DOUBLE_EQ(ops::mse(Tensor({2}, {1, 1}), Tensor({2}, {3, 1})).item(), 2.0);
}

TEST(Forward, SoftmaxRowsSumToOneAndCrossEntropyNonNegative) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tensor logits({4, 5}, o::random_vector(20, s, -10, 10));
    Tensor p = ops::softmax(logits);
    for (std::size_t i = 0; i < 4; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < 5; ++j) row += p.at(i * 5 + j);
      EXPECT_NEAR(row, 1.0, 1e-6);
    }
    EXPECT_GE(ops::cross_entropy(logits, p).item(), 0.0);
  }
}

TEST(Forward, ConvMatchesHandComputedWindow) {
  // 1x1x3x3 input, single 2x2 all-ones kernel, stride 1, no padding.
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor y = ops::conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{12, 16, 24, 28}));
  Tensor padded = ops::conv2d(x, w, 2, 1);
  ASSERT_EQ(padded.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(std::vector<double>(padded.data().begin(), padded.data().end()), (std::vector<double>{1, 5, 11, 28}));
}

TEST(Backward, SquareAtThree) {
  Tensor w({1}, {3}, true);
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Backward, MseOfScaledInput) {
  Tensor w({1, 1}, {1}, true);
  Tensor x({1, 1}, {2});
  backward(ops::mse(ops::matmul(w, x), Tensor({1, 1}, {4})));
  EXPECT_DOUBLE_EQ(w.grad()[0], -8.0);
}

TEST(Backward, LeafWithoutRequiresGradHasNoGrad) {
  Tensor w({2}, {1, 2}, true);
  Tensor c({2}, {3, 4});
  backward(ops::sum(ops::mul(w, c)));
  EXPECT_TRUE(w.has_grad());
  EXPECT_FALSE(c.has_grad());
  EXPECT_THROW(c.grad(), Error);
}

TEST(Backward, RepeatedCallsAccumulateUntilReset) {
  Tensor w({1}, {3}, true);
  Tensor loss = ops::sum(ops::mul(w, w));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
  w.zero_grad();
  loss.backward();
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tensor w({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::scale(w, 2.0)), ShapeError);
}

TEST(Backward, GraphIsOrderedByCreation) {
  Tensor w({2}, {1, 2}, true);
  Tensor a = ops::scale(w, 2.0);
  Tensor b = ops::mul(a, w);
  Tensor loss = ops::sum(ops::add(b, a));
  Graph g = Graph::collect(loss);
  ASSERT_EQ(g.size(), 4u);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g.nodes()[i - 1]->sequence, g.nodes()[i]->sequence);
  EXPECT_EQ(g.nodes().back()->op, "sum");
}

TEST(Errors, ShapeMismatchNamesOpAndShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 0), ShapeError);
}

TEST(Errors, NonFiniteResultIsNumericError) {
  Tensor big({1}, {1e308});
  EXPECT_THROW(ops::scale(big, 10.0), NumericError);
}

TEST(Determinism, SameOpsGiveBitIdenticalResults) {
  auto run = [] {
    Tensor w({3, 4}, o::random_vector(12, 5), true);
    Tensor x({2, 3}, o::random_vector(6, 6));
    Tensor loss = ops::sum_squares(ops::relu(ops::matmul(x, w)));
    loss.backward();
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

// Every primitive against central differences, 100 seeded trials each.
TEST(GradientCheck, Matmul) {
  check("matmul", [](auto& in) { return ops::matmul(in[0], in[1]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({3, 4}, s), rnd({4, 2}, s + 1)}; });
}
TEST(GradientCheck, Transpose) {
  check("transpose", [](auto& in) { return ops::transpose(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({3, 2}, s)}; });
}
TEST(GradientCheck, AddSubMul) {
  auto mk = [](std::uint64_t s) { return std::vector<Input>{rnd({2, 3}, s), rnd({2, 3}, s + 1)}; };
  check("add", [](auto& in) { return ops::add(in[0], in[1]); }, mk);
  check("sub", [](auto& in) { return ops::sub(in[0], in[1]); }, mk);
  check("mul", [](auto& in) { return ops::mul(in[0], in[1]); }, mk);
}
TEST(GradientCheck, Scale) {
  check("scale", [](auto& in) { return ops::scale(in[0], -1.7); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({5}, s)}; });
}
TEST(GradientCheck, AddBias) {
  check("add_bias 2d", [](auto& in) { return ops::add_bias(in[0], in[1]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({3, 4}, s), rnd({4}, s + 1)}; });
  check("add_bias 4d", [](auto& in) { return ops::add_bias(in[0], in[1]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 3, 2, 2}, s), rnd({3}, s + 1)}; });
}
TEST(GradientCheck, Relu) {
  check("relu", [](auto& in) { return ops::relu(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({6}, s)}; });
}
TEST(GradientCheck, Conv2d) {
  check("conv2d s1 p1", [](auto& in) { return ops::conv2d(in[0], in[1], 1, 1); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 2, 4, 4}, s), rnd({3, 2, 3, 3}, s + 1)}; });
  check("conv2d s2 p0", [](auto& in) { return ops::conv2d(in[0], in[1], 2, 0); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({1, 2, 5, 5}, s), rnd({2, 2, 3, 3}, s + 1)}; });
}
TEST(GradientCheck, Pooling) {
  check("avg_pool2d", [](auto& in) { return ops::avg_pool2d(in[0], 2); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 2, 5, 4}, s)}; });
  check("global_avg_pool", [](auto& in) { return ops::global_avg_pool(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 3, 3, 2}, s)}; });
}
TEST(GradientCheck, FlattenReshapeSlice) {
  check("flatten", [](auto& in) { return ops::flatten(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 2, 3}, s)}; });
  check("reshape", [](auto& in) { return ops::reshape(in[0], {3, 4}); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 6}, s)}; });
  check("slice", [](auto& in) { return ops::slice(in[0], 3, {2, 3}); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({10}, s)}; });
}
TEST(GradientCheck, SoftmaxAndCrossEntropy) {
  check("softmax", [](auto& in) { return ops::softmax(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({3, 4}, s)}; });
  // Both the logits and the target distribution receive gradients.
  check("cross_entropy", [](auto& in) { return ops::cross_entropy(in[0], ops::softmax(in[1])); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({3, 4}, s), rnd({3, 4}, s + 1)}; });
}
TEST(GradientCheck, Reductions) {
  check("mse", [](auto& in) { return ops::mse(in[0], in[1]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 3}, s), rnd({2, 3}, s + 1)}; });
  check("sum", [](auto& in) { return ops::sum(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({7}, s)}; });
  check("sum_squares", [](auto& in) { return ops::sum_squares(in[0]); },
        [](std::uint64_t s) { return std::vector<Input>{rnd({2, 4}, s)}; });
}

// Second order.

namespace {

Objective quadratic(std::vector<double> a, std::size_t n) {
  // 0.5 * theta^T A theta
  return [a = std::move(a), n](const Tensor& t) {
    Tensor col = ops::reshape(t, {n, 1});
    Tensor at = ops::matmul(Tensor({n, n}, a), col);
    return ops::scale(ops::sum(ops::mul(col, at)), 0.5);
  };
}

std::vector<double> spd(std::size_t n, std::uint64_t seed) {
  auto b = o::random_vector(n * n, seed);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) a[i * n + j] += b[k * n + i] * b[k * n + j];
  return a;
}

}  // namespace

TEST(Hvp, SquareHasConstantCurvature) {
  Objective f = [](const Tensor& t) { return ops::sum(ops::mul(t, t)); };
  EXPECT_NEAR(hvp(f, std::vector<double>{0.7}, std::vector<double>{1.0})[0], 2.0, 1e-8);
}

TEST(Hvp, BilinearOffDiagonal) {
  Objective f = [](const Tensor& t) {
    return ops::sum(ops::mul(ops::slice(t, 0, {1}), ops::slice(t, 1, {1})));
  };
  auto hv = hvp(f, std::vector<double>{0.3, -1.2}, std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(hv[0], 0.0, 1e-8);
  EXPECT_NEAR(hv[1], 1.0, 1e-8);
}

TEST(Hvp, ConstantLossHasZeroCurvature) {
  Objective f = [](const Tensor&) { return Tensor::scalar(3.0); };
  auto hv = hvp(f, std::vector<double>{1, 2}, std::vector<double>{1, 1});
  EXPECT_EQ(hv, (std::vector<double>{0, 0}));
}

TEST(Hvp, RejectsZeroOrNonFiniteDirection) {
  Objective f = [](const Tensor& t) { return ops::sum_squares(t); };
  EXPECT_THROW(hvp(f, std::vector<double>{1, 2}, std::vector<double>{0, 0}), ConfigError);
  EXPECT_THROW(hvp(f, std::vector<double>{1, 2}, std::vector<double>{NAN, 0}), ConfigError);
}

TEST(Hvp, MatchesExactProductOnQuadratics) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t n = 5;
    auto a = spd(n, s);
    auto theta = o::random_vector(n, s + 100);
    auto v = o::random_vector(n, s + 200);
    auto hv = hvp(quadratic(a, n), theta, v);
    for (std::size_t i = 0; i < n; ++i) {
      double exact = 0;
      for (std::size_t j = 0; j < n; ++j) exact += a[i * n + j] * v[j];
      EXPECT_NEAR(hv[i], exact, 1e-6 * std::max(1.0, std::abs(exact)));
    }
  }
}

TEST(Hvp, IsLinearInDirection) {
  const std::size_t n = 4;
  auto f = quadratic(spd(n, 9), n);
  auto theta = o::random_vector(n, 1);
  auto v1 = o::random_vector(n, 2), v2 = o::random_vector(n, 3);
  const double a = 1.5, b = -0.25;
  std::vector<double> mix(n);
  for (std::size_t i = 0; i < n; ++i) mix[i] = a * v1[i] + b * v2[i];
  auto h1 = hvp(f, theta, v1), h2 = hvp(f, theta, v2), hm = hvp(f, theta, mix);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(hm[i], a * h1[i] + b * h2[i], 1e-9);
}

TEST(HessianDiag, DiagonalHessianIsExactForAnyProbeCount) {
  Objective f = [](const Tensor& t) {
    return ops::add(ops::sum_squares(ops::slice(t, 0, {1})), ops::scale(ops::sum_squares(ops::slice(t, 1, {1})), 3.0));
  };
  for (std::size_t k : {1u, 3u, 8u}) {
    Rng rng(42, "hutchinson");
    auto d = hessian_diag_hutchinson(f, std::vector<double>{0.4, -2.0}, k, rng);
    EXPECT_NEAR(d[0], 2.0, 1e-7);
    EXPECT_NEAR(d[1], 6.0, 1e-7);
  }
}

TEST(HessianDiag, QuarticConvergesToTwelve) {
  Objective f = [](const Tensor& t) {
    Tensor sq = ops::mul(t, t);
    return ops::sum(ops::mul(sq, sq));
  };
  Rng rng(1, "hutchinson");
  // One parameter: every Rademacher probe gives v^2 = 1, so the only error is the FD remainder.
  auto d = hessian_diag_hutchinson(f, std::vector<double>{1.0}, 64, rng);
  EXPECT_NEAR(d[0], 12.0, 1e-5);
  EXPECT_NEAR(hessian_diag_exact(f, std::vector<double>{1.0})[0], 12.0, 1e-5);
}

TEST(HessianDiag, HutchinsonConvergesOnCoupledQuadratic) {
  const std::size_t n = 4;
  auto a = spd(n, 17);
  auto f = quadratic(a, n);
  auto theta = o::random_vector(n, 4);
  Rng rng(3, "hutchinson");
  auto est = hessian_diag_hutchinson(f, theta, 4000, rng);
  double off = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) off = std::max(off, std::abs(a[i * n + j]));
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(est[i], a[i * n + i], 0.1 * off * n);
  auto exact = hessian_diag_exact(f, theta);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(exact[i], a[i * n + i], 1e-7);
}

TEST(HessianDiag, ConstantLossGivesZeros) {
  Objective f = [](const Tensor&) { return Tensor::scalar(1.0); };
  Rng rng(0, "hutchinson");
  EXPECT_EQ(hessian_diag_hutchinson(f, std::vector<double>{1, 2, 3}, 8, rng), (std::vector<double>{0, 0, 0}));
}

TEST(HessianDiag, ExactModeHasSizeLimit) {
  Objective f = [](const Tensor& t) { return ops::sum_squares(t); };
  std::vector<double> theta(kExactHessianLimit + 1, 1.0);
  EXPECT_THROW(hessian_diag_exact(f, theta), ConfigError);
}

TEST(HessianFull, MatchesQuadraticMatrix) {
  const std::size_t n = 3;
  auto a = spd(n, 5);
  auto h = hessian_full(quadratic(a, n), o::random_vector(n, 6));
  for (std::size_t i = 0; i < n * n; ++i) EXPECT_NEAR(h[i], a[i], 1e-7);
}

TEST(Rng, LabelledStreamsAreIndependentAndStable) {
  EXPECT_EQ(derive_seed(7, "init"), derive_seed(7, "init"));
  EXPECT_NE(derive_seed(7, "init"), derive_seed(7, "batch-order"));
  EXPECT_NE(derive_seed(7, "init"), derive_seed(8, "init"));
  Rng a(7, "init"), b(7, "init");
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next(), b.next());
}
