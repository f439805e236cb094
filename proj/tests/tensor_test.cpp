#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xrdattn/errors.hpp"
#include "xrdattn/gradcheck.hpp"
#include "xrdattn/ops.hpp"
#include "xrdattn/tensor.hpp"

namespace xrdattn::ad {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

TEST(Tensor, ShapeAndDataLengthAgree) {
  auto t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.dim(-1), 4u);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, GradMatchesShapeAndStartsAtZero) {
  auto t = Tensor::full({3}, 2.0, true);
  ASSERT_EQ(t.grad().size(), 3u);
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, ReusedSubexpressionSumsPaths) {
  auto x = Tensor::from({1}, {3.0}, true);
  auto y = add(x, scale(x, 2.0));  // 3x
  backward(sum(mul(y, x)));        // 3x^2 -> 6x
  EXPECT_DOUBLE_EQ(x.grad()[0], 18.0);
}

TEST(Backward, TwiceWithoutZeroingDoublesGrads) {
  auto x = Tensor::from({2}, {0.5, -1.5}, true);
  auto w = Tensor::from({2}, {2.0, 3.0}, true);
  auto loss = sum(mul(tanh(x), w));
  backward(loss);
  std::vector<double> gx(x.grad().begin(), x.grad().end()), gw(w.grad().begin(), w.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * gx[i]);
    EXPECT_DOUBLE_EQ(w.grad()[i], 2.0 * gw[i]);
  }
}

TEST(Backward, NonScalarRootIsGraphError) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(mul(x, x)), GraphError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard g;
    y = sum(mul(x, x));
  }
  EXPECT_TRUE(y.node()->is_leaf());
  EXPECT_TRUE(grad_enabled());
}

TEST(GradCheck, DetectsWrongGradient) {
  // a detached factor halves the analytic gradient
  auto x = Tensor::from({2}, {0.3, -0.7}, true);
  EXPECT_LT(grad_check([&] { return sum(mul(x, x)); }, {x}), 1e-8);
  EXPECT_GT(grad_check([&] { return sum(mul(x, x.detach())); }, {x}), 0.4);
}

TEST(Conv1d, UnitKernelIsIdentity) {
  auto x = Tensor::from({1, 5, 1}, {1, -2, 3, 0.5, 7});
  auto w = Tensor::from({1, 1, 1}, {1.0});
  auto b = Tensor::zeros({1});
  auto y = conv1d(x, w, b);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv1d, OnesKernelPaddingSplit) {
  // k = 4: one zero on the left, two on the right.
  auto x = Tensor::full({1, 8, 1}, 1.0);
  auto y = conv1d(x, Tensor::full({4, 1, 1}, 1.0), Tensor::zeros({1}));
  const std::vector<double> expected{3, 4, 4, 4, 4, 4, 3, 2};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y.at(i), expected[i]) << i;
}

TEST(Conv1d, PreservesLengthForKernelsOneToEight) {
  std::mt19937_64 rng(3);
  for (std::size_t k = 1; k <= 8; ++k) {
    auto x = random_tensor({2, 11, 3}, rng);
    auto y = conv1d(x, random_tensor({k, 3, 5}, rng), random_tensor({5}, rng));
    EXPECT_EQ(y.shape(), (Shape{2, 11, 5})) << "k=" << k;
  }
}

TEST(Conv1d, MismatchedChannelsIsShapeError) {
  EXPECT_THROW(conv1d(Tensor::zeros({1, 4, 2}), Tensor::zeros({3, 3, 1}), Tensor::zeros({1})), ShapeError);
}

TEST(Conv1d, MatchesDirectCorrelation) {
  std::mt19937_64 rng(9);
  const std::size_t B = 2, L = 7, ci = 3, co = 2, k = 4;
  auto x = random_tensor({B, L, ci}, rng), w = random_tensor({k, ci, co}, rng), b = random_tensor({co}, rng);
  auto y = conv1d(x, w, b);
  const long left = (static_cast<long>(k) - 1) / 2;
  for (std::size_t bb = 0; bb < B; ++bb) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t o = 0; o < co; ++o) {
        double acc = b.at(o);
        for (std::size_t t = 0; t < k; ++t) {
          const long src = static_cast<long>(l) + static_cast<long>(t) - left;
          if (src < 0 || src >= static_cast<long>(L)) continue;
          for (std::size_t c = 0; c < ci; ++c) {
            acc += x.at((bb * L + static_cast<std::size_t>(src)) * ci + c) * w.at((t * ci + c) * co + o);
          }
        }
        EXPECT_NEAR(y.at((bb * L + l) * co + o), acc, 1e-12);
      }
    }
  }
}

TEST(Activations, ReluAndTanhValues) {
  auto r = relu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(r.at(0), 0.0);
  EXPECT_EQ(r.at(1), 0.0);
  EXPECT_EQ(r.at(2), 2.0);
  EXPECT_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
}

TEST(Activations, TanhMatchesStd) {
  std::vector<double> xs;
  for (double x = -25.0; x <= 25.0; x += 0.01) xs.push_back(x);
  xs.push_back(1e-9);
  xs.push_back(-1e-300);
  auto y = tanh(Tensor::from({xs.size()}, xs));
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(y.at(i), std::tanh(xs[i]), 4e-16) << xs[i];
}

TEST(Activations, ReluSubgradientZeroAtKink) {
  auto x = Tensor::from({3}, {-1.0, 0.0, 2.0}, true);
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({4, 10, 3}, rng, -3.0, 5.0);
  BatchNormState st(3);
  auto y = batchnorm1d(x, Tensor::full({3}, 1.0), Tensor::zeros({3}), st, BnMode::Train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 40; ++i) m += y.at(i * 3 + c) / 40;
    for (std::size_t i = 0; i < 40; ++i) v += (y.at(i * 3 + c) - m) * (y.at(i * 3 + c) - m) / 40;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_LT(std::abs(v - 1.0), 1e-4);
  }
}

TEST(BatchNorm, AffineParametersSetMeanAndStd) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 20, 2}, rng, 0.0, 10.0);
  BatchNormState st(2);
  auto y = batchnorm1d(x, Tensor::full({2}, 2.0), Tensor::full({2}, 3.0), st, BnMode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 60; ++i) m += y.at(i * 2 + c) / 60;
    for (std::size_t i = 0; i < 60; ++i) v += (y.at(i * 2 + c) - m) * (y.at(i * 2 + c) - m) / 60;
    EXPECT_NEAR(m, 3.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v), 2.0, 1e-3);
  }
}

TEST(BatchNorm, RunningStatsAndEvalMode) {
  auto x = Tensor::from({1, 4, 1}, {1.0, 2.0, 3.0, 4.0});
  BatchNormState st(1);
  batchnorm1d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, BnMode::Train, 0.1);
  EXPECT_NEAR(st.running_mean[0], 0.25, 1e-15);
  // unbiased variance of 1..4 is 5/3
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-15);
  auto y = batchnorm1d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, BnMode::Eval);
  EXPECT_NEAR(y.at(0), (1.0 - st.running_mean[0]) / std::sqrt(st.running_var[0] + kBatchNormEps), 1e-15);
}

TEST(BatchNorm, SingleRowTrainBatchIsDegenerate) {
  BatchNormState st(2);
  EXPECT_THROW(batchnorm1d(Tensor::zeros({1, 1, 2}), Tensor::full({2}, 1.0), Tensor::zeros({2}), st, BnMode::Train),
               DegenerateBatch);
  EXPECT_THROW(batchnorm1d(Tensor::zeros({1, 3, 2}), Tensor::full({3}, 1.0), Tensor::zeros({2}), st, BnMode::Train),
               ShapeError);
}

TEST(Matmul, HandExample) {
  auto c = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(c.at(0), 19);
  EXPECT_EQ(c.at(1), 22);
  EXPECT_EQ(c.at(2), 43);
  EXPECT_EQ(c.at(3), 50);
}

TEST(Matmul, IdentityLeavesInputUnchanged) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4, 5}, rng);
  std::vector<double> eye(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) eye[i * 6] = 1.0;
  auto c = matmul(a, Tensor::from({5, 5}, eye));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(c.at(i), a.at(i));
}

TEST(Matmul, ShapeErrors) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 1})), ShapeError);
  EXPECT_THROW(dense(Tensor::zeros({2, 3}), Tensor::zeros({4, 1}), Tensor::zeros({1})), ShapeError);
}

TEST(Matmul, TransposeLastTwo) {
  auto t = transpose_last2(Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(t.shape(), (Shape{1, 3, 2}));
  const std::vector<double> expected{1, 4, 2, 5, 3, 6};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(t.at(i), expected[i]);
}

TEST(Softmax, SymmetricPair) {
  auto s = softmax(Tensor::from({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(s.at(0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(1), 0.5);
}

TEST(Softmax, LogRatios) {
  auto s = softmax(Tensor::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(s.at(0), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.at(1), 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.at(2), 3.0 / 6.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 4, 7}, rng, -5, 5);
    const double c = std::uniform_real_distribution<double>(-100, 100)(rng);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += c;
    for (int axis : {-1, 1, 0}) {
      auto a = softmax(x, axis);
      auto b = softmax(Tensor::from(x.shape(), shifted), axis);
      for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
        EXPECT_GE(a.at(i), 0.0);
        EXPECT_LE(a.at(i), 1.0);
      }
    }
    auto s = softmax(x, -1);
    for (std::size_t r = 0; r < 12; ++r) {
      double sum = 0;
      for (std::size_t k = 0; k < 7; ++k) sum += s.at(r * 7 + k);
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, NanPropagates) {
  auto s = softmax(Tensor::from({2}, {NAN, 1.0}));
  EXPECT_TRUE(std::isnan(s.at(0)) || std::isnan(s.at(1)));
}

TEST(Losses, AcoshZeroAtPerfectPrediction) {
  auto p = Tensor::from({3}, {0.1, 0.5, 0.9});
  EXPECT_EQ(acosh_loss(p, p).item(), 0.0);
}

TEST(Losses, AcoshOfErrorTwo) {
  const double v = acosh_loss(Tensor::from({1}, {3.0}), Tensor::from({1}, {1.0})).item();
  EXPECT_NEAR(v, std::log(5.0 + std::sqrt(24.0)), 1e-14);
  EXPECT_NEAR(v, 2.2924, 1e-4);
}

TEST(Losses, AcoshSymmetricAndNonNegative) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    auto p = random_tensor({5}, rng, -3, 3), q = random_tensor({5}, rng, -3, 3);
    const double a = acosh_loss(p, q).item(), b = acosh_loss(q, p).item();
    EXPECT_EQ(a, b);
    EXPECT_GT(a, 0.0);
  }
}

TEST(Losses, AcoshGradientZeroAtZeroError) {
  auto p = Tensor::from({2}, {0.4, 0.4}, true);
  auto t = Tensor::from({2}, {0.4, 0.4});
  backward(acosh_loss(p, t));
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(p.grad()[1], 0.0);
}

TEST(Losses, CrossEntropyUniformAndConfident) {
  auto onehot = Tensor::from({2, 4}, {1, 0, 0, 0, 0, 0, 1, 0});
  EXPECT_NEAR(cross_entropy(Tensor::zeros({2, 4}), onehot).item(), std::log(4.0), 1e-15);
  auto confident = Tensor::from({2, 4}, {800, 0, 0, 0, 0, 0, 800, 0});
  const double l = cross_entropy(confident, onehot).item();
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-300);
  EXPECT_THROW(cross_entropy(Tensor::zeros({2, 3}), onehot), ShapeError);
}

TEST(Losses, WeightedSum) {
  auto a = Tensor::scalar(1.5), b = Tensor::scalar(-2.0), c = Tensor::scalar(4.0);
  EXPECT_EQ(weighted_sum_loss({a, b, c}, {1, 0, 0}).item(), 1.5);
  EXPECT_EQ(weighted_sum_loss({a, b, c}, {1, 1, 1}).item(), 3.5);
  EXPECT_THROW(weighted_sum_loss({a, b}, {1, 1, 1}), LengthError);
}

TEST(Losses, WeightedSumGradientIsLinear) {
  auto x = Tensor::from({2}, {0.3, -0.4}, true);
  auto t = Tensor::from({2}, {0.1, 0.2});
  auto l1 = [&] { return acosh_loss(x, t); };
  auto l2 = [&] { return sum(mul(x, x)); };
  backward(l1());
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(l2());
  std::vector<double> g2(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(weighted_sum_loss({l1(), l2()}, {0.3, 2.0}));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(x.grad()[i], 0.3 * g1[i] + 2.0 * g2[i], 1e-15);
  EXPECT_LT(grad_check([&] { return weighted_sum_loss({l1(), l2()}, {0.3, 2.0}); }, {x}), 1e-4);
}

class OpGradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradCheck, EveryOpAndMiniatureModel) {
  checks::GradCheckOptions o;
  o.seed = GetParam();
  for (const auto& r : checks::run_gradcheck_suite(o)) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
  }
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, OpGradCheck, ::testing::Range<std::uint64_t>(1, 11));

}  // namespace
}  // namespace xrdattn::ad
