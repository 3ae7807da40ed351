#include "fedmm/model.hpp"
#include "fedmm/data.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace fedmm {
namespace {

TEST(MlpSpec, ParamCountMatchesShapeArithmetic) {
  MlpSpec spec{{1, 2, 2}};
  EXPECT_EQ(spec.num_params(), std::size_t((1 + 1) * 2 + (2 + 1) * 2));
  EXPECT_EQ(init_params(spec, 7).size(), 10u);
  MlpSpec mlp{{1, 32, 32, 2}};
  EXPECT_EQ(mlp.num_params(), std::size_t(2 * 32 + 33 * 32 + 33 * 2));
}

TEST(MlpSpec, RejectsDegenerateShapes) {
  EXPECT_THROW((MlpSpec{{3}}.validate()), ValidationError);
  EXPECT_THROW((MlpSpec{{3, 1}}.validate()), ValidationError);
  EXPECT_THROW((MlpSpec{{3, 0, 2}}.validate()), ValidationError);
}

TEST(InitParams, DeterministicPerSeedAndBiasesZero) {
  MlpSpec spec{{4, 8, 3}};
  const auto a = init_params(spec, 42);
  const auto b = init_params(spec, 42);
  EXPECT_EQ(a.values, b.values);
  const auto c = init_params(spec, 43);
  EXPECT_NE(a.values, c.values);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    EXPECT_EQ(a.bias(l).cwiseAbs().maxCoeff(), 0.0);
    const double limit = std::sqrt(6.0 / double(spec.layer_sizes[l] + spec.layer_sizes[l + 1]));
    EXPECT_LE(a.weights(l).cwiseAbs().maxCoeff(), limit);
  }
}

TEST(Forward, ZeroParamsGiveUniformRows) {
  MlpSpec spec{{3, 5, 2}};
  ParamVector zero(spec);
  Matrix x = Matrix::Random(6, 3);
  const Matrix p = forward(zero, x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    EXPECT_DOUBLE_EQ(p(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(i, 1), 0.5);
  }
}

TEST(Forward, RowsStayOnTheSimplex) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    MlpSpec spec{{3, 7, 4}, trial % 2 ? Activation::Tanh : Activation::ReLU};
    auto params = init_params(spec, rng());
    for (double& v : params.values) v *= 20.0;  // push toward saturation
    Matrix x = 10.0 * Matrix::Random(16, 3);
    const Matrix p = forward(params, x);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      EXPECT_LE(std::abs(p.row(i).sum() - 1.0), 1e-12);
      EXPECT_GE(p.row(i).minCoeff(), 0.0);
    }
  }
}

TEST(Forward, RejectsWidthMismatch) {
  auto params = init_params(MlpSpec{{3, 4, 2}}, 1);
  Matrix x = Matrix::Zero(2, 2);
  EXPECT_THROW(forward(params, x), ValidationError);
}

TEST(WeightedLoss, BrierDirectValues) {
  // A single softmax layer with no inputs effect: bias sets the logits.
  MlpSpec spec{{1, 2}};
  ParamVector params(spec);
  Matrix x = Matrix::Zero(1, 1);
  std::vector<int> y{1};
  std::vector<double> w{1.0};
  // p = softmax(b) = (0.7, 0.3)  ->  b = (log 0.7, log 0.3)
  params.bias(0) << std::log(0.7), std::log(0.3);
  EXPECT_NEAR(weighted_loss(params, {x, y, w}, LossKind::BrierScore), 0.98, 1e-12);
  // Saturated correct prediction: Brier 0.
  params.bias(0) << -800.0, 800.0;
  EXPECT_NEAR(weighted_loss(params, {x, y, w}, LossKind::BrierScore), 0.0, 1e-15);
  // Cross-entropy clamps at 1e-12 instead of returning infinity.
  params.bias(0) << 800.0, -800.0;
  EXPECT_NEAR(weighted_loss(params, {x, y, w}, LossKind::CrossEntropy), -std::log(1e-12), 1e-9);
}

TEST(WeightedLoss, DivisorChoices) {
  MlpSpec spec{{1, 2}};
  ParamVector params(spec);
  Matrix x = Matrix::Zero(3, 1);
  std::vector<int> y{0, 1, 1};
  std::vector<double> w{1.0, 2.0, 3.0};
  // Uniform prediction: Brier 0.5 per sample.
  EXPECT_NEAR(weighted_loss(params, {x, y, w}, LossKind::BrierScore), 0.5, 1e-15);
  EXPECT_NEAR(weighted_loss(params, {x, y, w}, LossKind::BrierScore, 3.0), 0.5 * 6.0 / 3.0, 1e-15);
}

TEST(WeightedLoss, ErrorPaths) {
  auto params = init_params(MlpSpec{{1, 2}}, 0);
  Matrix empty(0, 1);
  std::vector<int> no_y;
  std::vector<double> no_w;
  EXPECT_THROW(weighted_loss(params, {empty, no_y, no_w}, LossKind::BrierScore), ValidationError);
  Matrix x = Matrix::Zero(1, 1);
  std::vector<int> y{0};
  std::vector<double> neg{-1.0};
  EXPECT_THROW(weighted_loss(params, {x, y, neg}, LossKind::BrierScore), ValidationError);
}

// Group 0 of the synthetic task under the predictor p1 = 0.3 (x <= 0),
// p1 = 0.6 (x > 0): expected Brier is the closed form averaged over the two
// half-lines.
TEST(WeightedLoss, SyntheticGroupZeroBrierMatchesClosedForm) {
  const double oracle = 0.5 * test::binary_brier(0.3, 0.3) + 0.5 * test::binary_brier(0.6, 0.6);
  EXPECT_NEAR(oracle, 0.45, 1e-15);

  SyntheticSpec s;
  s.n_samples = 200000;
  s.seed = 11;
  auto data = generate_synthetic(s);
  // A 1-2 logistic model can represent a step only approximately, so build
  // the step predictor's probabilities directly and score them.
  double sum = 0.0;
  std::size_t n0 = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.groups[i] != 0) continue;
    const double p1 = data.features(Eigen::Index(i), 0) <= 0.0 ? 0.3 : 0.6;
    const double y = data.targets[i];
    sum += (p1 - y) * (p1 - y) + ((1 - p1) - (1 - y)) * ((1 - p1) - (1 - y));
    ++n0;
  }
  EXPECT_NEAR(sum / double(n0), oracle, 0.01);
}

class GradientCheck : public ::testing::TestWithParam<LossKind> {};

TEST_P(GradientCheck, BackpropMatchesCentralDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = test::random_instance(rng, GetParam(), trial);
    const WeightedBatch batch{inst.x, inst.y, inst.w};
    const auto grad = loss_gradient(inst.params, batch, GetParam(), inst.divisor);
    const auto fd = test::finite_difference_gradient(inst.params, batch, GetParam(), inst.divisor, 1e-5);
    EXPECT_LE(test::relative_error(grad.values, fd), 1e-5) << "trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(BothLosses, GradientCheck,
                         ::testing::Values(LossKind::BrierScore, LossKind::CrossEntropy),
                         [](const auto& info) { return std::string(info.param == LossKind::BrierScore ? "Brier" : "CrossEntropy"); });

TEST(LossGradient, VanishesAtPerfectPrediction) {
  MlpSpec spec{{1, 2}};
  ParamVector params(spec);
  params.bias(0) << -40.0, 40.0;
  Matrix x = Matrix::Zero(1, 1);
  std::vector<int> y{1};
  std::vector<double> w{1.0};
  const auto g = loss_gradient(params, {x, y, w}, LossKind::BrierScore);
  double norm = 0.0;
  for (double v : g.values) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-10);
}

TEST(LossGradient, LinearInWeightsForFixedDivisor) {
  std::mt19937_64 rng(5);
  auto inst = test::random_instance(rng, LossKind::BrierScore, 0);
  const auto g1 = loss_gradient(inst.params, {inst.x, inst.y, inst.w}, LossKind::BrierScore, 7.0);
  auto doubled = inst.w;
  for (double& v : doubled) v *= 2.0;
  const auto g2 = loss_gradient(inst.params, {inst.x, inst.y, doubled}, LossKind::BrierScore, 7.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g2.values[i], 2.0 * g1.values[i]);
  const double l1 = weighted_loss(inst.params, {inst.x, inst.y, inst.w}, LossKind::BrierScore, 7.0);
  const double l2 = weighted_loss(inst.params, {inst.x, inst.y, doubled}, LossKind::BrierScore, 7.0);
  EXPECT_NEAR(l2, 2.0 * l1, 1e-14);
}

TEST(LossRange, PerSampleBounds) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = test::random_instance(rng, LossKind::BrierScore, trial);
    for (double& v : inst.params.values) v *= 10.0;
    const auto brier = backprop(inst.params, {inst.x, inst.y, inst.w}, LossKind::BrierScore, std::nullopt, false);
    for (double l : brier.sample_losses) {
      EXPECT_GE(l, 0.0);
      EXPECT_LE(l, 2.0);
    }
    const auto ce = backprop(inst.params, {inst.x, inst.y, inst.w}, LossKind::CrossEntropy, std::nullopt, false);
    for (double l : ce.sample_losses) EXPECT_GE(l, 0.0);
  }
}

}  // namespace
}  // namespace fedmm
