#include "fedmm/simplex.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace fedmm {
namespace {

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

TEST(ProjectSimplex, PointsAlreadyOnTheSimplex) {
  const auto p = project_simplex(std::vector<double>{0.5, 0.5});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(ProjectSimplex, KnownProjections) {
  // Oracle values from brute-force grid search (step 1e-4) on the 1-simplex.
  const std::vector<double> a{2.0, 0.0}, b{0.4, 0.4};
  EXPECT_LE(test::min_grid_distance(a, 10000), dist(a, {1.0, 0.0}) + 1e-12);
  EXPECT_LE(test::min_grid_distance(b, 10000), dist(b, {0.5, 0.5}) + 1e-12);

  const auto pa = project_simplex(a);
  EXPECT_DOUBLE_EQ(pa[0], 1.0);
  EXPECT_DOUBLE_EQ(pa[1], 0.0);
  const auto pb = project_simplex(b);
  EXPECT_NEAR(pb[0], 0.5, 1e-15);
  EXPECT_NEAR(pb[1], 0.5, 1e-15);
}

TEST(ProjectSimplex, FloorKeepsEntriesAboveEpsilon) {
  const auto p = project_simplex(std::vector<double>{3.0, -1.0, 0.2}, 0.05);
  double s = 0.0;
  for (double v : p.values()) {
    EXPECT_GE(v, 0.05 - 1e-15);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.05, 1e-15);
  EXPECT_NEAR(p[2], 0.05, 1e-15);
  EXPECT_NEAR(p[0], 0.9, 1e-15);
  // d * eps == 1 pins the only feasible point.
  const auto q = project_simplex(std::vector<double>{5.0, 0.0, 0.0, 0.0}, 0.25);
  for (double v : q.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(ProjectSimplex, ErrorPaths) {
  EXPECT_THROW(project_simplex(std::vector<double>{}), ValidationError);
  EXPECT_THROW(project_simplex(std::vector<double>{1.0, std::nan("")}), ValidationError);
  EXPECT_THROW(project_simplex(std::vector<double>{1.0, INFINITY}), ValidationError);
  EXPECT_THROW(project_simplex(std::vector<double>{1.0, 0.0}, 0.6), ValidationError);
  EXPECT_THROW(project_simplex(std::vector<double>{1.0, 0.0}, -0.1), ValidationError);
}

TEST(ProjectSimplex, KktConditionsOnRandomInputs) {
  // Optimality: x = max(v - tau, 0) for a single tau, which is what makes x
  // the Euclidean projection. Check via the residual v - x: equal on the
  // support and no larger than it off the support.
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::uniform_int_distribution<int> dims(2, 30);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(std::size_t(dims(rng)));
    for (double& x : v) x = nd(rng);
    const auto p = project_simplex(v);
    double tau = 0.0;
    bool have_tau = false;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (p[i] > 0.0) {
        if (!have_tau) tau = v[i] - p[i], have_tau = true;
        EXPECT_NEAR(v[i] - p[i], tau, 1e-12);
      }
    ASSERT_TRUE(have_tau);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (p[i] == 0.0) EXPECT_LE(v[i], tau + 1e-12);
  }
}

TEST(ProjectSimplex, IdempotentAndNearestOnGrid) {
  // Smaller version of the acceptance oracle; the full 1000-vector run lives
  // in the acceptance suite.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.3, 0.6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(std::size_t(2 + trial % 4));
    for (double& x : v) x = nd(rng);
    const auto p = project_simplex(v);
    const auto pp = project_simplex(p.values());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(pp[i], p[i], 1e-12);
    EXPECT_LE(dist(v, p.values()), test::min_grid_distance(v, 200) + 1e-6);
  }
}

TEST(PgaStep, ZeroStepAndUniformShifts) {
  const SimplexWeights mu({0.3, 0.7});
  const auto same = pga_step(mu, std::vector<double>{5.0, -2.0}, 0.0);
  EXPECT_NEAR(same[0], 0.3, 1e-15);
  EXPECT_NEAR(same[1], 0.7, 1e-15);
  const auto shifted = pga_step(mu, std::vector<double>{0.42, 0.42}, 3.0);
  EXPECT_NEAR(shifted[0], 0.3, 1e-14);
  EXPECT_NEAR(shifted[1], 0.7, 1e-14);
}

TEST(PgaStep, LargeStepHitsVertex) {
  const SimplexWeights mu({0.5, 0.5});
  const auto out = pga_step(mu, std::vector<double>{1.0, 0.0}, 10.0);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_THROW(pga_step(mu, std::vector<double>{1.0}, 1.0), ValidationError);
}

TEST(PgaStep, InvariantToConstantGradientOffset) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> raw(4), grad(4);
    for (double& x : raw) x = ud(rng);
    for (double& x : grad) x = ud(rng);
    const auto mu = project_simplex(raw);
    auto offset = grad;
    const double c = 10.0 * ud(rng) - 5.0;
    for (double& x : offset) x += c;
    const auto a = pga_step(mu, grad, 0.7);
    const auto b = pga_step(mu, offset, 0.7);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(AggregateParams, ConvexCombinations) {
  MlpSpec spec{{1, 2}};
  ParamVector a(spec, {1, 2, 3, 4});
  ParamVector b(spec, {3, 2, 1, -2});
  const std::vector<ParamVector> same{a, a, a};
  const std::vector<double> thirds{0.25, 0.5, 0.25};
  EXPECT_EQ(aggregate_params(same, thirds).values, a.values);

  const std::vector<ParamVector> two{a, b};
  const std::vector<double> half{0.5, 0.5};
  const auto mean = aggregate_params(two, half);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(mean.values[i], 0.5 * (a.values[i] + b.values[i]));

  const std::vector<double> vertex{1.0, 0.0};
  EXPECT_EQ(aggregate_params(two, vertex).values, a.values);
}

TEST(AggregateParams, ErrorPaths) {
  ParamVector a(MlpSpec{{1, 2}});
  ParamVector b(MlpSpec{{2, 2}});
  const std::vector<ParamVector> mixed{a, b};
  const std::vector<double> half{0.5, 0.5};
  EXPECT_THROW(aggregate_params(mixed, half), ValidationError);
  const std::vector<ParamVector> two{a, a};
  const std::vector<double> bad{0.7, 0.7};
  EXPECT_THROW(aggregate_params(two, bad), ValidationError);
  const std::vector<double> neg{1.5, -0.5};
  EXPECT_THROW(aggregate_params(two, neg), ValidationError);
}

TEST(ImportanceWeights, QuotientOfAdversaryAndPrior) {
  const SimplexWeights rho({0.5, 0.5});
  const auto ones = importance_weights(rho, rho);
  EXPECT_DOUBLE_EQ(ones[0], 1.0);
  EXPECT_DOUBLE_EQ(ones[1], 1.0);
  const auto w = importance_weights(SimplexWeights({1.0, 0.0}), rho);
  EXPECT_DOUBLE_EQ(w[0], 2.0);
  EXPECT_DOUBLE_EQ(w[1], 0.0);
  EXPECT_THROW(importance_weights(rho, SimplexWeights({1.0, 0.0})), ValidationError);
}

TEST(SimplexWeights, RejectsOffSimplexInput) {
  EXPECT_THROW(SimplexWeights({0.5, 0.6}), ValidationError);
  EXPECT_THROW(SimplexWeights({1.5, -0.5}), ValidationError);
  EXPECT_THROW(SimplexWeights(std::vector<double>{}), ValidationError);
  EXPECT_NO_THROW(SimplexWeights({0.25, 0.75}));
}

}  // namespace
}  // namespace fedmm
