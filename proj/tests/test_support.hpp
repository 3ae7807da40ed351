#pragma once

// Test-only oracles. Nothing here calls the code paths it is used to check.

#include "fedmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace fedmm::test {

// Expected binary Brier score of predicting P(Y=1)=p when the truth is q:
// 2 * ((p - q)^2 + q (1 - q)).
inline double binary_brier(double p, double q) { return 2.0 * ((p - q) * (p - q) + q * (1.0 - q)); }

struct Instance {
  ParamVector params;
  Matrix x;
  std::vector<int> y;
  std::vector<double> w;
  double divisor = 1.0;
};

inline Instance random_instance(std::mt19937_64& rng, LossKind, int trial) {
  std::uniform_int_distribution<int> dim(1, 4), width(2, 6), depth(0, 2), classes(2, 4), rows(1, 12);
  MlpSpec spec;
  spec.hidden_activation = trial % 2 == 0 ? Activation::Tanh : Activation::ReLU;
  spec.layer_sizes.push_back(std::size_t(dim(rng)));
  const int hidden = depth(rng);
  for (int h = 0; h < hidden; ++h) spec.layer_sizes.push_back(std::size_t(width(rng)));
  spec.layer_sizes.push_back(std::size_t(classes(rng)));
  Instance inst;
  inst.params = init_params(spec, rng());
  std::normal_distribution<double> nd(0.0, 0.5);
  for (double& v : inst.params.values) v += nd(rng);
  const int n = rows(rng);
  inst.x = Matrix(n, Eigen::Index(spec.input_dim()));
  std::normal_distribution<double> xd(0.0, 1.0);
  for (Eigen::Index i = 0; i < inst.x.size(); ++i) inst.x.data()[i] = xd(rng);
  std::uniform_int_distribution<int> cls(0, int(spec.num_classes()) - 1);
  std::uniform_real_distribution<double> wd(0.0, 3.0);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    inst.y.push_back(cls(rng));
    inst.w.push_back(wd(rng));
    wsum += inst.w.back();
  }
  inst.divisor = wsum + 0.5;
  return inst;
}

// Central differences of weighted_loss, one coordinate at a time.
inline std::vector<double> finite_difference_gradient(const ParamVector& params, const WeightedBatch& batch,
                                                      LossKind kind, double divisor, double h) {
  std::vector<double> g(params.size());
  ParamVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + h;
    const double up = weighted_loss(probe, batch, kind, divisor);
    probe.values[i] = orig - h;
    const double down = weighted_loss(probe, batch, kind, divisor);
    probe.values[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, 1e-8)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

// Smallest Euclidean distance from v to any point of the regular grid with
// spacing 1/steps on the probability simplex. Exhaustive branch and bound:
// coordinates are enumerated outward from v_i, and a branch is cut when its
// partial cost plus a lower bound on the remaining coordinates cannot beat
// the incumbent. Two bounds are used, both valid for the continuous
// relaxation of the remaining subproblem:
//   - Cauchy-Schwarz on the sum constraint,
//   - weak duality with a fixed multiplier tau (any tau gives a lower bound;
//     tau is found once by bisection so the bound is tight near the optimum).
inline double min_grid_distance(const std::vector<double>& v, int steps) {
  const std::size_t d = v.size();
  std::vector<double> tail(d + 1, 0.0);
  for (std::size_t i = d; i-- > 0;) tail[i] = tail[i + 1] + v[i];

  // tau with sum_j clamp(v_j - tau / 2, 0, 1) = 1.
  auto mass = [&](double tau) {
    double m = 0.0;
    for (double x : v) m += std::clamp(x - 0.5 * tau, 0.0, 1.0);
    return m;
  };
  double lo = -4.0, hi = 4.0;
  for (double x : v) lo = std::min(lo, 2.0 * (x - 1.0) - 1.0), hi = std::max(hi, 2.0 * x + 1.0);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > 1.0 ? lo : hi) = mid;
  }
  const double tau = 0.5 * (lo + hi);

  auto bound = [&](std::size_t i, int remaining) {
    if (i >= d) return 0.0;
    const double r = double(remaining) / steps;
    const double gap = r - tail[i];
    const double cs = gap * gap / double(d - i);
    double dual = -tau * r;
    for (std::size_t j = i; j < d; ++j) {
      const double x = std::clamp(v[j] - 0.5 * tau, 0.0, r);
      dual += (x - v[j]) * (x - v[j]) + tau * x;
    }
    return std::max(cs, dual);
  };

  double best = std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, std::size_t i, int remaining, double partial) -> void {
    if (i + 1 == d) {
      const double x = double(remaining) / steps - v[i];
      best = std::min(best, partial + x * x);
      return;
    }
    const int center = std::clamp(int(std::lround(v[i] * steps)), 0, remaining);
    auto visit = [&](int c) {
      const double x = double(c) / steps - v[i];
      const double cost = partial + x * x;
      if (cost >= best) return false;
      if (cost + bound(i + 1, remaining - c) < best) self(self, i + 1, remaining - c, cost);
      return true;
    };
    for (int c = center; c <= remaining; ++c)
      if (!visit(c)) break;
    for (int c = center - 1; c >= 0; --c)
      if (!visit(c)) break;
  };
  rec(rec, 0, steps, 0.0);
  return std::sqrt(best);
}

}  // namespace fedmm::test
