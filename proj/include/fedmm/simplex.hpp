#pragma once

// Simplex geometry and the update primitives shared by every training
// procedure: Euclidean projection, projected gradient ascent for the
// adversary, and convex aggregation of client parameters.

#include "fedmm/common.hpp"
#include "fedmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fedmm {

inline constexpr double kSimplexSumTolerance = 1e-9;

// A point on the probability simplex, optionally with every entry >= floor.
class SimplexWeights {
 public:
  SimplexWeights() = default;

  explicit SimplexWeights(std::vector<double> values, double floor = 0.0) : values_(std::move(values)) {
    if (values_.empty()) throw ValidationError("simplex weights must be non-empty");
    double sum = 0.0;
    for (double v : values_) {
      if (!std::isfinite(v)) throw ValidationError("simplex weight is not finite");
      if (v < floor - kSimplexSumTolerance) throw ValidationError("simplex weight below floor");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexSumTolerance)
      throw ValidationError("simplex weights sum to " + std::to_string(sum) + ", expected 1");
  }

  static SimplexWeights uniform(std::size_t dim) {
    return SimplexWeights(std::vector<double>(dim, 1.0 / double(dim)));
  }

  // Normalized counts, e.g. the group prior {n_a / n}.
  template <typename Count>
  static SimplexWeights from_counts(std::span<const Count> counts) {
    double total = 0.0;
    for (auto c : counts) total += double(c);
    if (!(total > 0.0)) throw ValidationError("cannot normalize all-zero counts");
    std::vector<double> v;
    v.reserve(counts.size());
    for (auto c : counts) v.push_back(double(c) / total);
    return SimplexWeights(std::move(v));
  }

  std::size_t dimension() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> span() const { return values_; }

 private:
  std::vector<double> values_;
};

// w_a = mu_a / rho_a.
struct ImportanceWeights {
  std::vector<double> values;
  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }
};

namespace detail {

// Nearest point of {x >= 0, sum x = radius}: sort-and-threshold.
inline std::vector<double> project_scaled_simplex(std::span<const double> v, double radius) {
  const std::size_t n = v.size();
  if (radius <= 0.0) return std::vector<double>(n, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Descending by value, ties by index.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  double prefix = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    prefix += v[order[j]];
    const double candidate = (prefix - radius) / double(j + 1);
    if (v[order[j]] - candidate > 0.0) tau = candidate;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

}  // namespace detail

// Euclidean projection onto {x : x_i >= floor, sum x = 1}. The floored set
// is a translated, scaled simplex: x = floor + P_{(1 - d*floor)Delta}(v - floor).
inline SimplexWeights project_simplex(std::span<const double> v, double floor = 0.0) {
  if (v.empty()) throw ValidationError("cannot project an empty vector");
  for (double x : v)
    if (!std::isfinite(x)) throw ValidationError("cannot project a non-finite vector");
  const double d = double(v.size());
  if (!(floor >= 0.0) || floor * d > 1.0 + 1e-15)
    throw ValidationError("infeasible simplex floor " + std::to_string(floor) + " for dimension " +
                          std::to_string(v.size()));
  const double radius = std::max(0.0, 1.0 - d * floor);
  std::vector<double> shifted(v.begin(), v.end());
  for (double& x : shifted) x -= floor;
  auto y = detail::project_scaled_simplex(shifted, radius);
  for (double& x : y) x += floor;
  return SimplexWeights(std::move(y), floor);
}

// Ascent on <mu, r>: the gradient with respect to mu is r itself.
inline SimplexWeights pga_step(const SimplexWeights& mu, std::span<const double> grad, double step,
                               double floor = 0.0) {
  if (grad.size() != mu.dimension()) throw ValidationError("pga_step: gradient dimension mismatch");
  if (!(step >= 0.0)) throw ValidationError("pga_step: step must be non-negative");
  std::vector<double> moved(mu.dimension());
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] = mu[i] + step * grad[i];
  return project_simplex(moved, floor);
}

inline ImportanceWeights importance_weights(const SimplexWeights& mu, const SimplexWeights& prior) {
  if (mu.dimension() != prior.dimension()) throw ValidationError("importance_weights: dimension mismatch");
  ImportanceWeights w;
  w.values.resize(mu.dimension());
  for (std::size_t a = 0; a < mu.dimension(); ++a) {
    if (!(prior[a] > 0.0))
      throw ValidationError("group " + std::to_string(a) + " has zero prior (absent from the federation)");
    w.values[a] = mu[a] / prior[a];
  }
  return w;
}

// sum_k weights_k * updates_k, accumulated in ascending k.
inline ParamVector aggregate_params(std::span<const ParamVector> updates, std::span<const double> weights) {
  if (updates.empty()) throw ValidationError("aggregate_params: no updates");
  if (updates.size() != weights.size()) throw ValidationError("aggregate_params: one weight per update required");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("aggregate_params: weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > kSimplexSumTolerance) throw ValidationError("aggregate_params: weights must sum to 1");
  ParamVector out(updates.front().spec);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (updates[k].spec != out.spec || updates[k].values.size() != out.values.size())
      throw ValidationError("aggregate_params: shape mismatch at update " + std::to_string(k));
    const double w = weights[k];
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += w * updates[k].values[i];
  }
  return out;
}

}  // namespace fedmm
