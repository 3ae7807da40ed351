#pragma once

// Dense feed-forward classifiers with a softmax head and exact gradients
// for the Brier score and cross-entropy losses.

#include "fedmm/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedmm {

enum class Activation { ReLU, Tanh };
enum class LossKind { BrierScore, CrossEntropy };

inline constexpr double kProbabilityClamp = 1e-12;

inline std::string_view to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }
inline std::string_view to_string(LossKind k) {
  return k == LossKind::BrierScore ? "brier" : "cross_entropy";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + std::string(s) + "' (expected relu|tanh)");
}

inline LossKind parse_loss(std::string_view s) {
  if (s == "brier") return LossKind::BrierScore;
  if (s == "cross_entropy" || s == "ce") return LossKind::CrossEntropy;
  throw ValidationError("unknown loss '" + std::string(s) + "' (expected brier|cross_entropy)");
}

// layer_sizes = {input, hidden..., classes}. A two-entry spec is multinomial
// logistic regression.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::ReLU;

  void validate() const {
    if (layer_sizes.size() < 2) throw ValidationError("MlpSpec needs at least 2 layer sizes");
    for (auto s : layer_sizes)
      if (s == 0) throw ValidationError("MlpSpec layer sizes must be positive");
    if (layer_sizes.back() < 2) throw ValidationError("MlpSpec output dimension must be >= 2");
  }

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }

  // Weights + biases over consecutive layer pairs.
  std::size_t num_params() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
      total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
    return total;
  }

  // Offset of layer l's weight block; its bias follows the out*in weights.
  std::size_t layer_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += (layer_sizes[i] + 1) * layer_sizes[i + 1];
    return off;
  }

  bool operator==(const MlpSpec&) const = default;
};

// Flat parameter vector. Layer l stores W (out x in, row-major) then b (out).
struct ParamVector {
  MlpSpec spec;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(MlpSpec s) : spec(std::move(s)), values(spec.num_params(), 0.0) {}
  ParamVector(MlpSpec s, std::vector<double> v) : spec(std::move(s)), values(std::move(v)) {
    if (values.size() != spec.num_params())
      throw ValidationError("ParamVector length " + std::to_string(values.size()) +
                            " does not match spec (" + std::to_string(spec.num_params()) + ")");
  }

  std::size_t size() const { return values.size(); }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
  }

  Eigen::Map<const Matrix> weights(std::size_t l) const {
    return {values.data() + spec.layer_offset(l), Eigen::Index(spec.layer_sizes[l + 1]),
            Eigen::Index(spec.layer_sizes[l])};
  }
  Eigen::Map<Matrix> weights(std::size_t l) {
    return {values.data() + spec.layer_offset(l), Eigen::Index(spec.layer_sizes[l + 1]),
            Eigen::Index(spec.layer_sizes[l])};
  }
  Eigen::Map<const Eigen::RowVectorXd> bias(std::size_t l) const {
    return {values.data() + spec.layer_offset(l) + spec.layer_sizes[l] * spec.layer_sizes[l + 1],
            Eigen::Index(spec.layer_sizes[l + 1])};
  }
  Eigen::Map<Eigen::RowVectorXd> bias(std::size_t l) {
    return {values.data() + spec.layer_offset(l) + spec.layer_sizes[l] * spec.layer_sizes[l + 1],
            Eigen::Index(spec.layer_sizes[l + 1])};
  }

  bool operator==(const ParamVector&) const = default;
};

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  if (a.values.size() != b.values.size()) throw ValidationError("parameter shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p(spec);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double fan_in = double(spec.layer_sizes[l]);
    const double fan_out = double(spec.layer_sizes[l + 1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = p.weights(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  }
  return p;
}

// Non-owning view of a weighted sample set. `features` must bind to an
// lvalue that outlives the batch.
struct WeightedBatch {
  Eigen::Ref<const Matrix> features;
  std::span<const int> targets;
  std::span<const double> weights;

  void validate() const {
    if (features.rows() == 0) throw ValidationError("empty batch");
    if (std::size_t(features.rows()) != targets.size() || targets.size() != weights.size())
      throw ValidationError("batch row counts disagree");
    for (double w : weights)
      if (!std::isfinite(w) || w < 0.0) throw ValidationError("negative or non-finite sample weight");
  }
};

namespace detail {

inline void apply_activation(Matrix& z, Activation a) {
  if (a == Activation::ReLU)
    z = z.cwiseMax(0.0);
  else
    z = z.array().tanh().matrix();
}

inline void softmax_rows(Matrix& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
  }
}

inline void check_input(const MlpSpec& spec, Eigen::Index cols) {
  if (std::size_t(cols) != spec.input_dim())
    throw ValidationError("feature width " + std::to_string(cols) + " does not match model input " +
                          std::to_string(spec.input_dim()));
}

// acts[0] is the input; acts[l+1] is the post-activation output of layer l
// and the final entry holds softmax probabilities.
inline std::vector<Matrix> forward_all(const ParamVector& params, const Eigen::Ref<const Matrix>& x) {
  const auto& spec = params.spec;
  check_input(spec, x.cols());
  std::vector<Matrix> acts;
  acts.reserve(spec.num_layers() + 1);
  acts.emplace_back(x);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Matrix z = acts.back() * params.weights(l).transpose();
    z.rowwise() += params.bias(l);
    if (l + 1 < spec.num_layers())
      apply_activation(z, spec.hidden_activation);
    else
      softmax_rows(z);
    acts.push_back(std::move(z));
  }
  return acts;
}

inline double sample_loss(const Eigen::Ref<const Eigen::RowVectorXd>& p, int y, LossKind kind) {
  if (kind == LossKind::BrierScore) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) {
      const double d = p(c) - (c == y ? 1.0 : 0.0);
      s += d * d;
    }
    return s;
  }
  return -std::log(std::max(p(y), kProbabilityClamp));
}

inline void check_targets(std::span<const int> targets, std::size_t classes) {
  for (int y : targets)
    if (y < 0 || std::size_t(y) >= classes)
      throw ValidationError("target " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace detail

// Row-wise class probabilities.
inline Matrix forward(const ParamVector& params, const Eigen::Ref<const Matrix>& features) {
  return std::move(detail::forward_all(params, features).back());
}

// Per-sample unweighted losses plus the gradient of
//   (1/divisor) * sum_i weights_i * loss_i
// where divisor defaults to sum_i weights_i.
struct BackpropResult {
  double loss = 0.0;
  std::vector<double> sample_losses;
  std::vector<int> predictions;
  ParamVector gradient;
};

inline double resolve_divisor(const WeightedBatch& batch, std::optional<double> divisor) {
  double d = 0.0;
  if (divisor) {
    d = *divisor;
  } else {
    for (double w : batch.weights) d += w;
  }
  if (!(d > 0.0) || !std::isfinite(d)) throw ValidationError("loss divisor must be positive and finite");
  return d;
}

inline BackpropResult backprop(const ParamVector& params, const WeightedBatch& batch, LossKind kind,
                               std::optional<double> divisor = std::nullopt, bool want_gradient = true) {
  batch.validate();
  const auto& spec = params.spec;
  detail::check_targets(batch.targets, spec.num_classes());
  const double denom = resolve_divisor(batch, divisor);
  auto acts = detail::forward_all(params, batch.features);
  const Matrix& prob = acts.back();
  const Eigen::Index n = prob.rows();
  const Eigen::Index classes = prob.cols();

  BackpropResult out;
  out.sample_losses.resize(std::size_t(n));
  out.predictions.resize(std::size_t(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double li = detail::sample_loss(prob.row(i), batch.targets[i], kind);
    out.sample_losses[i] = li;
    Eigen::Index arg = 0;
    prob.row(i).maxCoeff(&arg);
    out.predictions[i] = int(arg);
    total += batch.weights[i] * li;
  }
  out.loss = total / denom;
  if (!want_gradient) return out;

  // dL/dz at the softmax input, scaled by weight/divisor per row.
  Matrix delta(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = batch.weights[i] / denom;
    const int y = batch.targets[i];
    auto p = prob.row(i);
    if (kind == LossKind::BrierScore) {
      // g = 2(p - e_y); dz_j = p_j (g_j - <p, g>)
      Eigen::RowVectorXd g = 2.0 * p;
      g(y) -= 2.0;
      const double pg = p.dot(g);
      delta.row(i) = scale * (p.array() * (g.array() - pg)).matrix();
    } else {
      if (p(y) < kProbabilityClamp) {
        delta.row(i).setZero();
      } else {
        delta.row(i) = scale * p;
        delta(i, y) -= scale;
      }
    }
  }

  out.gradient = ParamVector(spec);
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    out.gradient.weights(l).noalias() = delta.transpose() * acts[l];
    out.gradient.bias(l) = delta.colwise().sum();
    if (l == 0) break;
    Matrix back = delta * params.weights(l);
    const Matrix& h = acts[l];
    if (spec.hidden_activation == Activation::ReLU)
      back = back.cwiseProduct((h.array() > 0.0).cast<double>().matrix());
    else
      back = back.cwiseProduct((1.0 - h.array().square()).matrix());
    delta = std::move(back);
  }
  return out;
}

// (1/divisor) * sum_i w_i * loss(h(x_i), y_i); divisor defaults to sum_i w_i.
inline double weighted_loss(const ParamVector& params, const WeightedBatch& batch, LossKind kind,
                            std::optional<double> divisor = std::nullopt) {
  return backprop(params, batch, kind, divisor, false).loss;
}

inline ParamVector loss_gradient(const ParamVector& params, const WeightedBatch& batch, LossKind kind,
                                 std::optional<double> divisor = std::nullopt) {
  return std::move(backprop(params, batch, kind, divisor, true).gradient);
}

// params - step * direction, in place.
inline void descend(ParamVector& params, const ParamVector& direction, double step) {
  for (std::size_t i = 0; i < params.values.size(); ++i) params.values[i] -= step * direction.values[i];
}

}  // namespace fedmm
