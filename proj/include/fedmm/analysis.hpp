#pragma once

// Client-vs-group fairness feasibility, run-to-run comparison and report
// files.

#include "fedmm/algorithms.hpp"
#include "fedmm/common.hpp"
#include "fedmm/data.hpp"
#include "fedmm/simplex.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace fedmm {

struct FeasibilityReport {
  bool feasible = false;
  SimplexWeights lambda;
  // min over lambda in the client simplex of ||P_A lambda - mu*||_2
  double residual = 0.0;
  double tolerance = 0.0;
  std::size_t iterations = 0;
  // Residual after each iteration (non-increasing).
  std::vector<double> residual_history;
};

inline constexpr double kFeasibilityTolerance = 1e-6;
inline constexpr double kStationarity = 1e-13;

// mu = P_A lambda. Column-stochastic P_A keeps the result on the group simplex.
inline SimplexWeights induced_group_weights(const GroupPriorMatrix& pa, const SimplexWeights& lambda) {
  if (pa.num_clients() != lambda.dimension())
    throw ValidationError("induced_group_weights: P_A has " + std::to_string(pa.num_clients()) + " columns, lambda has " +
                          std::to_string(lambda.dimension()) + " entries");
  std::vector<double> mu(pa.num_groups(), 0.0);
  for (std::size_t a = 0; a < mu.size(); ++a)
    for (std::size_t k = 0; k < lambda.dimension(); ++k) mu[a] += pa.entries(Eigen::Index(a), Eigen::Index(k)) * lambda[k];
  return SimplexWeights(std::move(mu));
}

// Whether mu* lies in P_A * simplex. Minimizes ||P_A lambda - mu*||^2 over the
// client simplex by accelerated projected gradient descent (step 1/L,
// L = 2 ||P_A||_2^2), restarting whenever the residual would rise, so accepted
// residuals never increase. Plain projected descent stalls when P_A is close
// to singular.
// Stops at gradient-mapping norm kStationarity or after max_iters; the
// gradient shrinks with sigma_min(P_A), so 1e-10 stopped at residuals near
// 1e-8 on such matrices.
inline FeasibilityReport lemma1_feasibility(const GroupPriorMatrix& pa, const SimplexWeights& mu_star,
                                            double tol = kFeasibilityTolerance, std::size_t max_iters = 100000) {
  if (pa.num_groups() != mu_star.dimension())
    throw ValidationError("lemma1_feasibility: P_A has " + std::to_string(pa.num_groups()) + " rows, mu* has " +
                          std::to_string(mu_star.dimension()) + " entries");
  if (pa.num_clients() == 0) throw ValidationError("lemma1_feasibility: P_A has no columns");
  const Matrix& P = pa.entries;
  const Vector target = Eigen::Map<const Vector>(mu_star.values().data(), Eigen::Index(mu_star.dimension()));
  const double spectral = Eigen::JacobiSVD<Matrix>(P).singularValues()(0);
  const double lipschitz = std::max(2.0 * spectral * spectral, 1e-300);
  const double step = 1.0 / lipschitz;

  const std::size_t K = pa.num_clients();
  auto residual_of = [&](const Vector& l) { return (P * l - target).norm(); };
  std::vector<double> buf(K);
  auto gradient_step = [&](const Vector& y) {
    const Vector grad = 2.0 * P.transpose() * (P * y - target);
    for (std::size_t k = 0; k < K; ++k) buf[k] = y(Eigen::Index(k)) - step * grad(Eigen::Index(k));
    const auto projected = project_simplex(buf);
    return Vector(Eigen::Map<const Vector>(projected.values().data(), Eigen::Index(K)));
  };

  Vector x = Vector::Constant(Eigen::Index(K), 1.0 / double(K));
  Vector y = x;
  double t = 1.0;
  FeasibilityReport rep;
  rep.tolerance = tol;
  double res = residual_of(x);
  rep.residual_history.push_back(res);
  for (std::size_t it = 0; it < max_iters && res > 0.0; ++it) {
    const Vector z = gradient_step(y);
    const double mapping_norm = lipschitz * (y - z).norm();
    const double rz = residual_of(z);
    if (rz <= res) {
      const Vector prev = x;
      x = z;
      res = rz;
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x + ((t - 1.0) / t_next) * (x - prev);
      t = t_next;
    } else {
      // Momentum overshot: restart from the best point.
      y = x;
      t = 1.0;
    }
    rep.residual_history.push_back(res);
    rep.iterations = it + 1;
    if (mapping_norm <= kStationarity) break;
  }
  std::vector<double> lv(x.data(), x.data() + x.size());
  rep.lambda = project_simplex(lv);
  rep.residual = res;
  rep.feasible = res <= tol;
  return rep;
}

struct RunComparison {
  std::vector<double> param_diff;
  std::vector<double> weight_diff;
  double max_param_diff = 0.0;
  double max_weight_diff = 0.0;
};

// Per-round max-abs differences of theta^t and of the group weights.
inline RunComparison compare_runs(const TrainingTrace& a, const TrainingTrace& b) {
  if (a.rounds.size() != b.rounds.size())
    throw ValidationError("compare_runs: round counts differ (" + std::to_string(a.rounds.size()) + " vs " +
                          std::to_string(b.rounds.size()) + ")");
  RunComparison c;
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    const auto& ra = a.rounds[t];
    const auto& rb = b.rounds[t];
    if (!ra.params || !rb.params) throw ValidationError("compare_runs: traces were recorded without parameters");
    if (ra.params->values.size() != rb.params->values.size() || ra.group_weights.size() != rb.group_weights.size())
      throw ValidationError("compare_runs: shape mismatch at round " + std::to_string(ra.round));
    const double dp = max_abs_diff(*ra.params, *rb.params);
    double dw = 0.0;
    for (std::size_t i = 0; i < ra.group_weights.size(); ++i)
      dw = std::max(dw, std::abs(ra.group_weights[i] - rb.group_weights[i]));
    c.param_diff.push_back(dp);
    c.weight_diff.push_back(dw);
    c.max_param_diff = std::max(c.max_param_diff, dp);
    c.max_weight_diff = std::max(c.max_weight_diff, dw);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Reports
//
// metrics.csv, one row per round:
//   round,risk_g0..risk_g{A-1},weight_g0..weight_g{A-1},worst_risk,best_risk,avg_risk
// avg_risk weights the training group risks by the group prior. Reals are
// printed with 17 significant digits.
//
// summary.json: {"schema": "fedmm-summary/1", "config": ..., "algorithm",
// "output_mode", "rounds", "final_group_weights", "final_adversary_weights",
// "train": {...}, "test": {...}, "notes": [...], "wall_clock_seconds"}.

struct RunReport {
  nlohmann::ordered_json config;
  std::vector<double> group_prior;
  std::optional<GroupMetrics> train;
  std::optional<GroupMetrics> test;
  std::vector<std::string> notes;
  double wall_clock_seconds = 0.0;
};

inline nlohmann::ordered_json to_json(const GroupMetrics& m) {
  nlohmann::ordered_json j;
  j["risk"] = m.risk;
  j["accuracy"] = m.accuracy;
  j["counts"] = m.counts;
  j["worst_risk"] = m.worst_risk;
  j["best_risk"] = m.best_risk;
  j["average_risk"] = m.average_risk;
  j["worst_accuracy"] = m.worst_accuracy;
  j["best_accuracy"] = m.best_accuracy;
  j["average_accuracy"] = m.average_accuracy;
  j["worst_group"] = m.worst_group;
  j["best_group"] = m.best_group;
  return j;
}

inline std::string metrics_csv(const TrainingTrace& trace, std::span<const double> group_prior) {
  std::ostringstream out;
  out << std::setprecision(17);
  const std::size_t A = trace.rounds.empty() ? group_prior.size() : trace.rounds.front().group_risks.size();
  out << "round";
  for (std::size_t a = 0; a < A; ++a) out << ",risk_g" << a;
  for (std::size_t a = 0; a < A; ++a) out << ",weight_g" << a;
  out << ",worst_risk,best_risk,avg_risk\n";
  for (const auto& r : trace.rounds) {
    out << r.round;
    for (double v : r.group_risks) out << ',' << v;
    for (double v : r.group_weights) out << ',' << v;
    double avg = 0.0;
    for (std::size_t a = 0; a < A && a < group_prior.size(); ++a) avg += group_prior[a] * r.group_risks[a];
    out << ',' << *std::max_element(r.group_risks.begin(), r.group_risks.end()) << ','
        << *std::min_element(r.group_risks.begin(), r.group_risks.end()) << ',' << avg << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json summary_json(const TrainingTrace& trace, const RunReport& report) {
  nlohmann::ordered_json j;
  j["schema"] = "fedmm-summary/1";
  j["config"] = report.config;
  j["algorithm"] = std::string(to_string(trace.algorithm));
  j["output_mode"] = std::string(to_string(trace.output_mode));
  j["rounds"] = trace.rounds.size();
  j["group_prior"] = report.group_prior;
  if (!trace.rounds.empty()) {
    j["final_group_weights"] = trace.rounds.back().group_weights;
    j["final_adversary_weights"] = trace.rounds.back().adversary_weights;
  }
  if (report.train) j["train"] = to_json(*report.train);
  if (report.test) j["test"] = to_json(*report.test);
  j["notes"] = report.notes;
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  return j;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace detail

struct EmittedFiles {
  std::filesystem::path metrics;
  std::filesystem::path summary;
};

inline EmittedFiles emit_reports(const TrainingTrace& trace, const RunReport& report,
                                 const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  EmittedFiles files{out_dir / "metrics.csv", out_dir / "summary.json"};
  detail::write_file(files.metrics, metrics_csv(trace, report.group_prior));
  detail::write_file(files.summary, summary_json(trace, report).dump(2) + "\n");
  return files;
}

}  // namespace fedmm
