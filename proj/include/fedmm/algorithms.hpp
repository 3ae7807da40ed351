#pragma once

// Training procedures: FedMinMax, its centralized counterpart, the
// per-(group, client) LocalFedMinMax variant, client-level minimax (AFL)
// and FedAvg, plus per-group / per-client evaluation.

#include "fedmm/common.hpp"
#include "fedmm/data.hpp"
#include "fedmm/model.hpp"
#include "fedmm/parallel.hpp"
#include "fedmm/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedmm {

enum class Algorithm { FedMinMax, CentralizedMinMax, LocalFedMinMax, AFL, FedAvg };
enum class OutputMode { IterateAverage, FinalIterate };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedMinMax: return "fedminmax";
    case Algorithm::CentralizedMinMax: return "centralized_minmax";
    case Algorithm::LocalFedMinMax: return "localfedminmax";
    case Algorithm::AFL: return "afl";
    case Algorithm::FedAvg: return "fedavg";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "fedminmax") return Algorithm::FedMinMax;
  if (s == "centralized_minmax" || s == "centralized") return Algorithm::CentralizedMinMax;
  if (s == "localfedminmax") return Algorithm::LocalFedMinMax;
  if (s == "afl") return Algorithm::AFL;
  if (s == "fedavg") return Algorithm::FedAvg;
  throw ValidationError("unknown algorithm '" + std::string(s) +
                        "' (expected fedminmax|centralized_minmax|localfedminmax|afl|fedavg)");
}

inline std::string_view to_string(OutputMode m) {
  return m == OutputMode::IterateAverage ? "iterate_average" : "final_iterate";
}

inline OutputMode parse_output_mode(std::string_view s) {
  if (s == "iterate_average") return OutputMode::IterateAverage;
  if (s == "final_iterate") return OutputMode::FinalIterate;
  throw ValidationError("unknown output mode '" + std::string(s) + "' (expected iterate_average|final_iterate)");
}

struct AlgorithmConfig {
  Algorithm algorithm = Algorithm::FedMinMax;
  MlpSpec model;
  std::size_t rounds = 2000;
  double lr_model = 0.1;
  // eta_mu for the group adversaries, eta_lambda for AFL.
  double lr_adversary = 0.1;
  double simplex_floor = 0.0;
  LossKind loss = LossKind::BrierScore;
  // Unset: iterate average for the minimax procedures, final iterate for FedAvg.
  std::optional<OutputMode> output_mode;
  std::size_t local_epochs = 15;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  // Keep theta^t for every round (needed by compare_runs).
  bool record_params = false;
  // Evaluate on the test set every k rounds; 0 evaluates only the output model.
  std::size_t eval_every = 0;
  std::size_t threads = 1;

  OutputMode resolved_output_mode() const {
    if (output_mode) return *output_mode;
    return algorithm == Algorithm::FedAvg ? OutputMode::FinalIterate : OutputMode::IterateAverage;
  }

  void validate() const {
    model.validate();
    if (rounds == 0) throw ValidationError("rounds must be positive");
    if (!(lr_model > 0.0) || !std::isfinite(lr_model)) throw ValidationError("lr_model must be positive");
    if (algorithm != Algorithm::FedAvg && (!(lr_adversary >= 0.0) || !std::isfinite(lr_adversary)))
      throw ValidationError("lr_adversary must be non-negative for minimax algorithms");
    if (!(simplex_floor >= 0.0)) throw ValidationError("simplex_floor must be non-negative");
    if (algorithm == Algorithm::FedAvg && (local_epochs == 0 || batch_size == 0))
      throw ValidationError("fedavg needs positive local_epochs and batch_size");
  }
};

// What client k returns to the server after one round.
struct ClientReport {
  std::size_t client_id = 0;
  ParamVector updated_params;
  // r_{a,k}(theta^{t-1}); nullopt where the client holds no group-a samples.
  std::vector<std::optional<double>> group_risks;
  std::vector<std::size_t> group_counts;
  // r_k(theta^{t-1}, w), the importance weighted local objective.
  double weighted_risk = 0.0;
};

struct GroupMetrics {
  std::vector<double> risk;
  std::vector<double> accuracy;
  std::vector<std::size_t> counts;
  double worst_risk = 0.0;
  double best_risk = 0.0;
  double average_risk = 0.0;
  double worst_accuracy = 0.0;
  double best_accuracy = 0.0;
  double average_accuracy = 0.0;
  std::size_t worst_group = 0;
  std::size_t best_group = 0;
};

struct ClientMetrics {
  std::size_t client_id = 0;
  std::size_t samples = 0;
  double risk = 0.0;
  double accuracy = 0.0;
};

struct Evaluation {
  GroupMetrics groups;
  std::vector<ClientMetrics> clients;
};

struct RoundRecord {
  std::size_t round = 0;
  // mu^t over groups, lambda^t over clients, or mu^t over (group, client)
  // cells; empty for FedAvg.
  std::vector<double> adversary_weights;
  // Weight the round's objective places on each group.
  std::vector<double> group_weights;
  // r_a(theta^{t-1}) on the training data.
  std::vector<double> group_risks;
  std::optional<ParamVector> params;
  std::optional<GroupMetrics> test;
};

struct TrainingTrace {
  Algorithm algorithm = Algorithm::FedMinMax;
  OutputMode output_mode = OutputMode::IterateAverage;
  ParamVector initial_params;
  std::vector<RoundRecord> rounds;
  ParamVector last_iterate;
  ParamVector final_params;
  // LocalFedMinMax: (group, client) label of each adversary coordinate.
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  std::optional<GroupMetrics> final_test;
};

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

struct GroupSums {
  std::vector<double> loss;
  std::vector<double> correct;
  std::vector<std::size_t> count;
};

inline GroupSums group_sums(const ParamVector& params, const GroupedDataset& data, LossKind loss) {
  GroupSums s{std::vector<double>(data.num_groups, 0.0), std::vector<double>(data.num_groups, 0.0),
              std::vector<std::size_t>(data.num_groups, 0)};
  if (data.empty()) return s;
  const std::vector<double> ones(data.size(), 1.0);
  const auto r = backprop(params, {data.features, data.targets, ones}, loss, std::nullopt, false);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto a = std::size_t(data.groups[i]);
    s.loss[a] += r.sample_losses[i];
    s.correct[a] += r.predictions[i] == data.targets[i] ? 1.0 : 0.0;
    ++s.count[a];
  }
  return s;
}

inline GroupMetrics summarize(std::vector<double> risk, std::vector<double> accuracy,
                              std::vector<std::size_t> counts) {
  GroupMetrics m;
  m.risk = std::move(risk);
  m.accuracy = std::move(accuracy);
  m.counts = std::move(counts);
  double total = 0.0;
  for (auto c : m.counts) total += double(c);
  m.worst_group = std::size_t(std::max_element(m.risk.begin(), m.risk.end()) - m.risk.begin());
  m.best_group = std::size_t(std::min_element(m.risk.begin(), m.risk.end()) - m.risk.begin());
  m.worst_risk = m.risk[m.worst_group];
  m.best_risk = m.risk[m.best_group];
  m.worst_accuracy = *std::min_element(m.accuracy.begin(), m.accuracy.end());
  m.best_accuracy = *std::max_element(m.accuracy.begin(), m.accuracy.end());
  for (std::size_t a = 0; a < m.risk.size(); ++a) {
    m.average_risk += m.risk[a] * double(m.counts[a]) / total;
    m.average_accuracy += m.accuracy[a] * double(m.counts[a]) / total;
  }
  return m;
}

}  // namespace detail

// Per-group risk and accuracy; summaries average with weights n_a / n.
inline GroupMetrics evaluate(const ParamVector& params, const GroupedDataset& data, LossKind loss) {
  if (data.num_groups == 0) throw ValidationError("evaluate: dataset has no groups");
  const auto s = detail::group_sums(params, data, loss);
  std::vector<double> risk(data.num_groups), acc(data.num_groups);
  for (std::size_t a = 0; a < data.num_groups; ++a) {
    if (s.count[a] == 0) throw ValidationError("evaluate: group " + std::to_string(a) + " is empty");
    risk[a] = s.loss[a] / double(s.count[a]);
    acc[a] = s.correct[a] / double(s.count[a]);
  }
  return detail::summarize(std::move(risk), std::move(acc), s.count);
}

// Per-client metrics, and group metrics assembled from the per-cell risks
// r_a = sum_k (n_{a,k} / n_a) r_{a,k}.
inline Evaluation evaluate(const ParamVector& params, std::span<const ClientShard> shards, LossKind loss) {
  if (shards.empty()) throw ValidationError("evaluate: no shards");
  const std::size_t A = shards.front().data.num_groups;
  std::vector<detail::GroupSums> per_client;
  per_client.reserve(shards.size());
  for (const auto& s : shards) per_client.push_back(detail::group_sums(params, s.data, loss));

  Evaluation ev;
  const auto n_a = total_group_counts(shards);
  std::vector<double> risk(A, 0.0), acc(A, 0.0);
  for (std::size_t a = 0; a < A; ++a) {
    if (n_a[a] == 0) throw ValidationError("evaluate: group " + std::to_string(a) + " is empty");
    for (std::size_t k = 0; k < shards.size(); ++k) {
      const auto n_ak = per_client[k].count[a];
      if (n_ak == 0) continue;
      const double r_ak = per_client[k].loss[a] / double(n_ak);
      const double acc_ak = per_client[k].correct[a] / double(n_ak);
      risk[a] += double(n_ak) / double(n_a[a]) * r_ak;
      acc[a] += double(n_ak) / double(n_a[a]) * acc_ak;
    }
  }
  ev.groups = detail::summarize(std::move(risk), std::move(acc), n_a);
  for (std::size_t k = 0; k < shards.size(); ++k) {
    ClientMetrics c;
    c.client_id = shards[k].client_id;
    c.samples = shards[k].size();
    double l = 0.0, corr = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      l += per_client[k].loss[a];
      corr += per_client[k].correct[a];
    }
    if (c.samples > 0) {
      c.risk = l / double(c.samples);
      c.accuracy = corr / double(c.samples);
    }
    ev.clients.push_back(c);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Client step

// One full-batch gradient step on
//   r_k(theta, w) = sum_a (n_{a,k} / n_k) w_a r_{a,k}(theta)
//                 = (1 / n_k) sum_i w_{a_i} loss_i,
// reporting the per-group risks at the pre-step parameters.
inline ClientReport client_local_step(const ClientShard& shard, const ParamVector& params,
                                      const ImportanceWeights& w, double lr, LossKind loss) {
  const auto& d = shard.data;
  if (d.empty()) throw ValidationError("client " + std::to_string(shard.client_id) + " has no samples");
  if (w.size() != d.num_groups)
    throw ValidationError("client " + std::to_string(shard.client_id) + ": importance weights have " +
                          std::to_string(w.size()) + " entries for " + std::to_string(d.num_groups) + " groups");
  std::vector<double> sample_w(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) sample_w[i] = w[std::size_t(d.groups[i])];
  auto r = backprop(params, {d.features, d.targets, sample_w}, loss, double(d.size()), true);

  ClientReport rep;
  rep.client_id = shard.client_id;
  rep.weighted_risk = r.loss;
  rep.group_counts = d.group_counts;
  std::vector<double> sums(d.num_groups, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) sums[std::size_t(d.groups[i])] += r.sample_losses[i];
  rep.group_risks.resize(d.num_groups);
  for (std::size_t a = 0; a < d.num_groups; ++a)
    if (d.group_counts[a] > 0) rep.group_risks[a] = sums[a] / double(d.group_counts[a]);
  rep.updated_params = params;
  descend(rep.updated_params, r.gradient, lr);
  return rep;
}

namespace detail {

inline void check_report(const ClientReport& rep, std::size_t round) {
  auto fail = [&](const std::string& what) {
    throw NumericError("round " + std::to_string(round) + ", client " + std::to_string(rep.client_id) + ": " + what);
  };
  for (std::size_t a = 0; a < rep.group_risks.size(); ++a)
    if (rep.group_risks[a] && !std::isfinite(*rep.group_risks[a]))
      fail("non-finite risk for group " + std::to_string(a));
  if (!std::isfinite(rep.weighted_risk)) fail("non-finite local objective");
  if (!rep.updated_params.all_finite()) fail("non-finite parameters");
}

inline void check_shards(std::span<const ClientShard> shards) {
  if (shards.empty()) throw ValidationError("no client shards");
  const auto counts = total_group_counts(shards);
  for (std::size_t a = 0; a < counts.size(); ++a)
    if (counts[a] == 0) throw ValidationError("group " + std::to_string(a) + " has no samples in the federation");
  for (const auto& s : shards)
    if (s.size() == 0) throw ValidationError("client " + std::to_string(s.client_id) + " has no samples");
}

inline MlpSpec checked_model(const AlgorithmConfig& cfg, const GroupedDataset& like) {
  cfg.validate();
  if (cfg.model.input_dim() != like.dims())
    throw ValidationError("model input " + std::to_string(cfg.model.input_dim()) + " != feature width " +
                          std::to_string(like.dims()));
  if (cfg.model.num_classes() != like.num_classes)
    throw ValidationError("model output " + std::to_string(cfg.model.num_classes()) + " != classes " +
                          std::to_string(like.num_classes));
  return cfg.model;
}

// Running state shared by the loops: iterate sum, trace bookkeeping.
class TraceBuilder {
 public:
  TraceBuilder(const AlgorithmConfig& cfg, ParamVector init, const GroupedDataset* test)
      : cfg_(cfg), test_(test), sum_(init.spec) {
    trace_.algorithm = cfg.algorithm;
    trace_.output_mode = cfg.resolved_output_mode();
    trace_.initial_params = std::move(init);
    trace_.rounds.reserve(cfg.rounds);
  }

  void record(std::size_t t, const ParamVector& theta, std::vector<double> adversary,
              std::vector<double> group_weights, std::vector<double> group_risks) {
    for (std::size_t i = 0; i < sum_.values.size(); ++i) sum_.values[i] += theta.values[i];
    RoundRecord r;
    r.round = t;
    r.adversary_weights = std::move(adversary);
    r.group_weights = std::move(group_weights);
    r.group_risks = std::move(group_risks);
    if (cfg_.record_params) r.params = theta;
    if (test_ && cfg_.eval_every > 0 && t % cfg_.eval_every == 0) r.test = evaluate(theta, *test_, cfg_.loss);
    trace_.rounds.push_back(std::move(r));
  }

  TrainingTrace finish(ParamVector last) {
    trace_.last_iterate = std::move(last);
    if (trace_.output_mode == OutputMode::IterateAverage) {
      trace_.final_params = sum_;
      for (double& v : trace_.final_params.values) v /= double(trace_.rounds.size());
    } else {
      trace_.final_params = trace_.last_iterate;
    }
    if (test_ && !test_->empty()) trace_.final_test = evaluate(trace_.final_params, *test_, cfg_.loss);
    return std::move(trace_);
  }

 private:
  const AlgorithmConfig& cfg_;
  const GroupedDataset* test_;
  ParamVector sum_;
  TrainingTrace trace_;
};

// Adversary coordinates ("cells") over (group, client) pairs. FedMinMax maps
// every (a, k) to cell a; LocalFedMinMax gives each nonempty pair its own.
struct CellLayout {
  std::size_t num_cells = 0;
  std::vector<std::vector<int>> cell_of;  // [client][group], -1 for empty pairs
  std::vector<std::size_t> cell_group;
  std::vector<std::pair<std::size_t, std::size_t>> labels;
};

inline CellLayout group_cells(std::span<const ClientShard> shards) {
  CellLayout c;
  const std::size_t A = shards.front().data.num_groups;
  c.num_cells = A;
  for (std::size_t a = 0; a < A; ++a) c.cell_group.push_back(a);
  for (const auto& s : shards) {
    std::vector<int> row(A);
    for (std::size_t a = 0; a < A; ++a) row[a] = s.per_group_counts()[a] > 0 ? int(a) : -1;
    c.cell_of.push_back(std::move(row));
  }
  return c;
}

// Cells in client-major order: (a0,k0), (a1,k0), ..., (a0,k1), ...
inline CellLayout local_cells(std::span<const ClientShard> shards) {
  CellLayout c;
  const std::size_t A = shards.front().data.num_groups;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    std::vector<int> row(A, -1);
    for (std::size_t a = 0; a < A; ++a) {
      if (shards[k].per_group_counts()[a] == 0) continue;
      row[a] = int(c.num_cells++);
      c.cell_group.push_back(a);
      c.labels.emplace_back(a, k);
    }
    c.cell_of.push_back(std::move(row));
  }
  return c;
}

// The federated minimax loop over an arbitrary cell layout.
inline TrainingTrace run_cell_minmax(std::span<const ClientShard> shards, const GroupedDataset* test,
                                     const AlgorithmConfig& cfg, const CellLayout& cells) {
  check_shards(shards);
  const auto spec = checked_model(cfg, shards.front().data);
  const std::size_t A = shards.front().data.num_groups;
  const std::size_t K = shards.size();
  const auto n_a = total_group_counts(shards);
  std::size_t n = 0;
  for (const auto& s : shards) n += s.size();

  std::vector<double> cell_count(cells.num_cells, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t a = 0; a < A; ++a)
      if (cells.cell_of[k][a] >= 0) cell_count[std::size_t(cells.cell_of[k][a])] += double(shards[k].per_group_counts()[a]);
  std::vector<double> rho_v(cells.num_cells);
  for (std::size_t c = 0; c < cells.num_cells; ++c) rho_v[c] = cell_count[c] / double(n);
  const SimplexWeights rho(rho_v);
  SimplexWeights mu = rho;

  std::vector<double> agg_w(K);
  for (std::size_t k = 0; k < K; ++k) agg_w[k] = double(shards[k].size()) / double(n);

  ParamVector theta = init_params(spec, mix_seed(cfg.seed, seed_stream::kInit));
  TraceBuilder tb(cfg, theta, test);
  std::vector<ClientReport> reports(K);
  std::vector<ParamVector> updates(K);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const auto w_cells = importance_weights(mu, rho);
    parallel_for(K, cfg.threads, [&](std::size_t k) {
      ImportanceWeights w;
      w.values.assign(A, 0.0);
      for (std::size_t a = 0; a < A; ++a)
        if (cells.cell_of[k][a] >= 0) w.values[a] = w_cells[std::size_t(cells.cell_of[k][a])];
      reports[k] = client_local_step(shards[k], theta, w, cfg.lr_model, cfg.loss);
    });
    for (std::size_t k = 0; k < K; ++k) {
      check_report(reports[k], t);
      updates[k] = std::move(reports[k].updated_params);
    }
    theta = aggregate_params(updates, agg_w);

    // Server-side risks at theta^{t-1}, reduced in ascending client order.
    std::vector<double> cell_risk(cells.num_cells, 0.0), group_risk(A, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t a = 0; a < A; ++a) {
        const auto& r = reports[k].group_risks[a];
        if (!r) continue;
        const double n_ak = double(reports[k].group_counts[a]);
        const auto c = std::size_t(cells.cell_of[k][a]);
        cell_risk[c] += n_ak / cell_count[c] * *r;
        group_risk[a] += n_ak / double(n_a[a]) * *r;
      }
    mu = pga_step(mu, cell_risk, cfg.lr_adversary, cfg.simplex_floor);

    std::vector<double> group_weights(A, 0.0);
    for (std::size_t c = 0; c < cells.num_cells; ++c) group_weights[cells.cell_group[c]] += mu[c];
    tb.record(t, theta, mu.values(), std::move(group_weights), std::move(group_risk));
  }
  auto trace = tb.finish(std::move(theta));
  trace.cells = cells.labels;
  return trace;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry points

inline TrainingTrace fedminmax_run(std::span<const ClientShard> shards, const GroupedDataset* test,
                                   const AlgorithmConfig& cfg) {
  if (shards.empty()) throw ValidationError("no client shards");
  return detail::run_cell_minmax(shards, test, cfg, detail::group_cells(shards));
}

inline TrainingTrace localfedminmax_run(std::span<const ClientShard> shards, const GroupedDataset* test,
                                        const AlgorithmConfig& cfg) {
  if (shards.empty()) throw ValidationError("no client shards");
  auto trace = detail::run_cell_minmax(shards, test, cfg, detail::local_cells(shards));
  trace.algorithm = Algorithm::LocalFedMinMax;
  return trace;
}

// Single-entity loop: a gradient step on sum_a mu_a r_a(theta) over the
// whole dataset, then projected ascent on mu.
inline TrainingTrace centralized_minmax_run(const GroupedDataset& data, const GroupedDataset* test,
                                            const AlgorithmConfig& cfg) {
  if (data.empty()) throw ValidationError("empty training set");
  const auto spec = detail::checked_model(cfg, data);
  const std::size_t A = data.num_groups;
  for (std::size_t a = 0; a < A; ++a)
    if (data.group_counts[a] == 0) throw ValidationError("group " + std::to_string(a) + " has no samples");
  const SimplexWeights rho = SimplexWeights::from_counts(std::span<const std::size_t>(data.group_counts));
  SimplexWeights mu = rho;

  ParamVector theta = init_params(spec, mix_seed(cfg.seed, seed_stream::kInit));
  detail::TraceBuilder tb(cfg, theta, test);
  std::vector<double> sample_w(data.size());
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto a = std::size_t(data.groups[i]);
      sample_w[i] = mu[a] / double(data.group_counts[a]);
    }
    auto r = backprop(theta, {data.features, data.targets, sample_w}, cfg.loss, 1.0, true);
    std::vector<double> group_risk(A, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) group_risk[std::size_t(data.groups[i])] += r.sample_losses[i];
    for (std::size_t a = 0; a < A; ++a) {
      group_risk[a] /= double(data.group_counts[a]);
      if (!std::isfinite(group_risk[a]))
        throw NumericError("round " + std::to_string(t) + ": non-finite risk for group " + std::to_string(a));
    }
    descend(theta, r.gradient, cfg.lr_model);
    if (!theta.all_finite()) throw NumericError("round " + std::to_string(t) + ": non-finite parameters");
    mu = pga_step(mu, group_risk, cfg.lr_adversary, cfg.simplex_floor);
    tb.record(t, theta, mu.values(), mu.values(), std::move(group_risk));
  }
  auto trace = tb.finish(std::move(theta));
  trace.algorithm = Algorithm::CentralizedMinMax;
  return trace;
}

// Client-level minimax: lambda^0 = {n_k / n}; clients take unweighted
// full-batch steps, the server combines them with lambda^{t-1} and moves
// lambda by projected ascent on the client risks.
inline TrainingTrace afl_run(std::span<const ClientShard> shards, const GroupedDataset* test,
                             const AlgorithmConfig& cfg) {
  detail::check_shards(shards);
  const auto spec = detail::checked_model(cfg, shards.front().data);
  const std::size_t A = shards.front().data.num_groups;
  const std::size_t K = shards.size();
  const auto n_a = total_group_counts(shards);
  std::vector<std::size_t> n_k(K);
  for (std::size_t k = 0; k < K; ++k) n_k[k] = shards[k].size();
  SimplexWeights lambda = SimplexWeights::from_counts(std::span<const std::size_t>(n_k));
  const ImportanceWeights ones{std::vector<double>(A, 1.0)};
  const auto pa = compute_pa_matrix(shards);

  ParamVector theta = init_params(spec, mix_seed(cfg.seed, seed_stream::kInit));
  detail::TraceBuilder tb(cfg, theta, test);
  std::vector<ClientReport> reports(K);
  std::vector<ParamVector> updates(K);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    parallel_for(K, cfg.threads, [&](std::size_t k) {
      reports[k] = client_local_step(shards[k], theta, ones, cfg.lr_model, cfg.loss);
    });
    std::vector<double> client_risk(K);
    std::vector<double> group_risk(A, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      detail::check_report(reports[k], t);
      updates[k] = std::move(reports[k].updated_params);
      client_risk[k] = reports[k].weighted_risk;
      for (std::size_t a = 0; a < A; ++a)
        if (reports[k].group_risks[a])
          group_risk[a] += double(reports[k].group_counts[a]) / double(n_a[a]) * *reports[k].group_risks[a];
    }
    theta = aggregate_params(updates, lambda.span());
    lambda = pga_step(lambda, client_risk, cfg.lr_adversary, cfg.simplex_floor);

    std::vector<double> induced(A, 0.0);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t k = 0; k < K; ++k) induced[a] += pa.entries(Eigen::Index(a), Eigen::Index(k)) * lambda[k];
    tb.record(t, theta, lambda.values(), std::move(induced), std::move(group_risk));
  }
  return tb.finish(std::move(theta));
}

namespace detail {

// E epochs of minibatch SGD on the shard's mean loss, reshuffled per epoch.
inline ParamVector fedavg_local(const ClientShard& shard, ParamVector theta, const AlgorithmConfig& cfg,
                                std::uint64_t stream_seed) {
  const auto& d = shard.data;
  std::mt19937_64 rng(stream_seed);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix xb;
  std::vector<int> yb;
  std::vector<double> ones;
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t m = std::min(cfg.batch_size, order.size() - start);
      xb.resize(Eigen::Index(m), d.features.cols());
      yb.resize(m);
      ones.assign(m, 1.0);
      for (std::size_t j = 0; j < m; ++j) {
        xb.row(Eigen::Index(j)) = d.features.row(Eigen::Index(order[start + j]));
        yb[j] = d.targets[order[start + j]];
      }
      const auto g = loss_gradient(theta, {xb, yb, ones}, cfg.loss, double(m));
      descend(theta, g, cfg.lr_model);
    }
  }
  return theta;
}

}  // namespace detail

inline TrainingTrace fedavg_run(std::span<const ClientShard> shards, const GroupedDataset* test,
                                const AlgorithmConfig& cfg) {
  detail::check_shards(shards);
  const auto spec = detail::checked_model(cfg, shards.front().data);
  const std::size_t A = shards.front().data.num_groups;
  const std::size_t K = shards.size();
  const auto n_a = total_group_counts(shards);
  std::vector<std::size_t> n_k(K);
  for (std::size_t k = 0; k < K; ++k) n_k[k] = shards[k].size();
  const SimplexWeights agg = SimplexWeights::from_counts(std::span<const std::size_t>(n_k));
  const SimplexWeights rho = SimplexWeights::from_counts(std::span<const std::size_t>(n_a));
  const std::uint64_t shuffle_root = mix_seed(cfg.seed, seed_stream::kShuffle);

  ParamVector theta = init_params(spec, mix_seed(cfg.seed, seed_stream::kInit));
  detail::TraceBuilder tb(cfg, theta, test);
  std::vector<ParamVector> updates(K);
  std::vector<detail::GroupSums> sums(K);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    parallel_for(K, cfg.threads, [&](std::size_t k) {
      sums[k] = detail::group_sums(theta, shards[k].data, cfg.loss);
      updates[k] = detail::fedavg_local(shards[k], theta, cfg, mix_seed(shuffle_root, (t - 1) * K + k));
    });
    std::vector<double> group_risk(A, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t a = 0; a < A; ++a) group_risk[a] += sums[k].loss[a] / double(n_a[a]);
      if (!updates[k].all_finite())
        throw NumericError("round " + std::to_string(t) + ", client " + std::to_string(shards[k].client_id) +
                           ": non-finite parameters");
    }
    for (std::size_t a = 0; a < A; ++a)
      if (!std::isfinite(group_risk[a]))
        throw NumericError("round " + std::to_string(t) + ": non-finite risk for group " + std::to_string(a));
    theta = aggregate_params(updates, agg.span());
    tb.record(t, theta, {}, rho.values(), std::move(group_risk));
  }
  return tb.finish(std::move(theta));
}

// Dispatch on cfg.algorithm. CentralizedMinMax trains on the union of shards.
inline TrainingTrace run_algorithm(std::span<const ClientShard> shards, const GroupedDataset* test,
                                   const AlgorithmConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::FedMinMax: return fedminmax_run(shards, test, cfg);
    case Algorithm::CentralizedMinMax: return centralized_minmax_run(union_of(shards), test, cfg);
    case Algorithm::LocalFedMinMax: return localfedminmax_run(shards, test, cfg);
    case Algorithm::AFL: return afl_run(shards, test, cfg);
    case Algorithm::FedAvg: return fedavg_run(shards, test, cfg);
  }
  throw ValidationError("unknown algorithm");
}

}  // namespace fedmm
