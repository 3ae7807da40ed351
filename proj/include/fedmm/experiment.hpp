#pragma once

// Config-driven experiment pipeline behind the command line tool:
// generate/load -> split -> partition -> train -> evaluate -> emit.
//
// Config schema (JSON, "version": 1). Unknown keys are rejected.
//
//   {
//     "version": 1,
//     "dataset": {
//       "kind": "synthetic",                       // or "csv"
//       "u_low": [0.3, 0.1], "u_high": [0.6, 0.9], // synthetic only
//       "n_samples": 100000,                       // synthetic only
//       "path": "...", "target": "y", "group": "g", // csv only
//       "features": [{"name": "x", "type": "numeric"},
//                    {"name": "c", "type": "categorical", "categories": [..]}],
//       "standardize": true
//     },
//     "partition": {"setting": "ESG", "num_clients": 40, "psg_group_split": [0, 1],
//                   "dirichlet_alpha": 5.0, "min_cell_size": 10},
//     "algorithm": {"name": "fedminmax", "rounds": 2000, "lr_model": 0.1,
//                   "lr_adversary": 0.1, "simplex_floor": 0.0, "loss": "brier",
//                   "output": "iterate_average", "local_epochs": 15,
//                   "batch_size": 100, "hidden": [32, 32], "activation": "relu",
//                   "threads": 1, "eval_every": 0},
//     "evaluation": {"test_fraction": 0.2, "seeds": [0, 1, 2]},
//     "compare": {"lr_model": 0.1, "lr_adversary": 0.1},   // optional
//     "output_dir": "out/synthetic_esg"
//   }
//
// Precedence: command-line flag > config key > built-in default.

#include "fedmm/algorithms.hpp"
#include "fedmm/analysis.hpp"
#include "fedmm/data.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fedmm {

using json = nlohmann::ordered_json;

inline constexpr int kConfigVersion = 1;

struct DatasetSection {
  enum class Kind { Synthetic, Csv } kind = Kind::Synthetic;
  SyntheticSpec synthetic;
  std::string csv_path;
  CsvSchema schema;
};

struct PartitionSection {
  Setting setting = Setting::ESG;
  std::size_t num_clients = 40;
  std::optional<std::vector<int>> psg_group_split;
  double dirichlet_alpha = 5.0;
  std::size_t min_cell_size = 10;
};

struct EvaluationSection {
  double test_fraction = 0.2;
  std::vector<std::uint64_t> seeds{0};
};

struct CompareSection {
  std::optional<double> lr_model;
  std::optional<double> lr_adversary;
};

struct ExperimentConfig {
  DatasetSection dataset;
  PartitionSection partition;
  AlgorithmConfig algorithm;
  std::vector<std::size_t> hidden{32, 32};
  EvaluationSection evaluation;
  CompareSection compare;
  std::string output_dir = "out";
  json source;
};

// Command-line overrides; unset fields leave the config untouched.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algorithm;
  std::optional<std::string> setting;
  std::optional<std::size_t> clients;
  std::optional<std::size_t> rounds;
  std::optional<std::string> out;
  std::optional<std::string> loss;
};

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + ": expected an object");
  }

  std::string where(const std::string& key = {}) const {
    return key.empty() ? (path_.empty() ? "<root>" : path_) : (path_.empty() ? key : path_ + "." + key);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ValidationError(where(key) + ": required key missing");
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    try {
      return raw(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(where(key) + ": wrong type");
    }
  }

  template <typename T>
  void maybe(const std::string& key, T& out) {
    if (has(key)) out = get<T>(key);
  }

  Reader child(const std::string& key) { return Reader(raw(key), where(key)); }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError(where(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto with_key(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(key + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& root) {
  ExperimentConfig cfg;
  cfg.source = root;
  detail::Reader r(root, "");
  if (r.get<int>("version") != kConfigVersion)
    throw ValidationError("version: unsupported config version (expected " + std::to_string(kConfigVersion) + ")");

  {
    auto d = r.child("dataset");
    const auto kind = d.get<std::string>("kind");
    if (kind == "synthetic") {
      cfg.dataset.kind = DatasetSection::Kind::Synthetic;
      d.maybe("u_low", cfg.dataset.synthetic.u_low);
      d.maybe("u_high", cfg.dataset.synthetic.u_high);
      d.maybe("n_samples", cfg.dataset.synthetic.n_samples);
      detail::with_key("dataset", [&] { cfg.dataset.synthetic.validate(); });
    } else if (kind == "csv") {
      cfg.dataset.kind = DatasetSection::Kind::Csv;
      cfg.dataset.csv_path = d.get<std::string>("path");
      cfg.dataset.schema.target = d.get<std::string>("target");
      cfg.dataset.schema.group = d.get<std::string>("group");
      d.maybe("standardize", cfg.dataset.schema.standardize);
      d.maybe("target_classes", cfg.dataset.schema.target_classes);
      d.maybe("group_values", cfg.dataset.schema.group_values);
      const auto& feats = d.raw("features");
      if (!feats.is_array() || feats.empty()) throw ValidationError("dataset.features: expected a non-empty array");
      for (std::size_t i = 0; i < feats.size(); ++i) {
        detail::Reader f(feats[i], "dataset.features[" + std::to_string(i) + "]");
        FeatureColumn col;
        col.name = f.get<std::string>("name");
        std::string type = "numeric";
        f.maybe("type", type);
        if (type == "numeric")
          col.kind = ColumnKind::Numeric;
        else if (type == "categorical")
          col.kind = ColumnKind::Categorical;
        else
          throw ValidationError(f.where("type") + ": expected numeric|categorical");
        f.maybe("categories", col.categories);
        f.reject_unknown();
        cfg.dataset.schema.features.push_back(std::move(col));
      }
    } else {
      throw ValidationError("dataset.kind: expected synthetic|csv");
    }
    d.reject_unknown();
  }

  {
    auto p = r.child("partition");
    if (p.has("setting"))
      cfg.partition.setting = detail::with_key("partition.setting", [&] { return parse_setting(p.get<std::string>("setting")); });
    p.maybe("num_clients", cfg.partition.num_clients);
    if (p.has("psg_group_split")) cfg.partition.psg_group_split = p.get<std::vector<int>>("psg_group_split");
    p.maybe("dirichlet_alpha", cfg.partition.dirichlet_alpha);
    p.maybe("min_cell_size", cfg.partition.min_cell_size);
    if (cfg.partition.num_clients == 0) throw ValidationError("partition.num_clients: must be positive");
    if (!(cfg.partition.dirichlet_alpha > 0.0)) throw ValidationError("partition.dirichlet_alpha: must be positive");
    p.reject_unknown();
  }

  {
    auto a = r.child("algorithm");
    auto& ac = cfg.algorithm;
    ac.algorithm = detail::with_key("algorithm.name", [&] { return parse_algorithm(a.get<std::string>("name")); });
    a.maybe("rounds", ac.rounds);
    a.maybe("lr_model", ac.lr_model);
    a.maybe("lr_adversary", ac.lr_adversary);
    a.maybe("simplex_floor", ac.simplex_floor);
    if (a.has("loss")) ac.loss = detail::with_key("algorithm.loss", [&] { return parse_loss(a.get<std::string>("loss")); });
    if (a.has("output"))
      ac.output_mode = detail::with_key("algorithm.output", [&] { return parse_output_mode(a.get<std::string>("output")); });
    a.maybe("local_epochs", ac.local_epochs);
    a.maybe("batch_size", ac.batch_size);
    a.maybe("hidden", cfg.hidden);
    if (a.has("activation"))
      ac.model.hidden_activation =
          detail::with_key("algorithm.activation", [&] { return parse_activation(a.get<std::string>("activation")); });
    a.maybe("threads", ac.threads);
    a.maybe("eval_every", ac.eval_every);
    a.reject_unknown();
    if (ac.rounds == 0) throw ValidationError("algorithm.rounds: must be positive");
    if (!(ac.lr_model > 0.0)) throw ValidationError("algorithm.lr_model: must be positive");
    if (!(ac.lr_adversary >= 0.0)) throw ValidationError("algorithm.lr_adversary: must be non-negative");
    for (auto h : cfg.hidden)
      if (h == 0) throw ValidationError("algorithm.hidden: layer sizes must be positive");
  }

  if (r.has("evaluation")) {
    auto e = r.child("evaluation");
    e.maybe("test_fraction", cfg.evaluation.test_fraction);
    e.maybe("seeds", cfg.evaluation.seeds);
    e.reject_unknown();
    if (!(cfg.evaluation.test_fraction > 0.0 && cfg.evaluation.test_fraction < 1.0))
      throw ValidationError("evaluation.test_fraction: must lie in (0, 1)");
    if (cfg.evaluation.seeds.empty()) throw ValidationError("evaluation.seeds: must not be empty");
  }

  if (r.has("compare")) {
    auto c = r.child("compare");
    if (c.has("lr_model")) cfg.compare.lr_model = c.get<double>("lr_model");
    if (c.has("lr_adversary")) cfg.compare.lr_adversary = c.get<double>("lr_adversary");
    c.reject_unknown();
  }

  r.maybe("output_dir", cfg.output_dir);
  r.reject_unknown();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(root);
}

inline void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.evaluation.seeds = {*o.seed};
  if (o.algorithm) cfg.algorithm.algorithm = detail::with_key("--algorithm", [&] { return parse_algorithm(*o.algorithm); });
  if (o.setting) cfg.partition.setting = detail::with_key("--setting", [&] { return parse_setting(*o.setting); });
  if (o.clients) {
    if (*o.clients == 0) throw ValidationError("--clients: must be positive");
    cfg.partition.num_clients = *o.clients;
  }
  if (o.rounds) {
    if (*o.rounds == 0) throw ValidationError("--rounds: must be positive");
    cfg.algorithm.rounds = *o.rounds;
  }
  if (o.out) cfg.output_dir = *o.out;
  if (o.loss) cfg.algorithm.loss = detail::with_key("--loss", [&] { return parse_loss(*o.loss); });
}

// Effective configuration after overrides, in config-file layout.
inline json config_echo(const ExperimentConfig& cfg) {
  json j;
  j["version"] = kConfigVersion;
  json d;
  if (cfg.dataset.kind == DatasetSection::Kind::Synthetic) {
    d["kind"] = "synthetic";
    d["u_low"] = cfg.dataset.synthetic.u_low;
    d["u_high"] = cfg.dataset.synthetic.u_high;
    d["n_samples"] = cfg.dataset.synthetic.n_samples;
  } else {
    d["kind"] = "csv";
    d["path"] = cfg.dataset.csv_path;
    d["target"] = cfg.dataset.schema.target;
    d["group"] = cfg.dataset.schema.group;
    d["standardize"] = cfg.dataset.schema.standardize;
    json feats = json::array();
    for (const auto& f : cfg.dataset.schema.features)
      feats.push_back({{"name", f.name}, {"type", f.kind == ColumnKind::Numeric ? "numeric" : "categorical"}});
    d["features"] = feats;
  }
  j["dataset"] = d;
  json p;
  p["setting"] = std::string(to_string(cfg.partition.setting));
  p["num_clients"] = cfg.partition.num_clients;
  if (cfg.partition.psg_group_split) p["psg_group_split"] = *cfg.partition.psg_group_split;
  p["dirichlet_alpha"] = cfg.partition.dirichlet_alpha;
  p["min_cell_size"] = cfg.partition.min_cell_size;
  j["partition"] = p;
  const auto& a = cfg.algorithm;
  json aj;
  aj["name"] = std::string(to_string(a.algorithm));
  aj["rounds"] = a.rounds;
  aj["lr_model"] = a.lr_model;
  aj["lr_adversary"] = a.lr_adversary;
  aj["simplex_floor"] = a.simplex_floor;
  aj["loss"] = std::string(to_string(a.loss));
  aj["output"] = std::string(to_string(a.resolved_output_mode()));
  aj["local_epochs"] = a.local_epochs;
  aj["batch_size"] = a.batch_size;
  aj["hidden"] = cfg.hidden;
  aj["activation"] = std::string(to_string(a.model.hidden_activation));
  j["algorithm"] = aj;
  j["evaluation"] = {{"test_fraction", cfg.evaluation.test_fraction}, {"seeds", cfg.evaluation.seeds}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

// Data for one seed: the train/test split and the client partition.
struct PreparedData {
  GroupedDataset train;
  GroupedDataset test;
  std::vector<ClientShard> shards;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  GroupedDataset full;
  if (cfg.dataset.kind == DatasetSection::Kind::Synthetic) {
    auto spec = cfg.dataset.synthetic;
    spec.seed = mix_seed(seed, seed_stream::kData);
    full = generate_synthetic(spec);
  } else {
    full = load_csv(cfg.dataset.csv_path, cfg.dataset.schema);
  }
  auto split = train_test_split(full, cfg.evaluation.test_fraction, mix_seed(seed, seed_stream::kSplit));
  PartitionPlan plan;
  plan.setting = cfg.partition.setting;
  plan.num_clients = cfg.partition.num_clients;
  plan.psg_group_split = cfg.partition.psg_group_split;
  plan.dirichlet_alpha = cfg.partition.dirichlet_alpha;
  plan.min_cell_size = cfg.partition.min_cell_size;
  plan.seed = mix_seed(seed, seed_stream::kPartition);
  PreparedData out;
  out.shards = partition(split.train, plan);
  out.train = std::move(split.train);
  out.test = std::move(split.test);
  return out;
}

// AlgorithmConfig for one seed with the model shape filled in from the data.
inline AlgorithmConfig algorithm_for(const ExperimentConfig& cfg, const GroupedDataset& data, std::uint64_t seed) {
  AlgorithmConfig a = cfg.algorithm;
  a.seed = seed;
  a.model.layer_sizes.clear();
  a.model.layer_sizes.push_back(data.dims());
  for (auto h : cfg.hidden) a.model.layer_sizes.push_back(h);
  a.model.layer_sizes.push_back(data.num_classes);
  a.validate();
  return a;
}

struct SeedResult {
  std::uint64_t seed = 0;
  TrainingTrace trace;
  GroupMetrics test;
  std::filesystem::path out_dir;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= double(xs.size());
  if (xs.size() > 1) {
    double v = 0.0;
    for (double x : xs) v += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(v / double(xs.size() - 1));
  }
  return m;
}

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  MeanStd worst_risk, best_risk, average_risk, worst_accuracy;
};

inline std::vector<std::string> run_notes(const ExperimentConfig& cfg) {
  std::vector<std::string> notes;
  notes.push_back("hidden activation: " + std::string(to_string(cfg.algorithm.model.hidden_activation)));
  notes.push_back("output model: " + std::string(to_string(cfg.algorithm.resolved_output_mode())));
  if (cfg.algorithm.algorithm == Algorithm::AFL)
    notes.push_back("afl: server combines client models with lambda^{t-1}; group_weights = P_A lambda^t");
  return notes;
}

// Trains once per seed, writes <out>/seed_<s>/{metrics.csv,summary.json} and
// <out>/aggregate.json with mean and sample standard deviation over seeds.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  const std::filesystem::path out_root(cfg.output_dir);
  std::vector<double> worst, best, avg, worst_acc;
  for (auto seed : cfg.evaluation.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    auto data = prepare_data(cfg, seed);
    const auto acfg = algorithm_for(cfg, data.train, seed);
    SeedResult sr;
    sr.seed = seed;
    sr.trace = run_algorithm(data.shards, &data.test, acfg);
    sr.test = *sr.trace.final_test;
    const auto t1 = std::chrono::steady_clock::now();

    RunReport rep;
    rep.config = config_echo(cfg);
    rep.config["evaluation"]["seeds"] = std::vector<std::uint64_t>{seed};
    rep.group_prior = SimplexWeights::from_counts(std::span<const std::size_t>(data.train.group_counts)).values();
    rep.train = evaluate(sr.trace.final_params, data.train, acfg.loss);
    rep.test = sr.test;
    rep.notes = run_notes(cfg);
    rep.wall_clock_seconds = std::chrono::duration<double>(t1 - t0).count();
    sr.out_dir = out_root / ("seed_" + std::to_string(seed));
    emit_reports(sr.trace, rep, sr.out_dir);

    worst.push_back(sr.test.worst_risk);
    best.push_back(sr.test.best_risk);
    avg.push_back(sr.test.average_risk);
    worst_acc.push_back(sr.test.worst_accuracy);
    result.seeds.push_back(std::move(sr));
  }
  result.worst_risk = mean_std(worst);
  result.best_risk = mean_std(best);
  result.average_risk = mean_std(avg);
  result.worst_accuracy = mean_std(worst_acc);

  json agg;
  agg["schema"] = "fedmm-aggregate/1";
  agg["algorithm"] = std::string(to_string(cfg.algorithm.algorithm));
  agg["seeds"] = cfg.evaluation.seeds;
  auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  agg["test_worst_risk"] = ms(result.worst_risk);
  agg["test_best_risk"] = ms(result.best_risk);
  agg["test_average_risk"] = ms(result.average_risk);
  agg["test_worst_accuracy"] = ms(result.worst_accuracy);
  detail::write_file(out_root / "aggregate.json", agg.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// compare: federated vs centralized minimax under shared init and rates.

struct CompareResult {
  RunComparison comparison;
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  std::size_t clients = 0;
};

inline CompareResult run_compare(const ExperimentConfig& cfg) {
  const auto& a = cfg.algorithm;
  if (cfg.compare.lr_model && *cfg.compare.lr_model != a.lr_model)
    throw ValidationError("compare.lr_model: must equal algorithm.lr_model (identical learning rates required)");
  if (cfg.compare.lr_adversary && *cfg.compare.lr_adversary != a.lr_adversary)
    throw ValidationError("compare.lr_adversary: must equal algorithm.lr_adversary (identical learning rates required)");
  const auto seed = cfg.evaluation.seeds.front();
  auto data = prepare_data(cfg, seed);
  auto fed_cfg = algorithm_for(cfg, data.train, seed);
  fed_cfg.algorithm = Algorithm::FedMinMax;
  fed_cfg.record_params = true;
  auto central_cfg = fed_cfg;
  central_cfg.algorithm = Algorithm::CentralizedMinMax;
  const auto fed = fedminmax_run(data.shards, nullptr, fed_cfg);
  const auto central = centralized_minmax_run(union_of(data.shards), nullptr, central_cfg);

  CompareResult res;
  res.comparison = compare_runs(fed, central);
  res.seed = seed;
  res.rounds = fed_cfg.rounds;
  res.clients = data.shards.size();

  const std::filesystem::path out(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  std::ostringstream csv;
  csv << std::setprecision(17) << "round,param_diff,weight_diff\n";
  for (std::size_t t = 0; t < res.comparison.param_diff.size(); ++t)
    csv << (t + 1) << ',' << res.comparison.param_diff[t] << ',' << res.comparison.weight_diff[t] << '\n';
  detail::write_file(out / "compare.csv", csv.str());
  json j;
  j["schema"] = "fedmm-compare/1";
  j["seed"] = seed;
  j["rounds"] = res.rounds;
  j["clients"] = res.clients;
  j["max_param_diff"] = res.comparison.max_param_diff;
  j["max_weight_diff"] = res.comparison.max_weight_diff;
  detail::write_file(out / "compare.json", j.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// analyze-feasibility: is FedMinMax's converged mu* reachable as P_A lambda?

struct FeasibilityResult {
  FeasibilityReport report;
  GroupPriorMatrix pa;
  std::vector<double> fedminmax_weights;
  std::vector<double> afl_induced_weights;
  double afl_weight_gap_l1 = 0.0;
};

inline FeasibilityResult run_feasibility(const ExperimentConfig& cfg) {
  const auto seed = cfg.evaluation.seeds.front();
  auto data = prepare_data(cfg, seed);
  auto fed_cfg = algorithm_for(cfg, data.train, seed);
  fed_cfg.algorithm = Algorithm::FedMinMax;
  auto afl_cfg = fed_cfg;
  afl_cfg.algorithm = Algorithm::AFL;

  FeasibilityResult res;
  res.pa = compute_pa_matrix(data.shards);
  const auto fed = fedminmax_run(data.shards, nullptr, fed_cfg);
  const auto afl = afl_run(data.shards, nullptr, afl_cfg);
  res.fedminmax_weights = fed.rounds.back().group_weights;
  res.afl_induced_weights = afl.rounds.back().group_weights;
  for (std::size_t a = 0; a < res.fedminmax_weights.size(); ++a)
    res.afl_weight_gap_l1 += std::abs(res.fedminmax_weights[a] - res.afl_induced_weights[a]);
  res.report = lemma1_feasibility(res.pa, SimplexWeights(res.fedminmax_weights));

  const std::filesystem::path out(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  json j;
  j["schema"] = "fedmm-feasibility/1";
  j["seed"] = seed;
  j["setting"] = std::string(to_string(cfg.partition.setting));
  j["mu_star_source"] = "final group weights of a FedMinMax run on the training partition";
  j["mu_star"] = res.fedminmax_weights;
  j["feasible"] = res.report.feasible;
  j["residual"] = res.report.residual;
  j["tolerance"] = res.report.tolerance;
  j["iterations"] = res.report.iterations;
  j["lambda"] = res.report.lambda.values();
  j["afl_induced_weights"] = res.afl_induced_weights;
  j["afl_weight_gap_l1"] = res.afl_weight_gap_l1;
  detail::write_file(out / "feasibility.json", j.dump(2) + "\n");
  return res;
}

}  // namespace fedmm
