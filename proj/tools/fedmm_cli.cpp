// fedmm: command line front end for the minimax group-fair federated
// learning simulator.
//
// Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.

#include "fedmm/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace {

struct CommonFlags {
  std::string config;
  fedmm::Overrides overrides;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", f.overrides.seed, "run a single seed instead of evaluation.seeds");
  sub->add_option("--algorithm", f.overrides.algorithm, "fedminmax|centralized_minmax|localfedminmax|afl|fedavg");
  sub->add_option("--setting", f.overrides.setting, "ESG|PSG|SSG");
  sub->add_option("--clients", f.overrides.clients, "number of clients");
  sub->add_option("--rounds", f.overrides.rounds, "communication rounds");
  sub->add_option("--out", f.overrides.out, "output directory");
  sub->add_option("--loss", f.overrides.loss, "brier|cross_entropy");
}

fedmm::ExperimentConfig resolve(const CommonFlags& f) {
  auto cfg = fedmm::load_config(f.config);
  fedmm::apply_overrides(cfg, f.overrides);
  return cfg;
}

int cmd_run(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto res = fedmm::run_experiment(cfg);
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& s : res.seeds) {
    std::cout << "seed " << s.seed << ": test worst " << s.test.worst_risk << " best " << s.test.best_risk
              << " avg " << s.test.average_risk << "  weights";
    for (double w : s.trace.rounds.back().group_weights) std::cout << ' ' << w;
    std::cout << "  -> " << s.out_dir.string() << "\n";
  }
  std::cout << fedmm::to_string(cfg.algorithm.algorithm) << " over " << res.seeds.size()
            << " seed(s): worst " << res.worst_risk.mean << " +/- " << res.worst_risk.std << ", best "
            << res.best_risk.mean << " +/- " << res.best_risk.std << "\n";
  return 0;
}

int cmd_compare(const CommonFlags& f) {
  const auto res = fedmm::run_compare(resolve(f));
  std::cout << std::scientific << std::setprecision(3) << "fedminmax (" << res.clients
            << " clients) vs centralized, " << res.rounds << " rounds: max param diff "
            << res.comparison.max_param_diff << ", max weight diff " << res.comparison.max_weight_diff << "\n";
  return 0;
}

int cmd_feasibility(const CommonFlags& f) {
  const auto res = fedmm::run_feasibility(resolve(f));
  std::cout << std::setprecision(6) << "mu*:";
  for (double v : res.fedminmax_weights) std::cout << ' ' << v;
  std::cout << "\nfeasible: " << (res.report.feasible ? "true" : "false") << "  residual " << res.report.residual
            << " (tol " << res.report.tolerance << ")\nafl induced weights:";
  for (double v : res.afl_induced_weights) std::cout << ' ' << v;
  std::cout << "  L1 gap to mu* " << res.afl_weight_gap_l1 << "\n";
  return 0;
}

int cmd_synth_gen(std::size_t n, std::uint64_t seed, const std::vector<double>& u_low,
                  const std::vector<double>& u_high, const std::string& out_path, std::optional<std::size_t> clients,
                  const std::string& setting) {
  fedmm::SyntheticSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  if (!u_low.empty()) spec.u_low = u_low;
  if (!u_high.empty()) spec.u_high = u_high;
  const auto data = fedmm::generate_synthetic(spec);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw fedmm::IoError("cannot open '" + out_path + "' for writing");
  if (clients) {
    fedmm::PartitionPlan plan;
    plan.setting = fedmm::parse_setting(setting);
    plan.num_clients = *clients;
    plan.seed = fedmm::mix_seed(seed, fedmm::seed_stream::kPartition);
    fedmm::write_partition(out, fedmm::partition(data, plan));
  } else {
    fedmm::write_dataset(out, data);
  }
  if (!out) throw fedmm::IoError("failed writing '" + out_path + "'");
  return 0;
}

int cmd_project(const std::vector<double>& v, double floor) {
  const auto p = fedmm::project_simplex(v, floor);
  std::cout << std::setprecision(17);
  for (std::size_t i = 0; i < p.dimension(); ++i) std::cout << (i ? " " : "") << p[i];
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimax group-fair federated learning simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags, cmp_flags, feas_flags;
  auto* run = app.add_subcommand("run", "train and evaluate over the configured seeds");
  add_common(run, run_flags);
  auto* cmp = app.add_subcommand("compare", "FedMinMax vs centralized minimax under shared init");
  add_common(cmp, cmp_flags);
  auto* feas = app.add_subcommand("analyze-feasibility", "check whether FedMinMax's mu* lies in P_A * simplex");
  add_common(feas, feas_flags);

  std::size_t synth_n = 100000;
  std::uint64_t synth_seed = 0;
  std::vector<double> u_low, u_high;
  std::string synth_out;
  std::optional<std::size_t> synth_clients;
  std::string synth_setting = "ESG";
  auto* synth = app.add_subcommand("synth-gen", "write a synthetic dataset (or its partition) snapshot");
  synth->add_option("--samples", synth_n, "number of samples");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--u-low", u_low, "per-group P(Y=1 | x <= 0)");
  synth->add_option("--u-high", u_high, "per-group P(Y=1 | x > 0)");
  synth->add_option("--clients", synth_clients, "partition into this many clients");
  synth->add_option("--setting", synth_setting, "ESG|PSG|SSG (with --clients)");
  synth->add_option("--out", synth_out, "output file")->required();

  std::vector<double> proj_values;
  double proj_floor = 0.0;
  auto* proj = app.add_subcommand("project", "project a vector onto the probability simplex");
  proj->add_option("values", proj_values, "vector entries")->required();
  proj->add_option("--floor", proj_floor, "per-entry lower bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*cmp) return cmd_compare(cmp_flags);
    if (*feas) return cmd_feasibility(feas_flags);
    if (*synth) return cmd_synth_gen(synth_n, synth_seed, u_low, u_high, synth_out, synth_clients, synth_setting);
    if (*proj) return cmd_project(proj_values, proj_floor);
  } catch (const fedmm::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
