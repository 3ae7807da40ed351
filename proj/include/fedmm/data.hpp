#pragma once

// Group-tagged datasets: synthetic generation, CSV ingestion, client
// partitioning (ESG / PSG / SSG) and the within-client group prior matrix.

#include "fedmm/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace fedmm {

struct GroupedSample {
  std::vector<double> features;
  int target = 0;
  int group = 0;
};

// Column-major by role: features is (samples x dims), one row per sample.
// `ids` are stable sample identifiers that survive splitting and
// partitioning, so shard unions can be checked against their source.
struct GroupedDataset {
  Matrix features;
  std::vector<int> targets;
  std::vector<int> groups;
  std::vector<std::uint64_t> ids;
  std::size_t num_groups = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> group_counts;

  std::size_t size() const { return targets.size(); }
  std::size_t dims() const { return std::size_t(features.cols()); }
  bool empty() const { return targets.empty(); }

  GroupedSample sample(std::size_t i) const {
    GroupedSample s;
    s.features.assign(features.row(Eigen::Index(i)).data(), features.row(Eigen::Index(i)).data() + features.cols());
    s.target = targets[i];
    s.group = groups[i];
    return s;
  }

  void recount() {
    group_counts.assign(num_groups, 0);
    for (int g : groups) ++group_counts[std::size_t(g)];
  }

  void validate() const {
    const auto n = targets.size();
    if (std::size_t(features.rows()) != n || groups.size() != n || ids.size() != n)
      throw ValidationError("dataset column lengths disagree");
    if (group_counts.size() != num_groups) throw ValidationError("group_counts size != num_groups");
    std::vector<std::size_t> counts(num_groups, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (groups[i] < 0 || std::size_t(groups[i]) >= num_groups) throw ValidationError("group index out of range");
      if (targets[i] < 0 || std::size_t(targets[i]) >= num_classes) throw ValidationError("target index out of range");
      ++counts[std::size_t(groups[i])];
    }
    if (counts != group_counts) throw ValidationError("group_counts inconsistent with samples");
  }

  // Rows `indices`, in the given order.
  GroupedDataset subset(std::span<const std::size_t> indices) const {
    GroupedDataset out;
    out.num_groups = num_groups;
    out.num_classes = num_classes;
    out.features.resize(Eigen::Index(indices.size()), features.cols());
    out.targets.reserve(indices.size());
    out.groups.reserve(indices.size());
    out.ids.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto i = indices[r];
      out.features.row(Eigen::Index(r)) = features.row(Eigen::Index(i));
      out.targets.push_back(targets[i]);
      out.groups.push_back(groups[i]);
      out.ids.push_back(ids[i]);
    }
    out.recount();
    return out;
  }

  static GroupedDataset from_samples(std::span<const GroupedSample> samples, std::size_t num_groups,
                                     std::size_t num_classes) {
    GroupedDataset out;
    out.num_groups = num_groups;
    out.num_classes = num_classes;
    const std::size_t dims = samples.empty() ? 0 : samples.front().features.size();
    out.features.resize(Eigen::Index(samples.size()), Eigen::Index(dims));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].features.size() != dims) throw ValidationError("ragged feature rows");
      for (std::size_t d = 0; d < dims; ++d) out.features(Eigen::Index(i), Eigen::Index(d)) = samples[i].features[d];
      out.targets.push_back(samples[i].target);
      out.groups.push_back(samples[i].group);
      out.ids.push_back(i);
    }
    out.recount();
    out.validate();
    return out;
  }
};

// Concatenation in argument order (used to rebuild the union of shards).
inline GroupedDataset concatenate(std::span<const GroupedDataset> parts) {
  if (parts.empty()) throw ValidationError("concatenate: no parts");
  GroupedDataset out;
  out.num_groups = parts.front().num_groups;
  out.num_classes = parts.front().num_classes;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.num_groups != out.num_groups || p.num_classes != out.num_classes || p.dims() != parts.front().dims())
      throw ValidationError("concatenate: incompatible parts");
    n += p.size();
  }
  out.features.resize(Eigen::Index(n), Eigen::Index(parts.front().dims()));
  Eigen::Index row = 0;
  for (const auto& p : parts) {
    if (p.size() > 0) out.features.middleRows(row, Eigen::Index(p.size())) = p.features;
    row += Eigen::Index(p.size());
    out.targets.insert(out.targets.end(), p.targets.begin(), p.targets.end());
    out.groups.insert(out.groups.end(), p.groups.begin(), p.groups.end());
    out.ids.insert(out.ids.end(), p.ids.begin(), p.ids.end());
  }
  out.recount();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

// Binary task with A uniform over groups, X ~ N(0, 1) and
// Y | X, A=a ~ Ber(u_low[a] * 1[x <= 0] + u_high[a] * 1[x > 0]).
struct SyntheticSpec {
  std::vector<double> u_low{0.3, 0.1};
  std::vector<double> u_high{0.6, 0.9};
  std::size_t n_samples = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (u_low.empty() || u_low.size() != u_high.size())
      throw ValidationError("synthetic u_low/u_high must be non-empty and equally sized");
    for (double u : u_low)
      if (!(u >= 0.0 && u <= 1.0)) throw ValidationError("synthetic u values must lie in [0, 1]");
    for (double u : u_high)
      if (!(u >= 0.0 && u <= 1.0)) throw ValidationError("synthetic u values must lie in [0, 1]");
    if (n_samples == 0) throw ValidationError("synthetic n_samples must be positive");
  }
};

inline GroupedDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t groups = spec.u_low.size();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> group_dist(0, int(groups) - 1);
  std::normal_distribution<double> x_dist(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  GroupedDataset out;
  out.num_groups = groups;
  out.num_classes = 2;
  out.features.resize(Eigen::Index(spec.n_samples), 1);
  out.targets.resize(spec.n_samples);
  out.groups.resize(spec.n_samples);
  out.ids.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const int a = group_dist(rng);
    const double x = x_dist(rng);
    const double p1 = x <= 0.0 ? spec.u_low[std::size_t(a)] : spec.u_high[std::size_t(a)];
    out.groups[i] = a;
    out.features(Eigen::Index(i), 0) = x;
    out.targets[i] = unit(rng) < p1 ? 1 : 0;
    out.ids[i] = i;
  }
  out.recount();
  return out;
}

struct TrainTestSplit {
  GroupedDataset train;
  GroupedDataset test;
};

// Group-stratified split; within each group round(n_a * fraction) samples go
// to the test side. Both sides keep the source row order.
inline TrainTestSplit train_test_split(const GroupedDataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ValidationError("test_fraction must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_group(data.num_groups);
  for (std::size_t i = 0; i < data.size(); ++i) by_group[std::size_t(data.groups[i])].push_back(i);
  std::vector<char> is_test(data.size(), 0);
  for (auto& idx : by_group) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = std::size_t(std::llround(double(idx.size()) * test_fraction));
    for (std::size_t j = 0; j < n_test; ++j) is_test[idx[j]] = 1;
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < data.size(); ++i) (is_test[i] ? test_idx : train_idx).push_back(i);
  return {data.subset(train_idx), data.subset(test_idx)};
}

// ---------------------------------------------------------------------------
// CSV ingestion

enum class ColumnKind { Numeric, Categorical };

struct FeatureColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  // Fixed category list for categorical columns; values outside it are
  // rejected. Inferred from the file (lexicographic) when empty.
  std::vector<std::string> categories;
};

struct CsvSchema {
  std::vector<FeatureColumn> features;
  std::string target;
  std::string group;
  bool standardize = true;
  // Same policy as FeatureColumn::categories.
  std::vector<std::string> target_classes;
  std::vector<std::string> group_values;
};

inline constexpr double kVarianceFloor = 1e-12;

// RFC-4180 records: quoted fields, doubled quotes, CRLF or LF endings.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  char c;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      end_row();
    } else if (c == '\n') {
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw ValidationError("csv: unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

namespace detail {

inline std::vector<std::string> resolve_categories(const std::vector<std::string>& fixed,
                                                   const std::vector<std::string>& observed,
                                                   const std::string& column) {
  if (fixed.empty()) {
    std::set<std::string> uniq(observed.begin(), observed.end());
    return {uniq.begin(), uniq.end()};
  }
  std::set<std::string> allowed(fixed.begin(), fixed.end());
  for (const auto& v : observed)
    if (!allowed.count(v)) throw ValidationError("csv: unseen category '" + v + "' in column '" + column + "'");
  return fixed;
}

inline std::size_t index_of(const std::vector<std::string>& cats, const std::string& v) {
  return std::size_t(std::find(cats.begin(), cats.end(), v) - cats.begin());
}

}  // namespace detail

inline GroupedDataset load_csv(std::istream& in, const CsvSchema& schema) {
  auto rows = parse_csv(in);
  if (rows.empty()) throw ValidationError("csv: missing header row");
  const auto& header = rows.front();
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("csv: missing column '" + name + "'");
    return std::size_t(it - header.begin());
  };
  const std::size_t target_col = column(schema.target);
  const std::size_t group_col = column(schema.group);
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.features) feature_cols.push_back(column(f.name));

  const std::size_t n = rows.size() - 1;
  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != header.size())
      throw ValidationError("csv: row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                            " fields, header has " + std::to_string(header.size()));
  auto column_values = [&](std::size_t col) {
    std::vector<std::string> v;
    v.reserve(n);
    for (std::size_t r = 1; r < rows.size(); ++r) v.push_back(rows[r][col]);
    return v;
  };

  const auto target_vals = column_values(target_col);
  const auto group_vals = column_values(group_col);
  const auto classes = detail::resolve_categories(schema.target_classes, target_vals, schema.target);
  const auto group_cats = detail::resolve_categories(schema.group_values, group_vals, schema.group);

  // Expand features: numeric columns map to one output column, categorical
  // columns to one-hot blocks in category order.
  std::vector<std::vector<double>> out_cols;
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    const auto& fc = schema.features[f];
    const auto vals = column_values(feature_cols[f]);
    if (fc.kind == ColumnKind::Numeric) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = vals[i];
        char* end = nullptr;
        col[i] = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(col[i]))
          throw ValidationError("csv: non-numeric value '" + s + "' in column '" + fc.name + "' row " +
                                std::to_string(i + 1));
      }
      if (schema.standardize) {
        double mean = 0.0;
        for (double x : col) mean += x;
        mean /= double(std::max<std::size_t>(n, 1));
        double var = 0.0;
        for (double x : col) var += (x - mean) * (x - mean);
        var /= double(std::max<std::size_t>(n, 1));
        const double sd = std::sqrt(std::max(var, kVarianceFloor));
        for (double& x : col) x = (x - mean) / sd;
      }
      out_cols.push_back(std::move(col));
    } else {
      const auto cats = detail::resolve_categories(fc.categories, vals, fc.name);
      for (const auto& cat : cats) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = vals[i] == cat ? 1.0 : 0.0;
        out_cols.push_back(std::move(col));
      }
    }
  }

  GroupedDataset out;
  out.num_classes = classes.size();
  out.num_groups = group_cats.size();
  out.features.resize(Eigen::Index(n), Eigen::Index(out_cols.size()));
  for (std::size_t c = 0; c < out_cols.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) out.features(Eigen::Index(i), Eigen::Index(c)) = out_cols[c][i];
  for (std::size_t i = 0; i < n; ++i) {
    out.targets.push_back(int(detail::index_of(classes, target_vals[i])));
    out.groups.push_back(int(detail::index_of(group_cats, group_vals[i])));
    out.ids.push_back(i);
  }
  out.recount();
  return out;
}

inline GroupedDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open csv file '" + path + "'");
  return load_csv(in, schema);
}

// ---------------------------------------------------------------------------
// Partitioning

enum class Setting { ESG, PSG, SSG };

inline std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::ESG: return "ESG";
    case Setting::PSG: return "PSG";
    case Setting::SSG: return "SSG";
  }
  return "?";
}

inline Setting parse_setting(std::string_view s) {
  if (s == "ESG" || s == "esg") return Setting::ESG;
  if (s == "PSG" || s == "psg") return Setting::PSG;
  if (s == "SSG" || s == "ssg") return Setting::SSG;
  throw ValidationError("unknown partition setting '" + std::string(s) + "' (expected ESG|PSG|SSG)");
}

struct ClientShard {
  std::size_t client_id = 0;
  GroupedDataset data;

  std::size_t size() const { return data.size(); }
  const std::vector<std::size_t>& per_group_counts() const { return data.group_counts; }
};

struct PartitionPlan {
  Setting setting = Setting::ESG;
  std::size_t num_clients = 1;
  // PSG only: half (0 or 1) that receives each group. Defaults to the first
  // ceil(|A|/2) groups on half 0 and the rest on half 1.
  std::optional<std::vector<int>> psg_group_split;
  double dirichlet_alpha = 5.0;
  std::size_t min_cell_size = 10;
  std::uint64_t seed = 0;
};

namespace detail {

// Sizes for `total` items over `cells` cells: every cell gets a floor of
// min(min_cell, total / cells), the rest follows Dirichlet(alpha)
// proportions rounded by largest remainder (ties to the lower index).
inline std::vector<std::size_t> dirichlet_sizes(std::size_t total, std::size_t cells, double alpha,
                                                std::size_t min_cell, std::mt19937_64& rng) {
  std::vector<std::size_t> sizes(cells, 0);
  if (cells == 0) return sizes;
  const std::size_t floor_each = std::min(min_cell, total / cells);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(cells);
  double sum = 0.0;
  for (auto& x : p) {
    x = gamma(rng);
    sum += x;
  }
  for (auto& x : p) x /= sum;
  const std::size_t rest = total - floor_each * cells;
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> frac;
  for (std::size_t i = 0; i < cells; ++i) {
    const double exact = p[i] * double(rest);
    const auto whole = std::size_t(std::floor(exact));
    sizes[i] = floor_each + whole;
    assigned += whole;
    frac.emplace_back(exact - double(whole), i);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < rest; ++j, ++assigned) ++sizes[frac[j % cells].second];
  return sizes;
}

}  // namespace detail

// Disjoint shards whose union is `data`. Within a shard, samples are
// grouped by group index then by shuffled order.
inline std::vector<ClientShard> partition(const GroupedDataset& data, const PartitionPlan& plan) {
  const std::size_t K = plan.num_clients;
  const std::size_t A = data.num_groups;
  if (K == 0) throw ValidationError("partition: num_clients must be positive");
  for (std::size_t a = 0; a < A; ++a)
    if (data.group_counts[a] == 0) throw ValidationError("partition: group " + std::to_string(a) + " is empty");
  if (!(plan.dirichlet_alpha > 0.0)) throw ValidationError("partition: dirichlet_alpha must be positive");

  std::mt19937_64 rng(plan.seed);
  std::vector<std::vector<std::size_t>> by_group(A);
  for (std::size_t i = 0; i < data.size(); ++i) by_group[std::size_t(data.groups[i])].push_back(i);
  for (auto& idx : by_group) std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<std::vector<std::size_t>> assigned(K);
  auto deal_dirichlet = [&](std::size_t a, std::span<const std::size_t> clients) {
    const auto sizes = detail::dirichlet_sizes(by_group[a].size(), clients.size(), plan.dirichlet_alpha,
                                               plan.min_cell_size, rng);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < clients.size(); ++j)
      for (std::size_t m = 0; m < sizes[j]; ++m) assigned[clients[j]].push_back(by_group[a][pos++]);
  };

  switch (plan.setting) {
    case Setting::ESG:
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t j = 0; j < by_group[a].size(); ++j) assigned[j % K].push_back(by_group[a][j]);
      break;
    case Setting::SSG: {
      if (K < A)
        throw ValidationError("partition: SSG needs at least " + std::to_string(A) + " clients, got " +
                              std::to_string(K));
      // Group a owns a contiguous block of clients; the first K % A groups get one extra.
      std::size_t next = 0;
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t count = K / A + (a < K % A ? 1 : 0);
        std::vector<std::size_t> clients(count);
        std::iota(clients.begin(), clients.end(), next);
        next += count;
        deal_dirichlet(a, clients);
      }
      break;
    }
    case Setting::PSG: {
      if (K < 2) throw ValidationError("partition: PSG needs at least 2 clients");
      std::vector<int> split;
      if (plan.psg_group_split) {
        split = *plan.psg_group_split;
        if (split.size() != A)
          throw ValidationError("partition: psg_group_split must assign all " + std::to_string(A) + " groups");
        for (int h : split)
          if (h != 0 && h != 1) throw ValidationError("partition: psg_group_split entries must be 0 or 1");
      } else {
        for (std::size_t a = 0; a < A; ++a) split.push_back(a < (A + 1) / 2 ? 0 : 1);
      }
      std::vector<std::size_t> half0(K / 2), half1(K - K / 2);
      std::iota(half0.begin(), half0.end(), std::size_t{0});
      std::iota(half1.begin(), half1.end(), K / 2);
      for (int h = 0; h < 2; ++h) {
        bool used = false;
        for (std::size_t a = 0; a < A; ++a) used |= split[a] == h;
        if (!used) throw ValidationError("partition: PSG half " + std::to_string(h) + " receives no group");
      }
      for (std::size_t a = 0; a < A; ++a) deal_dirichlet(a, split[a] == 0 ? half0 : half1);
      break;
    }
  }

  std::vector<ClientShard> shards(K);
  for (std::size_t k = 0; k < K; ++k) {
    shards[k].client_id = k;
    shards[k].data = data.subset(assigned[k]);
  }
  return shards;
}

// |A| x |K| matrix with entry (a, k) = n_{a,k} / n_k.
struct GroupPriorMatrix {
  Matrix entries;

  std::size_t num_groups() const { return std::size_t(entries.rows()); }
  std::size_t num_clients() const { return std::size_t(entries.cols()); }

  bool is_column_stochastic(double tol = 1e-12) const {
    if ((entries.array() < 0.0).any()) return false;
    for (Eigen::Index k = 0; k < entries.cols(); ++k)
      if (std::abs(entries.col(k).sum() - 1.0) > tol) return false;
    return true;
  }
};

inline GroupPriorMatrix compute_pa_matrix(std::span<const ClientShard> shards) {
  if (shards.empty()) throw ValidationError("compute_pa_matrix: no shards");
  const std::size_t A = shards.front().data.num_groups;
  GroupPriorMatrix m;
  m.entries = Matrix::Zero(Eigen::Index(A), Eigen::Index(shards.size()));
  for (std::size_t k = 0; k < shards.size(); ++k) {
    const auto& s = shards[k];
    if (s.size() == 0) throw ValidationError("compute_pa_matrix: shard " + std::to_string(s.client_id) + " is empty");
    for (std::size_t a = 0; a < A; ++a)
      m.entries(Eigen::Index(a), Eigen::Index(k)) = double(s.per_group_counts()[a]) / double(s.size());
  }
  return m;
}

// Global group counts n_a over all shards.
inline std::vector<std::size_t> total_group_counts(std::span<const ClientShard> shards) {
  if (shards.empty()) throw ValidationError("no shards");
  std::vector<std::size_t> counts(shards.front().data.num_groups, 0);
  for (const auto& s : shards)
    for (std::size_t a = 0; a < counts.size(); ++a) counts[a] += s.per_group_counts()[a];
  return counts;
}

inline GroupedDataset union_of(std::span<const ClientShard> shards) {
  std::vector<GroupedDataset> parts;
  parts.reserve(shards.size());
  for (const auto& s : shards) parts.push_back(s.data);
  return concatenate(parts);
}

// ---------------------------------------------------------------------------
// Snapshots
//
// Text format, one record per line, reals as C99 hex-floats so a reload is
// bit-exact:
//
//   fedmm-dataset 1
//   groups <A> classes <C> dims <D> samples <N>
//   <id> <group> <target> <x_1> ... <x_D>      (N lines)
//
// A partition snapshot is
//
//   fedmm-partition 1
//   clients <K>
//   client <k>
//   <dataset block>                            (K times)

namespace detail {

inline std::string hexfloat(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline void expect_token(std::istream& in, std::string_view want) {
  std::string tok;
  if (!(in >> tok) || tok != want)
    throw ValidationError("snapshot: expected '" + std::string(want) + "', found '" + tok + "'");
}

template <typename T>
T read_value(std::istream& in, std::string_view what) {
  T v{};
  if (!(in >> v)) throw ValidationError("snapshot: cannot read " + std::string(what));
  return v;
}

inline double read_hexfloat(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw ValidationError("snapshot: truncated feature row");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) throw ValidationError("snapshot: bad real '" + tok + "'");
  return v;
}

}  // namespace detail

inline void write_dataset(std::ostream& out, const GroupedDataset& d) {
  out << "fedmm-dataset 1\n";
  out << "groups " << d.num_groups << " classes " << d.num_classes << " dims " << d.dims() << " samples "
      << d.size() << "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.ids[i] << ' ' << d.groups[i] << ' ' << d.targets[i];
    for (std::size_t c = 0; c < d.dims(); ++c)
      out << ' ' << detail::hexfloat(d.features(Eigen::Index(i), Eigen::Index(c)));
    out << '\n';
  }
}

inline GroupedDataset read_dataset(std::istream& in) {
  detail::expect_token(in, "fedmm-dataset");
  if (detail::read_value<int>(in, "version") != 1) throw ValidationError("snapshot: unsupported dataset version");
  GroupedDataset d;
  detail::expect_token(in, "groups");
  d.num_groups = detail::read_value<std::size_t>(in, "groups");
  detail::expect_token(in, "classes");
  d.num_classes = detail::read_value<std::size_t>(in, "classes");
  detail::expect_token(in, "dims");
  const auto dims = detail::read_value<std::size_t>(in, "dims");
  detail::expect_token(in, "samples");
  const auto n = detail::read_value<std::size_t>(in, "samples");
  d.features.resize(Eigen::Index(n), Eigen::Index(dims));
  d.ids.resize(n);
  d.groups.resize(n);
  d.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.ids[i] = detail::read_value<std::uint64_t>(in, "id");
    d.groups[i] = detail::read_value<int>(in, "group");
    d.targets[i] = detail::read_value<int>(in, "target");
    for (std::size_t c = 0; c < dims; ++c) d.features(Eigen::Index(i), Eigen::Index(c)) = detail::read_hexfloat(in);
  }
  d.recount();
  d.validate();
  return d;
}

inline void write_partition(std::ostream& out, std::span<const ClientShard> shards) {
  out << "fedmm-partition 1\nclients " << shards.size() << "\n";
  for (const auto& s : shards) {
    out << "client " << s.client_id << "\n";
    write_dataset(out, s.data);
  }
}

inline std::vector<ClientShard> read_partition(std::istream& in) {
  detail::expect_token(in, "fedmm-partition");
  if (detail::read_value<int>(in, "version") != 1) throw ValidationError("snapshot: unsupported partition version");
  detail::expect_token(in, "clients");
  const auto k = detail::read_value<std::size_t>(in, "clients");
  std::vector<ClientShard> shards(k);
  for (auto& s : shards) {
    detail::expect_token(in, "client");
    s.client_id = detail::read_value<std::size_t>(in, "client id");
    s.data = read_dataset(in);
  }
  return shards;
}

}  // namespace fedmm
