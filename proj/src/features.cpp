#include "hmdlab/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "hmdlab/cart.hpp"
#include "hmdlab/error.hpp"

namespace hmdlab {

std::vector<HpcName> FeatureScores::ranked() const {
  std::vector<std::pair<HpcName, double>> items(scores.begin(), scores.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<HpcName> out;
  out.reserve(items.size());
  for (const auto& [c, s] : items) out.push_back(c);
  return out;
}

std::vector<HpcName> FeatureScores::selected() const {
  auto r = ranked();
  if (k_selected && *k_selected < r.size()) r.resize(*k_selected);
  return r;
}

double CorrelationMatrix::at(HpcName a, HpcName b) const {
  auto ia = std::find(counters.begin(), counters.end(), a);
  auto ib = std::find(counters.begin(), counters.end(), b);
  if (ia == counters.end() || ib == counters.end()) {
    throw Error(ErrorKind::kFeatureMismatch, "counter not in correlation matrix");
  }
  return r[static_cast<std::size_t>(ia - counters.begin())][static_cast<std::size_t>(ib - counters.begin())];
}

namespace {

using Wide = unsigned __int128;
using SignedWide = __int128;

// Counters shared by every trace, in catalog order.
std::vector<HpcName> common_counters(const Dataset& d) {
  if (d.traces.empty()) throw Error(ErrorKind::kDegenerateInput, "dataset has no traces");
  std::bitset<kNumHpcs> common;
  common.set();
  for (const auto& t : d.traces) {
    std::bitset<kNumHpcs> mine;
    for (auto c : t.counters()) mine.set(c.index());
    common &= mine;
  }
  std::vector<HpcName> out;
  for (std::size_t i = 0; i < kNumHpcs; ++i) {
    if (common.test(i)) out.push_back(HpcName::from_index(i));
  }
  if (out.empty()) throw Error(ErrorKind::kDegenerateInput, "traces share no counters");
  return out;
}

// Column j of the result holds counter `counters[j]` for every row of `t`.
std::vector<std::size_t> columns_for(const HpcTrace& t, const std::vector<HpcName>& counters) {
  std::vector<std::size_t> cols;
  cols.reserve(counters.size());
  for (auto c : counters) cols.push_back(static_cast<std::size_t>(t.column_of(c)));
  return cols;
}

void require_both_labels(const Dataset& d) {
  if (!d.has_both_labels()) throw Error(ErrorKind::kDegenerateInput, "feature scoring needs both labels");
}

}  // namespace

FeatureScores univariate_select_k_best(const Dataset& train, std::size_t k) {
  require_both_labels(train);
  const auto counters = common_counters(train);
  if (k < 1 || k > kNumHpcs || k > counters.size()) {
    throw Error(ErrorKind::kPrecondition, "k must lie in [1, number of counters]");
  }

  // Exact integer sums keep the statistic independent of row order.
  std::vector<std::array<Wide, 2>> sums(counters.size(), {0, 0});
  std::array<std::uint64_t, 2> rows{0, 0};
  for (const auto& t : train.traces) {
    const auto cls = static_cast<std::size_t>(t.label());
    const auto cols = columns_for(t, counters);
    rows[cls] += t.iterations();
    for (std::size_t r = 0; r < t.iterations(); ++r) {
      for (std::size_t j = 0; j < counters.size(); ++j) sums[j][cls] += t.at(r, cols[j]);
    }
  }
  const long double n = static_cast<long double>(rows[0] + rows[1]);
  FeatureScores out;
  out.method = ScoreMethod::kUnivariateChi2;
  out.k_selected = k;
  for (std::size_t j = 0; j < counters.size(); ++j) {
    const long double total = static_cast<long double>(sums[j][0] + sums[j][1]);
    long double chi2 = 0.0L;
    if (total > 0.0L) {
      for (std::size_t cls = 0; cls < 2; ++cls) {
        const long double expected = total * static_cast<long double>(rows[cls]) / n;
        const long double diff = static_cast<long double>(sums[j][cls]) - expected;
        chi2 += diff * diff / expected;
      }
    }
    out.scores[counters[j]] = static_cast<double>(chi2);
  }
  return out;
}

FeatureScores feature_importance_scores(const Dataset& train, std::size_t n_trees, std::uint64_t seed,
                                        const ImportanceOptions& options) {
  if (n_trees < 1) throw Error(ErrorKind::kPrecondition, "n_trees must be >= 1");
  require_both_labels(train);
  const auto counters = common_counters(train);

  // Rows are put into a canonical order first so the bootstrap does not
  // depend on how the dataset happens to be ordered.
  struct Row {
    std::vector<std::uint64_t> values;
    std::uint8_t label;
  };
  std::vector<Row> rows;
  rows.reserve(train.total_rows());
  for (const auto& t : train.traces) {
    const auto cols = columns_for(t, counters);
    for (std::size_t r = 0; r < t.iterations(); ++r) {
      Row row{std::vector<std::uint64_t>(counters.size()), static_cast<std::uint8_t>(t.label())};
      for (std::size_t j = 0; j < counters.size(); ++j) row.values[j] = t.at(r, cols[j]);
      rows.push_back(std::move(row));
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.label, a.values) < std::tie(b.label, b.values);
  });

  cart::DesignMatrix data;
  data.rows = rows.size();
  data.cols = counters.size();
  data.x.reserve(data.rows * data.cols);
  for (const auto& row : rows) {
    for (auto v : row.values) data.x.push_back(static_cast<double>(v));
    data.y.push_back(row.label);
  }

  cart::GrowOptions grow_options;
  grow_options.max_depth = options.max_depth;
  grow_options.min_leaf = std::max<std::size_t>(options.min_leaf, 1);
  grow_options.mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(data.cols)))));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.rows - 1);
  std::vector<double> mean(data.cols, 0.0);
  std::vector<std::size_t> sample(data.rows);
  std::vector<double> importance;
  for (std::size_t t = 0; t < n_trees; ++t) {
    for (auto& s : sample) s = pick(rng);
    cart::grow(data, sample, grow_options, &rng, &importance);
    const double total = std::accumulate(importance.begin(), importance.end(), 0.0);
    if (total <= 0.0) continue;
    for (std::size_t j = 0; j < data.cols; ++j) mean[j] += importance[j] / total;
  }
  const double total = std::accumulate(mean.begin(), mean.end(), 0.0);
  if (total <= 0.0) throw Error(ErrorKind::kDegenerateInput, "no counter separates the classes");

  FeatureScores out;
  out.method = ScoreMethod::kTreeImportance;
  for (std::size_t j = 0; j < data.cols; ++j) out.scores[counters[j]] = mean[j] / total;
  return out;
}

CorrelationMatrix correlation_matrix(const Dataset& train) {
  const auto counters = common_counters(train);
  const std::size_t d = counters.size();
  if (train.total_rows() < 2) throw Error(ErrorKind::kPrecondition, "correlation needs at least two rows");

  // Exact integer moments: the result does not depend on row order.
  std::vector<Wide> sum(d, 0);
  std::vector<std::vector<Wide>> cross(d, std::vector<Wide>(d, 0));
  for (const auto& t : train.traces) {
    const auto cols = columns_for(t, counters);
    for (std::size_t r = 0; r < t.iterations(); ++r) {
      for (std::size_t a = 0; a < d; ++a) {
        const Wide va = t.at(r, cols[a]);
        sum[a] += va;
        for (std::size_t b = a; b < d; ++b) cross[a][b] += va * t.at(r, cols[b]);
      }
    }
  }
  const auto n = static_cast<SignedWide>(train.total_rows());
  auto centered = [&](std::size_t a, std::size_t b) {
    // n * sum(ab) - sum(a) * sum(b), as a long double.
    const SignedWide v = n * static_cast<SignedWide>(cross[a][b]) -
                         static_cast<SignedWide>(sum[a]) * static_cast<SignedWide>(sum[b]);
    return static_cast<long double>(v);
  };

  CorrelationMatrix m;
  m.counters = counters;
  m.r.assign(d, std::vector<double>(d, 0.0));
  for (std::size_t a = 0; a < d; ++a) {
    m.r[a][a] = 1.0;
    const long double va = centered(a, a);
    for (std::size_t b = a + 1; b < d; ++b) {
      const long double vb = centered(b, b);
      double r = 0.0;
      if (va > 0.0L && vb > 0.0L) {
        r = static_cast<double>(centered(a, b) / std::sqrt(va * vb));
        r = std::clamp(r, -1.0, 1.0);
      }
      m.r[a][b] = m.r[b][a] = r;
    }
  }
  return m;
}

HpcGrouping propose_hpc_groups(const FeatureScores& chi2, const FeatureScores& importance,
                               const CorrelationMatrix& corr, std::size_t n_groups, std::size_t r_max,
                               const GroupingOptions& options) {
  if (r_max < 1 || r_max > kNumHpcs) throw Error(ErrorKind::kPrecondition, "r_max must lie in [1, 20]");
  if (n_groups < 2) throw Error(ErrorKind::kPrecondition, "at least two groups are required");
  const auto& universe = corr.counters;
  if (n_groups > universe.size()) {
    throw Error(ErrorKind::kGrouping, "cannot form " + std::to_string(n_groups) + " non-empty groups from " +
                                          std::to_string(universe.size()) + " counters");
  }
  for (auto c : universe) {
    if (!chi2.scores.contains(c) || !importance.scores.contains(c)) {
      throw Error(ErrorKind::kFeatureMismatch, "scores missing counter " + c.str());
    }
  }

  auto rank_of = [&](const FeatureScores& s) {
    std::map<HpcName, double> rank;
    std::size_t i = 1;
    for (auto c : s.ranked()) {
      if (std::find(universe.begin(), universe.end(), c) != universe.end()) rank[c] = static_cast<double>(i++);
    }
    return rank;
  };
  const auto chi2_rank = rank_of(chi2);
  const auto imp_rank = rank_of(importance);
  std::map<HpcName, double> combined;
  for (auto c : universe) combined[c] = (chi2_rank.at(c) + imp_rank.at(c)) / 2.0;

  std::vector<HpcName> order(universe.begin(), universe.end());
  std::sort(order.begin(), order.end());
  std::stable_sort(order.begin(), order.end(), [&](HpcName a, HpcName b) { return combined[a] < combined[b]; });

  std::map<HpcName, bool> used;
  HpcGrouping out;
  for (std::size_t g = 0; g < n_groups; ++g) {
    auto seed = std::find_if(order.begin(), order.end(), [&](HpcName c) { return !used[c]; });
    if (seed == order.end()) {
      throw Error(ErrorKind::kGrouping, "ran out of counters after " + std::to_string(g) + " groups");
    }
    std::vector<HpcName> group{*seed};
    used[*seed] = true;
    for (auto c : order) {
      if (group.size() >= r_max) break;
      if (used[c]) continue;
      const bool fits = std::all_of(group.begin(), group.end(), [&](HpcName m) {
        return corr.at(c, m) > options.correlation_threshold;
      });
      if (fits) {
        group.push_back(c);
        used[c] = true;
      }
    }
    std::sort(group.begin(), group.end());

    GroupRationale why;
    double r_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < group.size(); ++a) {
      why.mean_combined_rank += combined[group[a]];
      why.mean_chi2 += chi2.scores.at(group[a]);
      why.mean_importance += importance.scores.at(group[a]);
      for (std::size_t b = a + 1; b < group.size(); ++b, ++pairs) r_sum += corr.at(group[a], group[b]);
    }
    const double size = static_cast<double>(group.size());
    why.mean_combined_rank /= size;
    why.mean_chi2 /= size;
    why.mean_importance /= size;
    why.mean_intra_correlation = pairs == 0 ? 1.0 : r_sum / static_cast<double>(pairs);
    out.groups.push_back(std::move(group));
    out.rationale.push_back(why);
  }
  return out;
}

void write_heatmap(const CorrelationMatrix& corr, const std::filesystem::path& csv_path,
                   const std::filesystem::path& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw Error(ErrorKind::kIo, "cannot write " + csv_path.string());
  csv.precision(17);
  csv << "counter";
  for (auto c : corr.counters) csv << ',' << c.name();
  csv << '\n';
  for (std::size_t a = 0; a < corr.counters.size(); ++a) {
    csv << corr.counters[a].name();
    for (double v : corr.r[a]) csv << ',' << v;
    csv << '\n';
  }
  std::ofstream json(json_path);
  if (!json) throw Error(ErrorKind::kIo, "cannot write " + json_path.string());
  nlohmann::json sidecar;
  sidecar["format"] = "hmdlab.heatmap";
  sidecar["version"] = 1;
  sidecar["counters"] = hpc_names(corr.counters);
  sidecar["matrix_csv"] = csv_path.filename().string();
  json << sidecar.dump(2) << '\n';
}

nlohmann::json to_json(const FeatureScores& s) {
  nlohmann::json j;
  j["method"] = s.method == ScoreMethod::kUnivariateChi2 ? "univariate_chi2" : "tree_importance";
  auto scores = nlohmann::json::object();
  for (const auto& [c, v] : s.scores) scores[c.str()] = v;
  j["scores"] = std::move(scores);
  j["ranked"] = hpc_names(s.ranked());
  if (s.k_selected) j["k_selected"] = *s.k_selected;
  return j;
}

nlohmann::json to_json(const HpcGrouping& g) {
  auto groups = nlohmann::json::array();
  for (std::size_t i = 0; i < g.groups.size(); ++i) {
    const auto& why = g.rationale[i];
    groups.push_back({{"counters", hpc_names(g.groups[i])},
                      {"mean_intra_correlation", why.mean_intra_correlation},
                      {"mean_combined_rank", why.mean_combined_rank},
                      {"mean_chi2", why.mean_chi2},
                      {"mean_importance", why.mean_importance}});
  }
  return groups;
}

}  // namespace hmdlab
