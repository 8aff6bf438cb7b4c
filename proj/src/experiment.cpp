#include "hmdlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hmdlab/combinatorics.hpp"
#include "hmdlab/error.hpp"
#include "hmdlab/features.hpp"
#include "hmdlab/trace.hpp"

namespace hmdlab {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 8> kRecipeNames = {"baseline",       "attack", "mtd",        "pool_sweep",
                                                           "priority_sweep", "mixed",  "resilience", "combinatorics"};

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::kConfiguration, msg); }

std::vector<HpcName> parse_counter_list(const json& j, const std::string& key) {
  if (!j.is_array()) config_error(key + " must be an array of counter names");
  std::vector<HpcName> out;
  for (const auto& v : j) {
    if (!v.is_string()) config_error(key + " must contain counter names");
    out.push_back(HpcName::parse(v.get<std::string>()));
  }
  return out;
}

json counter_list_json(const std::vector<HpcName>& counters) {
  auto a = json::array();
  for (auto c : counters) a.push_back(c.str());
  return a;
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(std::string("bad value for '") + key + "'");
  }
}

std::string_view policy_name(SelectionPolicy::Kind k) {
  return k == SelectionPolicy::Kind::kUniform ? "uniform" : "priority";
}

SelectionPolicy::Kind parse_policy(std::string_view s) {
  if (s == "uniform") return SelectionPolicy::Kind::kUniform;
  if (s == "priority") return SelectionPolicy::Kind::kPriority;
  config_error("unknown policy '" + std::string(s) + "'");
}

template <typename T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

// ---------------------------------------------------------------- statistics

json mean_std(const std::vector<double>& v) {
  if (v.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"n", v.size()}};
}

// Collects per-seed metric values keyed by algorithm/stage/metric.
class Aggregator {
 public:
  void add(const std::string& group, const std::string& stage, const Metrics& m) {
    auto& slot = values_[group][stage];
    slot["accuracy"].push_back(m.accuracy);
    if (m.precision) slot["precision"].push_back(*m.precision);
    if (m.recall) slot["recall"].push_back(*m.recall);
  }
  void add(const std::string& group, const std::string& stage, const std::string& metric, double v) {
    values_[group][stage][metric].push_back(v);
  }
  json to_json() const {
    json out = json::object();
    for (const auto& [g, stages] : values_) {
      for (const auto& [s, metrics] : stages) {
        for (const auto& [m, v] : metrics) out[g][s][m] = mean_std(v);
      }
    }
    return out;
  }

 private:
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> values_;
};

// ---------------------------------------------------------------- data plumbing

struct SeedData {
  Dataset train;
  Dataset test;
  Dataset probe;
};

class DataSource {
 public:
  explicit DataSource(const ExperimentConfig& c) : config_(c) {
    if (c.dataset.source == "csv") ingested_ = parse_perf_csv(c.dataset.csv_path);
  }

  SeedData for_seed(std::uint64_t seed) const {
    const auto& d = config_.dataset;
    SeedData out;
    if (ingested_) {
      std::tie(out.train, out.test) = split_train_test(*ingested_, d.test_per_class, seed);
      // The attacker profiles programs it can run itself; with recorded data
      // those are the training programs.
      out.probe = out.train;
    } else {
      const auto profile = default_profile();
      const auto all = generate_synthetic_dataset(profile, d.train_per_class + d.test_per_class,
                                                  d.train_per_class + d.test_per_class, seed);
      std::tie(out.train, out.test) = split_train_test(all, d.test_per_class, seed);
      out.probe = generate_synthetic_dataset(profile, d.probe_per_class, d.probe_per_class, seed + d.probe_seed_offset);
    }
    return out;
  }

 private:
  const ExperimentConfig& config_;
  std::optional<Dataset> ingested_;
};

Dataset malware_only(const Dataset& d) {
  Dataset out;
  out.seed = d.seed;
  out.provenance = d.provenance;
  for (const auto& t : d.traces) {
    if (t.label() == Label::kMalware) out.traces.push_back(t);
  }
  return out;
}

double mean_malware_score(const TrainedClassifier& c, const Dataset& d) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : d.traces) {
    if (t.label() != Label::kMalware) continue;
    for (std::size_t r = 0; r < t.iterations(); ++r, ++n) sum += c.predict(t.row(r)).score;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

// Victim trained on the attack-target counters, its reverse-engineered
// surrogate, and the test set with every malware trace camouflaged.
struct AttackedSet {
  TrainedClassifier victim;
  SurrogateReport surrogate;
  std::vector<Perturbation> perturbations;  // one per malware test trace, in order
  Dataset attacked;                         // camouflaged malware + clean benign
  Dataset attacked_malware;
};

AttackedSet mount_attack(const ExperimentConfig& c, const SeedData& data, Algo algo, std::uint64_t seed) {
  AttackedSet a;
  const auto rows = TrainingRows::from(data.train);
  a.victim = train_classifier(algo, rows, c.victim_counters, c.classifier, seed);
  const auto& victim = a.victim;
  a.surrogate = reverse_engineer([&victim](const CounterRow& r) { return victim.predict(r).label; }, data.probe,
                                 {Algo::kNeuralNetwork}, seed, c.victim_counters, c.classifier);
  a.attacked.seed = data.test.seed;
  a.attacked.provenance = data.test.provenance;
  for (const auto& t : data.test.traces) {
    if (t.label() == Label::kMalware) {
      a.perturbations.push_back(craft_perturbation(a.surrogate.surrogate, t, c.budget));
      a.attacked.traces.push_back(inject(t, a.perturbations.back()));
    } else {
      a.attacked.traces.push_back(t);
    }
  }
  a.attacked_malware = malware_only(a.attacked);
  return a;
}

json metrics_entry(const ConfusionCounts& cc) {
  return {{"confusion", to_json(cc)}, {"metrics", to_json(compute_metrics(cc))}};
}

json injected_summary(const AttackedSet& a) {
  std::map<std::string, double> totals;
  std::size_t rows = 0;
  for (const auto& p : a.perturbations) {
    for (const auto& row : p.deltas) {
      ++rows;
      for (std::size_t j = 0; j < kNumHpcs; ++j) {
        if (row[j] != 0) totals[std::string(kHpcCatalog[j])] += static_cast<double>(row[j]);
      }
    }
  }
  json out = json::object();
  for (const auto& [k, v] : totals) out[k] = rows == 0 ? 0.0 : v / static_cast<double>(rows);
  return out;
}

std::size_t best_member(const std::vector<TrainedClassifier>& members, const TrainingRows& rows) {
  std::size_t best = 0;
  double best_acc = -1.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    std::size_t ok = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) ok += members[i].predict(rows.rows[r]).label == rows.labels[r];
    const double acc = static_cast<double>(ok) / static_cast<double>(rows.size());
    if (acc > best_acc) {
      best_acc = acc;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------- recipes

json run_baseline(const ExperimentConfig& c, const DataSource& src) {
  Aggregator agg;
  auto per_seed = json::array();
  for (auto seed : c.seeds) {
    const auto data = src.for_seed(seed);
    const auto rows = TrainingRows::from(data.train);
    json entry{{"seed", seed}};
    for (auto algo : c.algos) {
      const auto victim = train_classifier(algo, rows, c.victim_counters, c.classifier, seed);
      const auto cc = evaluate(victim, data.test);
      entry["algos"][std::string(to_string(algo))]["clean"] = metrics_entry(cc);
      agg.add(std::string(to_string(algo)), "clean", compute_metrics(cc));
    }
    per_seed.push_back(std::move(entry));
  }
  return {{"per_seed", std::move(per_seed)}, {"aggregate", agg.to_json()}};
}

json run_attack(const ExperimentConfig& c, const DataSource& src) {
  Aggregator agg;
  auto per_seed = json::array();
  for (auto seed : c.seeds) {
    const auto data = src.for_seed(seed);
    json entry{{"seed", seed}};
    for (auto algo : c.algos) {
      const std::string name(to_string(algo));
      const auto a = mount_attack(c, data, algo, seed);
      const auto clean = evaluate(a.victim, data.test);
      const auto attacked = evaluate(a.victim, a.attacked);
      const double score_clean = mean_malware_score(a.surrogate.surrogate, data.test);
      const double score_attacked = mean_malware_score(a.surrogate.surrogate, a.attacked);
      entry["algos"][name] = {
          {"clean", metrics_entry(clean)},
          {"attacked", metrics_entry(attacked)},
          {"surrogate", {{"algo", to_string(a.surrogate.surrogate.algo)},
                         {"agreement", a.surrogate.agreement},
                         {"mean_malware_score_clean", score_clean},
                         {"mean_malware_score_attacked", score_attacked}}},
          {"mean_injected_per_row", injected_summary(a)},
      };
      agg.add(name, "clean", compute_metrics(clean));
      agg.add(name, "attacked", compute_metrics(attacked));
      agg.add(name, "surrogate", "agreement", a.surrogate.agreement);
    }
    per_seed.push_back(std::move(entry));
  }
  return {{"per_seed", std::move(per_seed)}, {"aggregate", agg.to_json()}};
}

json run_mtd(const ExperimentConfig& c, const DataSource& src) {
  Aggregator agg;
  auto per_seed = json::array();
  for (auto seed : c.seeds) {
    const auto data = src.for_seed(seed);
    const auto rows = TrainingRows::from(data.train);
    json entry{{"seed", seed}};
    for (auto algo : c.algos) {
      const std::string name(to_string(algo));
      const auto a = mount_attack(c, data, algo, seed);
      auto pool = design_pool(rows, c.mtd_groups, std::vector<Algo>(c.mtd_groups.size(), algo),
                              SelectionPolicy::uniform(), seed, c.classifier);
      if (c.mtd_policy == SelectionPolicy::Kind::kPriority) {
        pool.policy = SelectionPolicy::priority(best_member(pool.classifiers, rows));
      }
      const auto clean = evaluate(a.victim, data.test);
      const auto attacked = evaluate(a.victim, a.attacked);
      const auto mtd = classify_stream(pool, a.attacked);
      const auto mtd_clean = classify_stream(pool, data.test);
      entry["algos"][name] = {
          {"clean", metrics_entry(clean)},
          {"attacked", metrics_entry(attacked)},
          {"mtd", to_json(mtd, c.include_iterations)},
          {"mtd_clean", to_json(mtd_clean, false)},
      };
      agg.add(name, "clean", compute_metrics(clean));
      agg.add(name, "attacked", compute_metrics(attacked));
      agg.add(name, "mtd", mtd.metrics);
      agg.add(name, "mtd_clean", mtd_clean.metrics);
    }
    per_seed.push_back(std::move(entry));
  }
  return {{"per_seed", std::move(per_seed)}, {"aggregate", agg.to_json()}};
}

HpcGrouping grouping_for(const ExperimentConfig& c, const Dataset& train, std::uint64_t seed) {
  const auto chi2 = univariate_select_k_best(train, kNumHpcs);
  const auto imp = feature_importance_scores(train, c.sweep.importance_trees, seed);
  const auto corr = correlation_matrix(train);
  return propose_hpc_groups(chi2, imp, corr, c.sweep.n_groups, c.sweep.r_max,
                            GroupingOptions{c.sweep.correlation_threshold});
}

json run_sweep(const ExperimentConfig& c, const DataSource& src, SelectionPolicy::Kind policy) {
  std::map<std::string, std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>>> acc;
  auto per_seed = json::array();
  for (auto seed : c.seeds) {
    const auto data = src.for_seed(seed);
    const auto grouping = grouping_for(c, data.train, seed);
    json entry{{"seed", seed}, {"grouping", to_json(grouping)}};
    for (auto algo : c.algos) {
      const std::string name(to_string(algo));
      const auto a = mount_attack(c, data, algo, seed);
      const auto table =
          evaluate_pool_sweep(data.train, a.attacked_malware, grouping, algo, policy, c.sweep.sizes, {seed}, c.classifier);
      auto rows = json::array();
      for (const auto& r : table) {
        rows.push_back({{"pool_size", r.pool_size}, {"accuracy", r.mean_accuracy}, {"expected_accuracy", r.expected_accuracy}});
        acc[name][r.pool_size].first.push_back(r.mean_accuracy);
        acc[name][r.pool_size].second.push_back(r.expected_accuracy);
      }
      entry["algos"][name] = std::move(rows);
    }
    per_seed.push_back(std::move(entry));
  }
  json aggregate = json::object();
  for (const auto& [name, sizes] : acc) {
    auto rows = json::array();
    for (const auto& [k, v] : sizes) {
      rows.push_back({{"pool_size", k}, {"accuracy", mean_std(v.first)}, {"expected_accuracy", mean_std(v.second)}});
    }
    aggregate[name] = std::move(rows);
  }
  return {{"policy", policy_name(policy)}, {"test_set", "attacked_malware"}, {"per_seed", std::move(per_seed)},
          {"aggregate", std::move(aggregate)}};
}

json run_mixed(const ExperimentConfig& c, const DataSource& src) {
  if (c.mtd_groups.size() != 2) config_error("the mixed recipe needs exactly two MTD groups");
  Aggregator agg;
  auto per_seed = json::array();
  const std::vector<std::pair<std::string, std::vector<Algo>>> layouts = {
      {"decision_tree+neural_network", {Algo::kDecisionTree, Algo::kNeuralNetwork}},
      {"neural_network+decision_tree", {Algo::kNeuralNetwork, Algo::kDecisionTree}},
  };
  for (auto seed : c.seeds) {
    const auto data = src.for_seed(seed);
    const auto rows = TrainingRows::from(data.train);
    const auto a = mount_attack(c, data, c.single_algo, seed);
    const auto victim_cc = evaluate(a.victim, a.attacked_malware);
    json entry{{"seed", seed}, {"victim", {{"algo", to_string(c.single_algo)}, {"attacked", metrics_entry(victim_cc)}}}};
    agg.add("victim", "attacked", compute_metrics(victim_cc));
    for (const auto& [label, algos] : layouts) {
      const auto pool = design_pool(rows, c.mtd_groups, algos, SelectionPolicy::uniform(), seed, c.classifier);
      const auto r = classify_stream(pool, a.attacked_malware);
      entry["pools"][label] = to_json(r, c.include_iterations);
      agg.add(label, "mtd", r.metrics);
    }
    per_seed.push_back(std::move(entry));
  }
  return {{"test_set", "attacked_malware"}, {"per_seed", std::move(per_seed)}, {"aggregate", agg.to_json()}};
}

json run_resilience(const ExperimentConfig& c, const DataSource& src) {
  std::map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>> levels;
  std::vector<double> clean_acc;
  auto per_seed = json::array();
  for (auto seed : c.seeds) {
    const auto data = src.for_seed(seed);
    const auto rows = TrainingRows::from(data.train);
    const auto a = mount_attack(c, data, c.single_algo, seed);
    const auto pool = design_pool(rows, c.mtd_groups, std::vector<Algo>(c.mtd_groups.size(), c.single_algo),
                                  SelectionPolicy::uniform(), seed, c.classifier);
    const auto clean_malware = malware_only(data.test);
    const double clean = compute_metrics(evaluate(a.victim, clean_malware)).accuracy;
    clean_acc.push_back(clean);
    json entry{{"seed", seed}, {"clean_accuracy", clean}};
    auto rows_json = json::array();
    for (auto extra : c.extra_branch_misses) {
      Dataset strengthened;
      strengthened.seed = clean_malware.seed;
      strengthened.provenance = clean_malware.provenance;
      for (std::size_t i = 0; i < clean_malware.traces.size(); ++i) {
        strengthened.traces.push_back(inject(clean_malware.traces[i], strengthen(a.perturbations[i], extra, c.budget)));
      }
      const double attacked = compute_metrics(evaluate(a.victim, strengthened)).accuracy;
      const double restored = classify_stream(pool, strengthened).accuracy();
      rows_json.push_back({{"extra_branch_misses", extra}, {"attacked_accuracy", attacked}, {"mtd_accuracy", restored}});
      levels[extra].first.push_back(attacked);
      levels[extra].second.push_back(restored);
    }
    entry["levels"] = std::move(rows_json);
    per_seed.push_back(std::move(entry));
  }
  auto aggregate = json::array();
  for (auto extra : c.extra_branch_misses) {
    const auto& [att, mtd] = levels[extra];
    aggregate.push_back({{"extra_branch_misses", extra}, {"attacked_accuracy", mean_std(att)}, {"mtd_accuracy", mean_std(mtd)}});
  }
  return {{"algo", to_string(c.single_algo)},
          {"test_set", "attacked_malware"},
          {"per_seed", std::move(per_seed)},
          {"aggregate", {{"clean_accuracy", mean_std(clean_acc)}, {"levels", std::move(aggregate)}}}};
}

json run_combinatorics(const ExperimentConfig& c) {
  const auto& k = c.combinatorics;
  json out{{"report", to_json(combinatorics_report(k.h_t, k.r_max, k.h))}};
  auto sweep = json::array();
  for (const auto& p : sweep_curves(k.sweep_h_t, k.r_max)) {
    sweep.push_back({{"h_t", p.h_t}, {"n_h", p.n_h.decimal()}, {"n_h_log10", p.n_h.log10}, {"n_c_log10", p.n_c_log10}});
  }
  out["sweep"] = {{"r_max", k.r_max}, {"points", std::move(sweep)}};
  return out;
}

}  // namespace

std::string_view to_string(Recipe r) { return kRecipeNames[static_cast<std::size_t>(r)]; }

Recipe parse_recipe(std::string_view text) {
  for (std::size_t i = 0; i < kRecipeNames.size(); ++i) {
    if (kRecipeNames[i] == text) return static_cast<Recipe>(i);
  }
  config_error("unknown recipe '" + std::string(text) + "'");
}

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names(kRecipeNames.begin(), kRecipeNames.end());
  return names;
}

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "csv") config_error("dataset.source must be synthetic or csv");
  if (dataset.source == "csv" && dataset.csv_path.empty()) config_error("dataset.csv_path is required for csv input");
  if (dataset.train_per_class < 2) config_error("dataset.train_per_class must be at least 2");
  if (dataset.test_per_class < 1) config_error("dataset.test_per_class must be at least 1");
  if (dataset.probe_per_class < 2) config_error("dataset.probe_per_class must be at least 2");
  if (seeds.empty()) config_error("at least one seed is required");
  if (has_duplicates(seeds)) config_error("seeds must be distinct");
  if (algos.empty()) config_error("at least one algorithm is required");
  if (has_duplicates(algos)) config_error("algorithms must be distinct");
  if (victim_counters.empty()) config_error("victim_counters is empty");
  if (has_duplicates(victim_counters)) config_error("victim_counters has duplicates");

  if (classifier.tree.max_depth < 1) config_error("tree.max_depth must be at least 1");
  if (classifier.tree.min_leaf < 1) config_error("tree.min_leaf must be at least 1");
  if (!(classifier.tree.prune_fraction >= 0.0 && classifier.tree.prune_fraction < 1.0)) {
    config_error("tree.prune_fraction must lie in [0, 1)");
  }
  if (classifier.network.epochs < 1) config_error("network.epochs must be at least 1");
  if (!(classifier.network.lr > 0.0) || !std::isfinite(classifier.network.lr)) {
    config_error("network.learning_rate must be positive");
  }
  for (auto h : classifier.network.hidden) {
    if (h == 0) config_error("network.hidden layer widths must be positive");
  }

  try {
    budget.validate();
  } catch (const Error& e) {
    config_error(std::string("attack: ") + e.what());
  }
  if (extra_branch_misses.empty()) config_error("attack.extra_branch_misses is empty");

  if (mtd_groups.size() < 2) config_error("mtd.groups needs at least two groups");
  std::set<HpcName> used;
  for (const auto& g : mtd_groups) {
    if (g.empty()) config_error("mtd.groups contains an empty group");
    for (auto h : g) {
      if (!used.insert(h).second) config_error("mtd.groups overlap on " + h.str());
    }
  }

  if (sweep.n_groups < 2) config_error("sweep.n_groups must be at least 2");
  if (sweep.r_max < 1) config_error("sweep.r_max must be at least 1");
  if (sweep.importance_trees < 1) config_error("sweep.importance_trees must be at least 1");
  if (!(sweep.correlation_threshold >= 0.0 && sweep.correlation_threshold <= 1.0)) {
    config_error("sweep.correlation_threshold must lie in [0, 1]");
  }
  if (sweep.sizes.empty()) config_error("sweep.sizes is empty");
  for (auto k : sweep.sizes) {
    if (k < 2 || k > sweep.n_groups) config_error("sweep.sizes must lie in [2, n_groups]");
  }

  const auto& k = combinatorics;
  if (k.r_max < 1 || k.r_max > k.h_t) config_error("combinatorics.r_max must lie in [1, h_t]");
  if (k.h < 1 || k.h > k.h_t) config_error("combinatorics.h must lie in [1, h_t]");
  for (auto h : k.sweep_h_t) {
    if (h < k.r_max) config_error("combinatorics.sweep_h_t values must be at least r_max");
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  reject_unknown(j,
                 {"recipe", "dataset", "seeds", "algos", "victim_counters", "tree", "network", "attack", "mtd",
                  "sweep", "single_algo", "combinatorics", "include_iterations", "out_dir"},
                 "config");
  if (j.contains("recipe")) {
    if (!j["recipe"].is_string()) config_error("recipe must be a string");
    c.recipe = parse_recipe(j["recipe"].get<std::string>());
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    reject_unknown(d, {"source", "csv_path", "train_per_class", "test_per_class", "probe_per_class", "probe_seed_offset"},
                   "dataset");
    read(d, "source", c.dataset.source);
    std::string path;
    read(d, "csv_path", path);
    if (!path.empty()) c.dataset.csv_path = path;
    read(d, "train_per_class", c.dataset.train_per_class);
    read(d, "test_per_class", c.dataset.test_per_class);
    read(d, "probe_per_class", c.dataset.probe_per_class);
    read(d, "probe_seed_offset", c.dataset.probe_seed_offset);
  }
  read(j, "seeds", c.seeds);
  if (j.contains("algos")) {
    std::vector<std::string> names;
    read(j, "algos", names);
    c.algos.clear();
    for (const auto& n : names) c.algos.push_back(parse_algo(n));
  }
  if (j.contains("victim_counters")) c.victim_counters = parse_counter_list(j["victim_counters"], "victim_counters");
  if (j.contains("tree")) {
    const auto& t = j["tree"];
    reject_unknown(t, {"max_depth", "min_leaf", "prune_fraction"}, "tree");
    read(t, "max_depth", c.classifier.tree.max_depth);
    read(t, "min_leaf", c.classifier.tree.min_leaf);
    read(t, "prune_fraction", c.classifier.tree.prune_fraction);
  }
  if (j.contains("network")) {
    const auto& n = j["network"];
    reject_unknown(n, {"hidden", "epochs", "learning_rate"}, "network");
    read(n, "hidden", c.classifier.network.hidden);
    read(n, "epochs", c.classifier.network.epochs);
    read(n, "learning_rate", c.classifier.network.lr);
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    reject_unknown(a, {"epsilon", "controllable", "coupling", "max_inject", "extra_branch_misses"}, "attack");
    read(a, "epsilon", c.budget.epsilon);
    if (a.contains("controllable")) c.budget.controllable = parse_counter_list(a["controllable"], "attack.controllable");
    if (a.contains("coupling")) {
      if (!a["coupling"].is_object()) config_error("attack.coupling must be an object");
      c.budget.coupling.clear();
      for (const auto& [name, v] : a["coupling"].items()) {
        reject_unknown(v, {"instructions", "branch_instructions"}, "attack.coupling." + name);
        Coupling k;
        read(v, "instructions", k.instructions);
        read(v, "branch_instructions", k.branch_instructions);
        c.budget.coupling[HpcName::parse(name)] = k;
      }
    }
    if (a.contains("max_inject")) {
      if (!a["max_inject"].is_object()) config_error("attack.max_inject must be an object");
      c.budget.max_inject.clear();
      for (const auto& [name, v] : a["max_inject"].items()) {
        if (!v.is_number_unsigned()) config_error("attack.max_inject values must be non-negative integers");
        c.budget.max_inject[HpcName::parse(name)] = v.get<std::uint64_t>();
      }
    }
    read(a, "extra_branch_misses", c.extra_branch_misses);
  }
  if (j.contains("mtd")) {
    const auto& m = j["mtd"];
    reject_unknown(m, {"groups", "policy"}, "mtd");
    if (m.contains("groups")) {
      if (!m["groups"].is_array()) config_error("mtd.groups must be an array of arrays");
      c.mtd_groups.clear();
      for (const auto& g : m["groups"]) c.mtd_groups.push_back(parse_counter_list(g, "mtd.groups"));
    }
    if (m.contains("policy")) {
      if (!m["policy"].is_string()) config_error("mtd.policy must be a string");
      c.mtd_policy = parse_policy(m["policy"].get<std::string>());
    }
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    reject_unknown(s, {"n_groups", "r_max", "sizes", "correlation_threshold", "importance_trees"}, "sweep");
    read(s, "n_groups", c.sweep.n_groups);
    read(s, "r_max", c.sweep.r_max);
    read(s, "sizes", c.sweep.sizes);
    read(s, "correlation_threshold", c.sweep.correlation_threshold);
    read(s, "importance_trees", c.sweep.importance_trees);
  }
  if (j.contains("single_algo")) {
    if (!j["single_algo"].is_string()) config_error("single_algo must be a string");
    c.single_algo = parse_algo(j["single_algo"].get<std::string>());
  }
  if (j.contains("combinatorics")) {
    const auto& k = j["combinatorics"];
    reject_unknown(k, {"h_t", "r_max", "h", "sweep_h_t"}, "combinatorics");
    read(k, "h_t", c.combinatorics.h_t);
    read(k, "r_max", c.combinatorics.r_max);
    read(k, "h", c.combinatorics.h);
    read(k, "sweep_h_t", c.combinatorics.sweep_h_t);
  }
  read(j, "include_iterations", c.include_iterations);
  if (j.contains("out_dir")) {
    std::string out;
    read(j, "out_dir", out);
    c.out_dir = out;
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["recipe"] = to_string(c.recipe);
  j["dataset"] = {{"source", c.dataset.source},
                  {"csv_path", c.dataset.csv_path.string()},
                  {"train_per_class", c.dataset.train_per_class},
                  {"test_per_class", c.dataset.test_per_class},
                  {"probe_per_class", c.dataset.probe_per_class},
                  {"probe_seed_offset", c.dataset.probe_seed_offset}};
  j["seeds"] = c.seeds;
  j["algos"] = json::array();
  for (auto a : c.algos) j["algos"].push_back(to_string(a));
  j["victim_counters"] = counter_list_json(c.victim_counters);
  j["tree"] = {{"max_depth", c.classifier.tree.max_depth},
               {"min_leaf", c.classifier.tree.min_leaf},
               {"prune_fraction", c.classifier.tree.prune_fraction}};
  j["network"] = {{"hidden", c.classifier.network.hidden},
                  {"epochs", c.classifier.network.epochs},
                  {"learning_rate", c.classifier.network.lr}};
  json coupling = json::object();
  for (const auto& [h, k] : c.budget.coupling) {
    coupling[h.str()] = {{"instructions", k.instructions}, {"branch_instructions", k.branch_instructions}};
  }
  json caps = json::object();
  for (const auto& [h, v] : c.budget.max_inject) caps[h.str()] = v;
  j["attack"] = {{"epsilon", c.budget.epsilon},
                 {"controllable", counter_list_json(c.budget.controllable)},
                 {"coupling", std::move(coupling)},
                 {"max_inject", std::move(caps)},
                 {"extra_branch_misses", c.extra_branch_misses}};
  auto groups = json::array();
  for (const auto& g : c.mtd_groups) groups.push_back(counter_list_json(g));
  j["mtd"] = {{"groups", std::move(groups)}, {"policy", policy_name(c.mtd_policy)}};
  j["sweep"] = {{"n_groups", c.sweep.n_groups},
                {"r_max", c.sweep.r_max},
                {"sizes", c.sweep.sizes},
                {"correlation_threshold", c.sweep.correlation_threshold},
                {"importance_trees", c.sweep.importance_trees}};
  j["single_algo"] = to_string(c.single_algo);
  j["combinatorics"] = {{"h_t", c.combinatorics.h_t},
                        {"r_max", c.combinatorics.r_max},
                        {"h", c.combinatorics.h},
                        {"sweep_h_t", c.combinatorics.sweep_h_t}};
  j["include_iterations"] = c.include_iterations;
  return j;
}

json ExperimentReport::to_json() const {
  json j;
  j["format"] = "hmdlab.report";
  j["version"] = 1;
  j["tool_version"] = kToolVersion;
  j["recipe"] = to_string(config.recipe);
  j["config"] = hmdlab::to_json(config);
  j["results"] = results;
  j["timing"] = {{"wall_clock_seconds", wall_clock_seconds}};
  return j;
}

ExperimentReport run(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.config = config;
  if (config.recipe == Recipe::kCombinatorics) {
    report.results = run_combinatorics(config);
  } else {
    const DataSource src(config);
    switch (config.recipe) {
      case Recipe::kBaseline: report.results = run_baseline(config, src); break;
      case Recipe::kAttack: report.results = run_attack(config, src); break;
      case Recipe::kMtd: report.results = run_mtd(config, src); break;
      case Recipe::kPoolSweep: report.results = run_sweep(config, src, SelectionPolicy::Kind::kUniform); break;
      case Recipe::kPrioritySweep: report.results = run_sweep(config, src, SelectionPolicy::Kind::kPriority); break;
      case Recipe::kMixed: report.results = run_mixed(config, src); break;
      case Recipe::kResilience: report.results = run_resilience(config, src); break;
      case Recipe::kCombinatorics: break;
    }
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::filesystem::path write_report(const ExperimentReport& report, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto final_path = out_dir / (std::string(to_string(report.config.recipe)) + ".json");
  auto tmp = final_path;
  tmp += ".partial";
  try {
    {
      std::ofstream out(tmp);
      if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
      out << report.to_json().dump(2) << '\n';
      out.flush();
      if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
    }
    fs::rename(tmp, final_path);
  } catch (...) {
    fs::remove(tmp, ec);
    throw;
  }
  return final_path;
}

// ---------------------------------------------------------------- plot data

namespace {

struct FigureSpec {
  std::string_view id;
  std::vector<std::string_view> recipes;
  std::string_view metric;  // for metric bar charts
};

const std::vector<FigureSpec>& figure_specs() {
  static const std::vector<FigureSpec> specs = {
      {"fig2", {"attack", "baseline"}, "precision"},
      {"fig3", {"attack", "baseline"}, "recall"},
      {"fig4", {"attack", "baseline"}, "accuracy"},
      {"fig6", {"combinatorics"}, "n_h"},
      {"fig7", {"combinatorics"}, "n_c_log10"},
      {"fig8", {"mtd"}, "precision"},
      {"fig9", {"mtd"}, "recall"},
      {"fig10", {"mtd"}, "accuracy"},
      {"fig11", {"pool_sweep"}, "accuracy"},
      {"fig12", {"priority_sweep"}, "accuracy"},
      {"fig14", {"mixed"}, "accuracy"},
      {"fig15", {"resilience"}, "accuracy"},
  };
  return specs;
}

double mean_of(const json& stat) {
  if (!stat.is_object() || stat.at("mean").is_null()) return std::nan("");
  return stat.at("mean").get<double>();
}

std::string format_x(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& f : figure_specs()) out.emplace_back(f.id);
    return out;
  }();
  return ids;
}

std::vector<PlotRow> plot_data(const json& report, std::string_view figure) {
  const auto& specs = figure_specs();
  const auto spec = std::find_if(specs.begin(), specs.end(), [&](const FigureSpec& f) { return f.id == figure; });
  if (spec == specs.end()) throw Error(ErrorKind::kMapping, "unknown figure '" + std::string(figure) + "'");
  if (!report.is_object() || report.value("format", "") != "hmdlab.report") {
    throw Error(ErrorKind::kParse, "not an hmdlab report");
  }
  const std::string recipe = report.value("recipe", "");
  if (std::find(spec->recipes.begin(), spec->recipes.end(), recipe) == spec->recipes.end()) {
    throw Error(ErrorKind::kMapping, std::string(figure) + " cannot be drawn from a " + recipe + " report");
  }
  const auto& res = report.at("results");
  const std::string metric(spec->metric);
  std::vector<PlotRow> rows;
  try {
    if (recipe == "baseline" || recipe == "attack" || recipe == "mtd") {
      const std::vector<std::pair<std::string, std::string>> stages = {
          {"clean", "before attack"}, {"attacked", "after attack"}, {"mtd", "after MTD"}};
      for (const auto& [stage, series] : stages) {
        for (const auto& [algo, by_stage] : res.at("aggregate").items()) {
          if (!by_stage.contains(stage)) continue;
          const auto& m = by_stage.at(stage);
          if (!m.contains(metric)) continue;
          rows.push_back({series, algo, mean_of(m.at(metric))});
        }
      }
    } else if (recipe == "combinatorics") {
      for (const auto& p : res.at("sweep").at("points")) {
        const auto x = std::to_string(p.at("h_t").get<std::uint64_t>());
        if (metric == "n_h") {
          rows.push_back({"n_h", x, std::stod(p.at("n_h").get<std::string>())});
        } else {
          rows.push_back({"log10_n_c", x, p.at("n_c_log10").get<double>()});
        }
      }
    } else if (recipe == "pool_sweep" || recipe == "priority_sweep") {
      for (const auto& [algo, table] : res.at("aggregate").items()) {
        for (const auto& r : table) {
          const auto x = std::to_string(r.at("pool_size").get<std::size_t>());
          rows.push_back({algo, x, mean_of(r.at("accuracy"))});
          rows.push_back({algo + " expected", x, mean_of(r.at("expected_accuracy"))});
        }
      }
    } else if (recipe == "mixed") {
      for (const auto& [label, by_stage] : res.at("aggregate").items()) {
        const auto& stage = by_stage.contains("mtd") ? by_stage.at("mtd") : by_stage.at("attacked");
        rows.push_back({label, "accuracy", mean_of(stage.at("accuracy"))});
      }
    } else if (recipe == "resilience") {
      const auto& agg = res.at("aggregate");
      rows.push_back({"clean", "0", mean_of(agg.at("clean_accuracy"))});
      for (const auto& l : agg.at("levels")) {
        const auto x = format_x(l.at("extra_branch_misses").get<double>());
        rows.push_back({"after attack", x, mean_of(l.at("attacked_accuracy"))});
        rows.push_back({"after MTD", x, mean_of(l.at("mtd_accuracy"))});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed report: ") + e.what());
  }
  return rows;
}

void write_plot_csv(const std::vector<PlotRow>& rows, std::ostream& out) {
  out << "series,x,y\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.series << ',' << r.x << ',';
    if (std::isnan(r.y)) {
      out << "";
    } else {
      out << r.y;
    }
    out << '\n';
  }
}

}  // namespace hmdlab
