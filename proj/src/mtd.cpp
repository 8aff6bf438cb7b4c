#include "hmdlab/mtd.hpp"

#include <algorithm>
#include <numeric>

#include "hmdlab/error.hpp"

namespace hmdlab {

std::pair<Lfsr, std::uint16_t> lfsr_next(Lfsr l) {
  const auto out = l.next();
  return {l, out};
}

Lfsr lfsr_from_seed(std::uint64_t seed) {
  const auto folded = static_cast<std::uint16_t>(seed ^ (seed >> 16) ^ (seed >> 32) ^ (seed >> 48));
  return Lfsr(folded);
}

std::size_t uniform_index(Lfsr& lfsr, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::kPrecondition, "cannot select from an empty pool");
  if (n == 1) return 0;
  constexpr std::size_t kOutputs = 0xFFFF;  // non-zero states 1..65535
  const std::size_t limit = n * (kOutputs / n);
  while (true) {
    const std::size_t v = static_cast<std::size_t>(lfsr.next()) - 1;
    if (v < limit) return v % n;
  }
}

std::size_t select_classifier(const SelectionPolicy& policy, std::size_t pool_size, std::size_t tick, Lfsr& lfsr) {
  if (policy.kind == SelectionPolicy::Kind::kUniform) return uniform_index(lfsr, pool_size);
  if (tick % 2 == 0) return policy.best_index;
  const std::size_t k = uniform_index(lfsr, pool_size - 1);
  return k < policy.best_index ? k : k + 1;
}

void MtdPool::validate() const {
  if (classifiers.size() < 2) throw Error(ErrorKind::kInvariant, "an MTD pool needs at least two classifiers");
  std::bitset<kNumHpcs> used;
  for (const auto& c : classifiers) {
    for (auto h : c.view.counters) {
      if (used.test(h.index())) throw Error(ErrorKind::kInvariant, "counter " + h.str() + " appears in two views");
      used.set(h.index());
    }
  }
  if (policy.kind == SelectionPolicy::Kind::kPriority && policy.best_index >= classifiers.size()) {
    throw Error(ErrorKind::kInvariant, "priority index outside the pool");
  }
}

MtdPool design_pool(const TrainingRows& train, const std::vector<std::vector<HpcName>>& groups,
                    const std::vector<Algo>& algos, const SelectionPolicy& policy, std::uint64_t seed,
                    const ClassifierOptions& options) {
  if (groups.size() != algos.size()) {
    throw Error(ErrorKind::kConfiguration, "need one algorithm per group");
  }
  if (groups.size() < 2) throw Error(ErrorKind::kInvariant, "an MTD pool needs at least two classifiers");
  std::bitset<kNumHpcs> used;
  for (const auto& g : groups) {
    for (auto h : g) {
      if (used.test(h.index())) throw Error(ErrorKind::kInvariant, "groups overlap on " + h.str());
      used.set(h.index());
    }
  }
  MtdPool pool;
  pool.policy = policy;
  pool.lfsr = lfsr_from_seed(seed);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    pool.classifiers.push_back(train_classifier(algos[g], train, groups[g], options, seed + g));
  }
  pool.validate();
  return pool;
}

MtdPool design_pool(const Dataset& train, const HpcGrouping& grouping, const std::vector<Algo>& algos,
                    const SelectionPolicy& policy, std::uint64_t seed, const ClassifierOptions& options) {
  return design_pool(TrainingRows::from(train), grouping.groups, algos, policy, seed, options);
}

MtdRunReport classify_stream(const MtdPool& pool, const Dataset& test) {
  pool.validate();
  if (test.total_rows() == 0) throw Error(ErrorKind::kEmptyEvaluation, "test dataset has no iterations");
  MtdRunReport report;
  report.histogram.assign(pool.classifiers.size(), 0);
  report.iterations.reserve(test.total_rows());
  Lfsr lfsr = pool.lfsr;
  std::size_t tick = 0;
  for (const auto& t : test.traces) {
    for (std::size_t r = 0; r < t.iterations(); ++r, ++tick) {
      const auto n = select_classifier(pool.policy, pool.classifiers.size(), tick, lfsr);
      const auto predicted = pool.classifiers[n].predict(t.row(r)).label;
      report.iterations.push_back({n, predicted, t.label()});
      ++report.histogram[n];
      (predicted == t.label() ? report.pass : report.fail) += 1;
      report.confusion.add(t.label(), predicted);
    }
  }
  report.metrics = compute_metrics(report.confusion);
  return report;
}

nlohmann::json to_json(const MtdRunReport& r, bool include_iterations) {
  nlohmann::json j;
  j["pass"] = r.pass;
  j["fail"] = r.fail;
  j["mtd_accuracy"] = r.accuracy();
  j["confusion"] = to_json(r.confusion);
  j["metrics"] = to_json(r.metrics);
  j["selection_histogram"] = r.histogram;
  if (include_iterations) {
    auto its = nlohmann::json::array();
    for (const auto& it : r.iterations) {
      its.push_back({{"classifier", it.classifier}, {"predicted", to_string(it.predicted)}, {"truth", to_string(it.truth)}});
    }
    j["iterations"] = std::move(its);
  }
  return j;
}

namespace {

double accuracy_on(const TrainedClassifier& c, const TrainingRows& rows) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) ok += c.predict(rows.rows[i]).label == rows.labels[i];
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

}  // namespace

std::vector<SweepRow> evaluate_pool_sweep(const Dataset& train, const Dataset& test, const HpcGrouping& grouping,
                                          Algo algo, SelectionPolicy::Kind policy,
                                          const std::vector<std::size_t>& sizes,
                                          const std::vector<std::uint64_t>& seeds,
                                          const ClassifierOptions& options) {
  if (sizes.empty() || seeds.empty()) throw Error(ErrorKind::kConfiguration, "sweep needs sizes and seeds");
  for (auto k : sizes) {
    if (k < 2) throw Error(ErrorKind::kInvariant, "pool size must be at least 2");
    if (k > grouping.groups.size()) throw Error(ErrorKind::kPrecondition, "pool size exceeds the number of groups");
  }
  const std::size_t largest = *std::max_element(sizes.begin(), sizes.end());
  const auto train_rows = TrainingRows::from(train);
  const auto test_rows = TrainingRows::from(test);

  std::vector<SweepRow> table(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) table[i].pool_size = sizes[i];

  for (auto seed : seeds) {
    // Members are shared across sizes: the pool of size k is the prefix of
    // the largest pool, trained with the same per-member seeds.
    std::vector<TrainedClassifier> members;
    std::vector<double> train_acc, test_acc;
    for (std::size_t g = 0; g < largest; ++g) {
      members.push_back(train_classifier(algo, train_rows, grouping.groups[g], options, seed + g));
      train_acc.push_back(accuracy_on(members.back(), train_rows));
      test_acc.push_back(accuracy_on(members.back(), test_rows));
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const std::size_t k = sizes[i];
      MtdPool pool;
      pool.classifiers.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
      pool.lfsr = lfsr_from_seed(seed);
      const double member_mean = std::accumulate(test_acc.begin(), test_acc.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
      double expected = member_mean;
      if (policy == SelectionPolicy::Kind::kPriority) {
        const auto best = static_cast<std::size_t>(
            std::max_element(train_acc.begin(), train_acc.begin() + static_cast<std::ptrdiff_t>(k)) - train_acc.begin());
        pool.policy = SelectionPolicy::priority(best);
        const double others = (member_mean * static_cast<double>(k) - test_acc[best]) / static_cast<double>(k - 1);
        expected = 0.5 * test_acc[best] + 0.5 * others;
      }
      const double acc = classify_stream(pool, test).accuracy();
      table[i].per_seed.push_back(acc);
      table[i].mean_accuracy += acc / static_cast<double>(seeds.size());
      table[i].expected_accuracy += expected / static_cast<double>(seeds.size());
    }
  }
  return table;
}

}  // namespace hmdlab
