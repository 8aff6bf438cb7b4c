#include <doctest.h>

#include <array>
#include <random>

#include "hmdlab/mtd.hpp"
#include "support.hpp"

using namespace hmdlab;
using hmdlab::testing::error_kind;
using hmdlab::testing::one_row_apps;
using hmdlab::testing::stump;

namespace {

// Upper 1% points of the chi-squared distribution, indexed by degrees of freedom.
constexpr std::array<double, 5> kChi2Crit01 = {0.0, 6.635, 9.210, 11.345, 13.277};

double chi2_vs_uniform(const std::vector<std::uint64_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  const double e = total / static_cast<double>(counts.size());
  double x = 0.0;
  for (auto c : counts) x += (static_cast<double>(c) - e) * (static_cast<double>(c) - e) / e;
  return x;
}

// Branch-misses and instructions carry the same value; the label is value > 50.
Dataset mirrored(std::size_t n, std::uint64_t seed, bool noisy_labels = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> u(0, 100);
  std::bernoulli_distribution flip(0.3);
  std::vector<std::vector<std::uint64_t>> rows;
  std::vector<Label> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = u(rng);
    rows.push_back({v, v});
    const bool mal = (v > 50) != (noisy_labels && flip(rng));
    labels.push_back(mal ? Label::kMalware : Label::kBenign);
  }
  return one_row_apps({hpc::kBranchMisses, hpc::kInstructions}, rows, labels);
}

MtdPool pool_of(std::vector<TrainedClassifier> members, SelectionPolicy policy, std::uint64_t seed) {
  MtdPool p;
  p.classifiers = std::move(members);
  p.policy = policy;
  p.lfsr = lfsr_from_seed(seed);
  return p;
}

}  // namespace

TEST_SUITE("mtd") {

TEST_CASE("lfsr: full period, never zero") {
  Lfsr l(0x0001);
  std::uint32_t steps = 0;
  do {
    l.next();
    ++steps;
    REQUIRE(l.state() != 0);
  } while (l.state() != 0x0001 && steps <= 70000);
  CHECK(steps == 65535u);
}

TEST_CASE("lfsr: golden sequence and seeding") {
  Lfsr l(0xACE1);
  const std::array<std::uint16_t, 10> golden = {0xd670, 0xeb38, 0xf59c, 0x7ace, 0xbd67,
                                                0xdeb3, 0xef59, 0x77ac, 0x3bd6, 0x1deb};
  for (auto g : golden) CHECK(l.next() == g);

  const Lfsr start(0xACE1);
  const auto [after, out] = lfsr_next(start);
  CHECK(start.state() == 0xACE1);
  CHECK(out == 0xd670);
  CHECK(after.state() == 0xd670);

  CHECK(Lfsr(0).state() == 1);
  CHECK(lfsr_from_seed(0).state() == 1);
  CHECK(lfsr_from_seed(0x0001'0001).state() == 1);  // folds to zero, remapped
  CHECK(lfsr_from_seed(7) == lfsr_from_seed(7));
  CHECK(!(lfsr_from_seed(7) == lfsr_from_seed(8)));
}

TEST_CASE("uniform selection passes a goodness-of-fit test") {
  for (std::size_t c : {2u, 3u, 5u}) {
    Lfsr l = lfsr_from_seed(2024);
    std::vector<std::uint64_t> counts(c, 0);
    const SelectionPolicy uni = SelectionPolicy::uniform();
    for (std::size_t t = 0; t < 100000; ++t) {
      const auto k = select_classifier(uni, c, t, l);
      REQUIRE(k < c);
      ++counts[k];
    }
    const double x = chi2_vs_uniform(counts);
    MESSAGE("C=" << c << " chi2=" << x);
    CHECK(x < kChi2Crit01[c - 1]);
    if (c == 2) {
      CHECK(counts[0] / 100000.0 >= 0.49);
      CHECK(counts[0] / 100000.0 <= 0.51);
    }
  }
  Lfsr l;
  CHECK(uniform_index(l, 1) == 0);
  CHECK(error_kind([&] { uniform_index(l, 0); }) == ErrorKind::kPrecondition);
}

TEST_CASE("priority schedule") {
  Lfsr l = lfsr_from_seed(3);
  const auto p = SelectionPolicy::priority(0);
  std::vector<std::uint64_t> others(5, 0);
  for (std::size_t t = 0; t < 20000; ++t) {
    const auto k = select_classifier(p, 5, t, l);
    if (t % 2 == 0) {
      CHECK(k == 0);
    } else {
      CHECK(k != 0);
      ++others[k];
    }
  }
  // Odd ticks are uniform over the remaining members.
  CHECK(chi2_vs_uniform({others[1], others[2], others[3], others[4]}) < kChi2Crit01[3]);

  // Two members: strict alternation starting with the best.
  const auto p2 = SelectionPolicy::priority(1);
  for (std::size_t t = 0; t < 100; ++t) CHECK(select_classifier(p2, 2, t, l) == (t % 2 == 0 ? 1u : 0u));
}

TEST_CASE("design_pool") {
  const auto train = generate_synthetic_dataset(default_profile(), 30, 30, 4);
  const auto rows = TrainingRows::from(train);
  const std::vector<HpcName> x = {hpc::kBranchInstructions, hpc::kBranchMisses, hpc::kBusCycles, hpc::kCacheMisses};
  const std::vector<HpcName> y = {hpc::kCacheReferences, hpc::kCpuCycles, hpc::kInstructions};

  const auto trees = design_pool(rows, {x, y}, {Algo::kDecisionTree, Algo::kDecisionTree}, {}, 9);
  REQUIRE(trees.classifiers.size() == 2);
  CHECK(trees.classifiers[0].view.counters == x);
  CHECK(trees.classifiers[1].view.counters == y);
  CHECK(trees.lfsr == lfsr_from_seed(9));

  const auto mixed = design_pool(rows, {x, y}, {Algo::kDecisionTree, Algo::kNeuralNetwork}, SelectionPolicy::priority(1), 9);
  CHECK(mixed.classifiers[0].algo == Algo::kDecisionTree);
  CHECK(mixed.classifiers[1].algo == Algo::kNeuralNetwork);
  CHECK(mixed.policy.best_index == 1);

  CHECK(error_kind([&] { design_pool(rows, {x}, {Algo::kDecisionTree}, {}, 1); }) == ErrorKind::kInvariant);
  CHECK(error_kind([&] { design_pool(rows, {x, {hpc::kBusCycles}}, {Algo::kDecisionTree, Algo::kDecisionTree}, {}, 1); }) ==
        ErrorKind::kInvariant);
  CHECK(error_kind([&] { design_pool(rows, {x, y}, {Algo::kDecisionTree}, {}, 1); }) == ErrorKind::kConfiguration);
  CHECK(error_kind([&] {
          design_pool(rows, {x, y}, {Algo::kDecisionTree, Algo::kDecisionTree}, SelectionPolicy::priority(2), 1);
        }) == ErrorKind::kInvariant);
}

TEST_CASE("classify_stream: identical members equal the single member") {
  const auto test = mirrored(500, 1, true);
  const auto a = stump(hpc::kBranchMisses, 50.0);
  const auto b = stump(hpc::kInstructions, 50.0);
  const auto single = evaluate(a, test);
  for (auto policy : {SelectionPolicy::uniform(), SelectionPolicy::priority(0), SelectionPolicy::priority(1)}) {
    for (std::uint64_t seed : {1u, 2u, 99u}) {
      const auto r = classify_stream(pool_of({a, b}, policy, seed), test);
      CHECK(r.confusion == single);
      CHECK(r.metrics.accuracy == compute_metrics(single).accuracy);
      CHECK(r.metrics.precision == compute_metrics(single).precision);
      CHECK(r.metrics.recall == compute_metrics(single).recall);
      CHECK(r.pass + r.fail == test.total_rows());
      CHECK(r.accuracy() == static_cast<double>(r.pass) / static_cast<double>(r.pass + r.fail));
    }
  }
}

TEST_CASE("classify_stream: perfect and always-wrong members") {
  const auto test = mirrored(4000, 2);
  const auto perfect = stump(hpc::kBranchMisses, 50.0);
  const auto wrong = stump(hpc::kInstructions, 50.0, true);
  const auto r = classify_stream(pool_of({perfect, wrong}, SelectionPolicy::uniform(), 5), test);
  CHECK(r.accuracy() == doctest::Approx(0.5).epsilon(0.04));
  CHECK(r.pass == r.histogram[0]);
  CHECK(r.histogram[0] + r.histogram[1] == 4000);
  for (const auto& it : r.iterations) CHECK((it.predicted == it.truth) == (it.classifier == 0));

  const auto pri = classify_stream(pool_of({perfect, wrong}, SelectionPolicy::priority(0), 5), test);
  CHECK(pri.accuracy() == 0.5);
  const auto pri_wrong = classify_stream(pool_of({perfect, wrong}, SelectionPolicy::priority(1), 5), test);
  CHECK(pri_wrong.accuracy() == 0.5);
}

TEST_CASE("classify_stream: determinism and a private generator") {
  const auto test = mirrored(300, 3, true);
  const auto pool = pool_of({stump(hpc::kBranchMisses, 40.0), stump(hpc::kInstructions, 60.0)}, {}, 11);
  const auto before = pool.lfsr;
  const auto r1 = classify_stream(pool, test);
  const auto r2 = classify_stream(pool, test);
  CHECK(pool.lfsr == before);
  CHECK(to_json(r1, true) == to_json(r2, true));
  const auto r3 = classify_stream(pool_of(pool.classifiers, {}, 12), test);
  CHECK(to_json(r1, true) != to_json(r3, true));
}

TEST_CASE("classify_stream: errors") {
  const auto pool = pool_of({stump(hpc::kBranchMisses, 40.0), stump(hpc::kInstructions, 60.0)}, {}, 1);
  CHECK(error_kind([&] { classify_stream(pool, Dataset{}); }) == ErrorKind::kEmptyEvaluation);
  const auto other = one_row_apps({hpc::kBranchMisses}, {{1}, {2}}, {Label::kBenign, Label::kMalware});
  CHECK(error_kind([&] { classify_stream(pool, other); }) == ErrorKind::kFeatureMismatch);
  const auto overlap = pool_of({stump(hpc::kBranchMisses, 40.0), stump(hpc::kBranchMisses, 60.0)}, {}, 1);
  CHECK(error_kind([&] { classify_stream(overlap, mirrored(10, 1)); }) == ErrorKind::kInvariant);
  const auto lonely = pool_of({stump(hpc::kBranchMisses, 40.0)}, {}, 1);
  CHECK(error_kind([&] { classify_stream(lonely, mirrored(10, 1)); }) == ErrorKind::kInvariant);
}

TEST_CASE("run report JSON") {
  const auto pool = pool_of({stump(hpc::kBranchMisses, 40.0), stump(hpc::kInstructions, 60.0)}, {}, 1);
  const auto r = classify_stream(pool, mirrored(20, 4));
  const auto j = to_json(r);
  CHECK(j.at("pass") == r.pass);
  CHECK(j.at("fail") == r.fail);
  CHECK(j.at("mtd_accuracy") == r.accuracy());
  CHECK(j.at("selection_histogram").size() == 2);
  CHECK(!j.contains("iterations"));
  CHECK(to_json(r, true).at("iterations").size() == 20);
}

TEST_CASE("pool sweep follows the schedule identity") {
  const auto train = generate_synthetic_dataset(default_profile(), 60, 60, 21);
  const auto test = generate_synthetic_dataset(default_profile(), 60, 60, 22);  // 2400 iterations
  HpcGrouping g;
  g.groups = {{hpc::kCacheReferences, hpc::kCpuCycles, hpc::kInstructions},
              {hpc::kBusCycles, HpcName::parse("iTLB-loads")},
              {HpcName::parse("dTLB-load-misses"), HpcName::parse("dTLB-loads")},
              {hpc::kCacheMisses},
              {hpc::kBranchMisses}};
  const std::vector<std::uint64_t> seeds = {1, 2};
  for (auto kind : {SelectionPolicy::Kind::kUniform, SelectionPolicy::Kind::kPriority}) {
    const auto table = evaluate_pool_sweep(train, test, g, Algo::kDecisionTree, kind, {2, 3, 4, 5}, seeds);
    REQUIRE(table.size() == 4);
    for (const auto& row : table) {
      MESSAGE("size " << row.pool_size << " acc " << row.mean_accuracy << " expected " << row.expected_accuracy);
      CHECK(row.per_seed.size() == 2);
      CHECK(std::abs(row.mean_accuracy - row.expected_accuracy) <= 0.02);
    }
  }

  // A one-size sweep is a plain classify_stream over the first two groups.
  const auto table = evaluate_pool_sweep(train, test, g, Algo::kDecisionTree, SelectionPolicy::Kind::kUniform, {2}, {5});
  const auto pool = design_pool(TrainingRows::from(train), {g.groups[0], g.groups[1]},
                                {Algo::kDecisionTree, Algo::kDecisionTree}, {}, 5);
  CHECK(table[0].per_seed[0] == classify_stream(pool, test).accuracy());

  CHECK(error_kind([&] {
          evaluate_pool_sweep(train, test, g, Algo::kDecisionTree, SelectionPolicy::Kind::kUniform, {1}, seeds);
        }) == ErrorKind::kInvariant);
  CHECK(error_kind([&] {
          evaluate_pool_sweep(train, test, g, Algo::kDecisionTree, SelectionPolicy::Kind::kUniform, {6}, seeds);
        }) == ErrorKind::kPrecondition);
}

}  // TEST_SUITE
