#include <doctest.h>

#include <cmath>
#include <random>

#include "hmdlab/classifiers.hpp"
#include "hmdlab/error.hpp"
#include "support.hpp"

using namespace hmdlab;
using hmdlab::testing::one_row_apps;

namespace {

template <typename F>
ErrorKind kind_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an hmdlab::Error");
  return ErrorKind::kInvariant;
}

CounterRow row_of(std::initializer_list<std::pair<HpcName, double>> cells) {
  CounterRow r;
  for (auto [c, v] : cells) r.set(c, v);
  return r;
}

TrainingRows rows_of(const std::vector<std::vector<double>>& xs, const std::vector<Label>& ys,
                     const std::vector<HpcName>& counters) {
  TrainingRows t;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CounterRow r;
    for (std::size_t j = 0; j < counters.size(); ++j) r.set(counters[j], xs[i][j]);
    t.rows.push_back(r);
    t.labels.push_back(ys[i]);
  }
  return t;
}

double accuracy_on(const TrainedClassifier& c, const TrainingRows& t) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < t.size(); ++i) ok += c.predict(t.rows[i]).label == t.labels[i];
  return static_cast<double>(ok) / static_cast<double>(t.size());
}

// Hand-built network classifier with identity scaling.
TrainedClassifier manual_network(std::vector<HpcName> counters, std::vector<DenseLayer> layers) {
  TrainedClassifier c;
  c.algo = Algo::kNeuralNetwork;
  c.view.counters = counters;
  c.view.mean.assign(counters.size(), 0.0);
  c.view.sdev.assign(counters.size(), 1.0);
  c.model = NetworkModel{std::move(layers)};
  return c;
}

double loss_toward(const TrainedClassifier& c, const std::vector<double>& raw, Label target) {
  const auto& net = std::get<NetworkModel>(c.model);
  Eigen::VectorXd z(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t j = 0; j < raw.size(); ++j) z(static_cast<Eigen::Index>(j)) = (raw[j] - c.view.mean[j]) / c.view.sdev[j];
  const double logit = net.logit(z);
  const double s = target == Label::kMalware ? -logit : logit;
  return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

const std::vector<HpcName> kTwo = {hpc::kBranchMisses, hpc::kInstructions};

}  // namespace

TEST_SUITE("classifiers") {

TEST_CASE("metrics: spot values") {
  CHECK(*compute_metrics({10, 0, 10, 0}).precision == 0.5);
  CHECK(*compute_metrics({10, 0, 0, 90}).recall == 0.1);
  const auto perfect = compute_metrics({5, 5, 0, 0});
  CHECK(perfect.accuracy == 1.0);
  CHECK(*perfect.precision == 1.0);
  CHECK(*perfect.recall == 1.0);
}

TEST_CASE("metrics: exhaustive oracle over small confusion counts") {
  std::size_t checked = 0;
  for (std::uint64_t tp = 0; tp <= 20; ++tp)
    for (std::uint64_t tn = 0; tp + tn <= 20; ++tn)
      for (std::uint64_t fp = 0; tp + tn + fp <= 20; ++fp)
        for (std::uint64_t fn = 0; tp + tn + fp + fn <= 20; ++fn) {
          const std::uint64_t total = tp + tn + fp + fn;
          if (total == 0) continue;
          const auto m = compute_metrics({tp, tn, fp, fn});
          ++checked;
          REQUIRE(m.accuracy == static_cast<double>(tp + tn) / static_cast<double>(total));
          REQUIRE(m.precision.has_value() == (tp + fp > 0));
          REQUIRE(m.recall.has_value() == (tp + fn > 0));
          if (m.precision) REQUIRE(*m.precision == static_cast<double>(tp) / static_cast<double>(tp + fp));
          if (m.recall) REQUIRE(*m.recall == static_cast<double>(tp) / static_cast<double>(tp + fn));
          REQUIRE(m.accuracy >= 0.0);
          REQUIRE(m.accuracy <= 1.0);
        }
  CHECK(checked == 10625);  // C(24,4) - 1
  CHECK(kind_of([] { compute_metrics({}); }) == ErrorKind::kEmptyEvaluation);
}

TEST_CASE("confusion counting") {
  ConfusionCounts cc;
  cc.add(Label::kMalware, Label::kMalware);
  cc.add(Label::kMalware, Label::kBenign);
  cc.add(Label::kBenign, Label::kMalware);
  cc.add(Label::kBenign, Label::kBenign);
  cc.add(Label::kBenign, Label::kBenign);
  CHECK(cc == ConfusionCounts{1, 2, 1, 1});
  cc += cc;
  CHECK(cc.total() == 10);
}

TEST_CASE("tree: separable 1-D data gives a depth-1 perfect tree") {
  std::vector<std::vector<double>> xs;
  std::vector<Label> ys;
  for (int v = 10; v < 100; v += 5) xs.push_back({double(v)}), ys.push_back(Label::kBenign);
  for (int v = 105; v < 200; v += 5) xs.push_back({double(v)}), ys.push_back(Label::kMalware);
  const auto t = rows_of(xs, ys, {hpc::kBranchMisses});
  const auto c = train_decision_tree(t, {hpc::kBranchMisses}, TreeOptions{8, 1, 0.0}, 1);
  const auto& tree = std::get<TreeModel>(c.model);
  CHECK(cart::depth(tree.nodes) == 1);
  CHECK(accuracy_on(c, t) == 1.0);
}

TEST_CASE("tree: identical features yield a majority leaf") {
  std::vector<std::vector<double>> xs(7, {42.0});
  std::vector<Label> ys = {Label::kMalware, Label::kMalware, Label::kMalware, Label::kMalware,
                           Label::kBenign,  Label::kBenign,  Label::kBenign};
  const auto c = train_decision_tree(rows_of(xs, ys, {hpc::kBusCycles}), {hpc::kBusCycles}, TreeOptions{8, 1, 0.0}, 3);
  CHECK(std::get<TreeModel>(c.model).node_count() == 1);
  CHECK(c.predict(row_of({{hpc::kBusCycles, 42}})).label == Label::kMalware);
}

TEST_CASE("tree: pruning never grows the tree") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 30.0);
  std::vector<std::vector<double>> xs;
  std::vector<Label> ys;
  for (int i = 0; i < 400; ++i) {
    const bool mal = i % 2 == 0;
    xs.push_back({(mal ? 120.0 : 100.0) + noise(rng), 50.0 + noise(rng)});
    ys.push_back(mal ? Label::kMalware : Label::kBenign);
  }
  const auto t = rows_of(xs, ys, kTwo);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto unpruned = train_decision_tree(t, kTwo, TreeOptions{8, 1, 0.0}, seed);
    const auto pruned = train_decision_tree(t, kTwo, TreeOptions{8, 1, 0.2}, seed);
    CHECK(std::get<TreeModel>(pruned.model).node_count() <= std::get<TreeModel>(unpruned.model).node_count());
  }
}

TEST_CASE("tree: predictions survive a rank-preserving remap of a feature") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> u(0, 200);
  std::vector<std::vector<double>> xs, remapped;
  std::vector<Label> ys;
  for (int i = 0; i < 120; ++i) {
    const double a = u(rng), b = u(rng);
    xs.push_back({a, b});
    remapped.push_back({a * a + 3.0, b});
    ys.push_back(a + 0.5 * b > 150 ? Label::kMalware : Label::kBenign);
  }
  const auto base = train_decision_tree(rows_of(xs, ys, kTwo), kTwo, TreeOptions{6, 2, 0.0}, 4);
  const auto moved = train_decision_tree(rows_of(remapped, ys, kTwo), kTwo, TreeOptions{6, 2, 0.0}, 4);
  const auto t0 = rows_of(xs, ys, kTwo);
  const auto t1 = rows_of(remapped, ys, kTwo);
  for (std::size_t i = 0; i < t0.size(); ++i) CHECK(base.predict(t0.rows[i]).label == moved.predict(t1.rows[i]).label);
}

TEST_CASE("tree: training preconditions") {
  const auto t = rows_of({{1}, {2}}, {Label::kBenign, Label::kMalware}, {hpc::kBusCycles});
  CHECK(kind_of([&] { train_decision_tree(t, {}, {}, 1); }) == ErrorKind::kConfiguration);
  CHECK(kind_of([&] { train_decision_tree(t, {hpc::kBusCycles}, TreeOptions{0, 1, 0.0}, 1); }) ==
        ErrorKind::kPrecondition);
  CHECK(kind_of([&] { train_decision_tree(t, {hpc::kBusCycles}, TreeOptions{3, 1, 1.0}, 1); }) ==
        ErrorKind::kPrecondition);
  const auto one_class = rows_of({{1}, {2}}, {Label::kBenign, Label::kBenign}, {hpc::kBusCycles});
  CHECK(kind_of([&] { train_decision_tree(one_class, {hpc::kBusCycles}, {}, 1); }) == ErrorKind::kDegenerateInput);
  CHECK(kind_of([&] { train_decision_tree(t, {hpc::kCpuCycles}, {}, 1); }) == ErrorKind::kFeatureMismatch);
}

TEST_CASE("prediction: hand-built tree and network") {
  TrainedClassifier tree;
  tree.algo = Algo::kDecisionTree;
  tree.view.counters = {hpc::kBranchMisses};
  tree.view.mean = {0.0};
  tree.view.sdev = {1.0};
  TreeModel m;
  m.nodes.resize(3);
  m.nodes[0] = {0, 100.0, 1, 2, 2, 1};
  m.nodes[1] = {-1, 0.0, -1, -1, 1, 0};
  m.nodes[2] = {-1, 0.0, -1, -1, 1, 1};
  tree.model = m;
  CHECK(predict_iteration(tree, row_of({{hpc::kBranchMisses, 150}})).label == Label::kMalware);
  CHECK(predict_iteration(tree, row_of({{hpc::kBranchMisses, 50}})).label == Label::kBenign);
  CHECK(kind_of([&] { tree.predict(row_of({{hpc::kInstructions, 1}})); }) == ErrorKind::kFeatureMismatch);

  const auto zero = manual_network(kTwo, {{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1)}});
  const auto p = zero.predict(row_of({{hpc::kBranchMisses, 7}, {hpc::kInstructions, 9}}));
  CHECK(p.score == 0.5);
  CHECK(p.label == Label::kMalware);
}

TEST_CASE("network: XOR is learnable") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> jitter(-20.0, 20.0);
  std::vector<std::vector<double>> xs;
  std::vector<Label> ys;
  for (int i = 0; i < 400; ++i) {
    const bool a = i & 1, b = i & 2;
    xs.push_back({(a ? 300.0 : 100.0) + jitter(rng), (b ? 300.0 : 100.0) + jitter(rng)});
    ys.push_back(a != b ? Label::kMalware : Label::kBenign);
  }
  const auto t = rows_of(xs, ys, kTwo);
  const auto c = train_neural_network(t, kTwo, NetworkOptions{{8}, 2000, 0.5}, 1);
  CHECK(accuracy_on(c, t) >= 0.95);
}

TEST_CASE("network: preconditions and determinism") {
  const auto t = rows_of({{1, 2}, {3, 4}, {5, 1}, {2, 8}}, {Label::kBenign, Label::kMalware, Label::kBenign, Label::kMalware},
                         kTwo);
  CHECK(kind_of([&] { train_neural_network(t, kTwo, NetworkOptions{{4}, 0, 0.1}, 1); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([&] { train_neural_network(t, kTwo, NetworkOptions{{}, 10, 0.1}, 1); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([&] { train_neural_network(t, kTwo, NetworkOptions{{4}, 10, 0.0}, 1); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([&] { train_neural_network(t, {}, NetworkOptions{}, 1); }) == ErrorKind::kConfiguration);
  CHECK(kind_of([&] { train_neural_network(t, kTwo, NetworkOptions{{4}, 10, 1e308}, 1); }) == ErrorKind::kDivergence);

  const auto a = train_neural_network(t, kTwo, NetworkOptions{{4, 3}, 50, 0.1}, 77);
  const auto b = train_neural_network(t, kTwo, NetworkOptions{{4, 3}, 50, 0.1}, 77);
  const auto& la = std::get<NetworkModel>(a.model).layers;
  const auto& lb = std::get<NetworkModel>(b.model).layers;
  REQUIRE(la.size() == 3);
  for (std::size_t l = 0; l < la.size(); ++l) {
    CHECK(la[l].weights == lb[l].weights);
    CHECK(la[l].bias == lb[l].bias);
  }
  // Glorot-uniform bound on the first layer.
  const double bound = std::sqrt(6.0 / (2 + 4));
  const auto c = train_neural_network(t, kTwo, NetworkOptions{{4}, 1, 1e-12}, 5);
  CHECK(std::get<NetworkModel>(c.model).layers[0].weights.cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("network: scaling every counter by 10 changes nothing") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> xs, scaled;
  std::vector<Label> ys;
  for (int i = 0; i < 200; ++i) {
    const bool mal = i % 2;
    const double a = std::round(1000 + 100 * n(rng) + (mal ? 80 : 0));
    const double b = std::round(5000 + 400 * n(rng) - (mal ? 200 : 0));
    xs.push_back({a, b});
    scaled.push_back({10 * a, 10 * b});
    ys.push_back(mal ? Label::kMalware : Label::kBenign);
  }
  const auto t0 = rows_of(xs, ys, kTwo), t1 = rows_of(scaled, ys, kTwo);
  const auto c0 = train_neural_network(t0, kTwo, NetworkOptions{{8}, 200, 0.1}, 3);
  const auto c1 = train_neural_network(t1, kTwo, NetworkOptions{{8}, 200, 0.1}, 3);
  for (std::size_t i = 0; i < t0.size(); ++i) CHECK(c0.predict(t0.rows[i]).label == c1.predict(t1.rows[i]).label);
}

TEST_CASE("input gradient: logistic unit by hand") {
  Eigen::MatrixXd w(1, 2);
  w << 2.0, -3.0;
  const auto c = manual_network(kTwo, {{w, Eigen::VectorXd::Zero(1)}});
  const auto row = row_of({{hpc::kBranchMisses, 0.3}, {hpc::kInstructions, 0.1}});
  const double z = 2.0 * 0.3 - 3.0 * 0.1;
  const double s = 1.0 / (1.0 + std::exp(-z));
  const auto g = input_gradient(c, row, Label::kMalware);
  CHECK(g[0] == doctest::Approx((s - 1.0) * 2.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx((s - 1.0) * -3.0).epsilon(1e-12));
  CHECK(g[0] < 0.0);
  CHECK(g[1] > 0.0);

  // Deep in saturation 1 - s underflows in double; the gradient must not.
  const auto far = row_of({{hpc::kBranchMisses, 20.0}, {hpc::kInstructions, 0.0}});
  const auto gs = input_gradient(c, far, Label::kMalware);
  CHECK(gs[0] == doctest::Approx(-std::exp(-40.0) * 2.0).epsilon(1e-12));
  CHECK(gs[1] == doctest::Approx(std::exp(-40.0) * 3.0).epsilon(1e-12));
  const auto gb = input_gradient(c, row_of({{hpc::kBranchMisses, -20.0}, {hpc::kInstructions, 0.0}}), Label::kBenign);
  CHECK(gb[0] == doctest::Approx(std::exp(-40.0) * 2.0).epsilon(1e-12));

  const auto zero = manual_network(kTwo, {{Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(3)},
                                          {Eigen::MatrixXd::Zero(1, 3), Eigen::VectorXd::Zero(1)}});
  for (double v : input_gradient(zero, row, Label::kMalware)) CHECK(v == 0.0);

  TrainedClassifier tree;
  tree.model = TreeModel{};
  CHECK(kind_of([&] { input_gradient(tree, row, Label::kMalware); }) == ErrorKind::kUnsupported);
}

TEST_CASE("input gradient matches central finite differences") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  const std::vector<HpcName> four = {hpc::kBranchInstructions, hpc::kBranchMisses, hpc::kInstructions,
                                     hpc::kLlcLoadMisses};
  for (int trial = 0; trial < 25; ++trial) {
    auto c = manual_network(four, {{Eigen::MatrixXd::NullaryExpr(6, 4, [&] { return n(rng); }),
                                    Eigen::VectorXd::NullaryExpr(6, [&] { return n(rng); })},
                                   {Eigen::MatrixXd::NullaryExpr(1, 6, [&] { return n(rng); }),
                                    Eigen::VectorXd::NullaryExpr(1, [&] { return n(rng); })}});
    for (std::size_t j = 0; j < 4; ++j) c.view.mean[j] = n(rng), c.view.sdev[j] = pos(rng);
    std::vector<double> raw(4);
    CounterRow row;
    for (std::size_t j = 0; j < 4; ++j) raw[j] = n(rng), row.set(four[j], raw[j]);
    const Label target = trial % 2 ? Label::kMalware : Label::kBenign;
    const auto g = input_gradient(c, row, target);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      auto up = raw, down = raw;
      up[j] += 1e-4;
      down[j] -= 1e-4;
      const double fd = (loss_toward(c, up, target) - loss_toward(c, down, target)) / 2e-4;
      num += (g[j] - fd) * (g[j] - fd);
      den += std::max(g[j] * g[j], fd * fd);
    }
    CHECK(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-8));
  }
}

TEST_CASE("model JSON round trip") {
  const auto d = generate_synthetic_dataset(default_profile(), 30, 30, 4);
  const std::vector<HpcName> view = {hpc::kBranchMisses, hpc::kLlcLoadMisses, hpc::kCpuCycles};
  for (auto algo : {Algo::kDecisionTree, Algo::kNeuralNetwork}) {
    const auto c = train_classifier(algo, TrainingRows::from(d), view, {}, 9);
    const auto back = classifier_from_json(nlohmann::json::parse(to_json(c).dump()));
    CHECK(back.algo == c.algo);
    CHECK(back.view.counters == c.view.counters);
    CHECK(back.view.mean == c.view.mean);
    CHECK(back.view.sdev == c.view.sdev);
    const auto rows = TrainingRows::from(d);
    for (std::size_t i = 0; i < rows.size(); i += 7) {
      CHECK(back.predict(rows.rows[i]).score == c.predict(rows.rows[i]).score);
    }
  }
  CHECK(kind_of([] { classifier_from_json({{"format", "other"}}); }) == ErrorKind::kParse);
}

TEST_CASE("evaluate counts every iteration") {
  const auto d = generate_synthetic_dataset(default_profile(), 5, 5, 4);
  const auto c = train_classifier(Algo::kDecisionTree, TrainingRows::from(d), {hpc::kCacheReferences}, {}, 1);
  CHECK(evaluate(c, d).total() == d.total_rows());
  CHECK(to_string(parse_algo("nn")) == "neural_network");
  CHECK(kind_of([] { parse_algo("svm"); }) == ErrorKind::kConfiguration);
}

}  // TEST_SUITE
