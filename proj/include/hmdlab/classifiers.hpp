#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmdlab/cart.hpp"
#include "hmdlab/hpc.hpp"
#include "hmdlab/trace.hpp"

namespace hmdlab {

enum class Algo { kDecisionTree, kNeuralNetwork };

std::string_view to_string(Algo algo);
Algo parse_algo(std::string_view text);

/// Per-iteration rows with their labels, independent of the trace they came
/// from. Surrogate training relabels rows with victim answers, so labels live
/// per row rather than per trace.
struct TrainingRows {
  std::vector<CounterRow> rows;
  std::vector<Label> labels;

  static TrainingRows from(const Dataset& d);
  std::size_t size() const { return rows.size(); }
  bool has_both_labels() const;
};

/// The ordered counter subset a classifier consumes and the standardization
/// fitted on its training rows.
struct FeatureView {
  std::vector<HpcName> counters;
  std::vector<double> mean;
  std::vector<double> sdev;

  /// Constant columns get sdev = 1.
  static FeatureView fit(std::vector<HpcName> counters, const TrainingRows& train);

  /// Raw values in view order; throws feature-mismatch on a missing counter.
  std::vector<double> extract(const CounterRow& row) const;
  void standardize(std::span<double> raw) const;
};

struct TreeOptions {
  std::size_t max_depth = 8;
  std::size_t min_leaf = 5;
  double prune_fraction = 0.2;
};

struct NetworkOptions {
  std::vector<std::size_t> hidden = {16};
  std::size_t epochs = 500;
  double lr = 0.05;
};

struct TreeModel {
  std::vector<cart::Node> nodes;

  double score(std::span<const double> raw) const;
  std::size_t node_count() const { return nodes.size(); }
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

/// ReLU hidden layers and one sigmoid output unit, on standardized inputs.
struct NetworkModel {
  std::vector<DenseLayer> layers;

  double logit(const Eigen::VectorXd& standardized) const;
};

struct Prediction {
  Label label;
  double score;  // malware probability
};

struct TrainedClassifier {
  Algo algo = Algo::kDecisionTree;
  FeatureView view;
  std::variant<TreeModel, NetworkModel> model;
  std::uint64_t training_seed = 0;

  double score_raw(std::span<const double> raw) const;
  Prediction predict(const CounterRow& row) const;
};

TrainedClassifier train_decision_tree(const TrainingRows& train, std::vector<HpcName> counters,
                                      const TreeOptions& options, std::uint64_t seed);
TrainedClassifier train_decision_tree(const Dataset& train, std::vector<HpcName> counters,
                                      const TreeOptions& options, std::uint64_t seed);

TrainedClassifier train_neural_network(const TrainingRows& train, std::vector<HpcName> counters,
                                       const NetworkOptions& options, std::uint64_t seed);
TrainedClassifier train_neural_network(const Dataset& train, std::vector<HpcName> counters,
                                       const NetworkOptions& options, std::uint64_t seed);

struct ClassifierOptions {
  TreeOptions tree;
  NetworkOptions network;
};

TrainedClassifier train_classifier(Algo algo, const TrainingRows& train, std::vector<HpcName> counters,
                                   const ClassifierOptions& options, std::uint64_t seed);

/// Malware iff score >= 0.5.
Prediction predict_iteration(const TrainedClassifier& c, const CounterRow& row);

/// d(cross-entropy toward `target`)/d(raw counter value), in view order.
std::vector<double> input_gradient(const TrainedClassifier& c, const CounterRow& row, Label target);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  void add(Label truth, Label predicted);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Precision and recall are empty when their denominator is zero.
struct Metrics {
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
};

Metrics compute_metrics(const ConfusionCounts& cc);

/// Per-iteration confusion counts over every row of `d`.
ConfusionCounts evaluate(const TrainedClassifier& c, const Dataset& d);

nlohmann::json to_json(const TrainedClassifier& c);
TrainedClassifier classifier_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const ConfusionCounts& cc);

}  // namespace hmdlab
