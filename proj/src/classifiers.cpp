#include "hmdlab/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hmdlab/error.hpp"

namespace hmdlab {

std::string_view to_string(Algo algo) {
  return algo == Algo::kDecisionTree ? "decision_tree" : "neural_network";
}

Algo parse_algo(std::string_view text) {
  if (text == "decision_tree" || text == "tree" || text == "dt") return Algo::kDecisionTree;
  if (text == "neural_network" || text == "network" || text == "nn") return Algo::kNeuralNetwork;
  throw Error(ErrorKind::kConfiguration, "unknown algorithm '" + std::string(text) + "'");
}

TrainingRows TrainingRows::from(const Dataset& d) {
  TrainingRows out;
  out.rows.reserve(d.total_rows());
  out.labels.reserve(d.total_rows());
  for (const auto& t : d.traces) {
    for (std::size_t r = 0; r < t.iterations(); ++r) {
      out.rows.push_back(t.row(r));
      out.labels.push_back(t.label());
    }
  }
  return out;
}

bool TrainingRows::has_both_labels() const {
  bool benign = false, malware = false;
  for (auto l : labels) (l == Label::kMalware ? malware : benign) = true;
  return benign && malware;
}

FeatureView FeatureView::fit(std::vector<HpcName> counters, const TrainingRows& train) {
  if (counters.empty()) throw Error(ErrorKind::kConfiguration, "feature view is empty");
  if (counters.size() > kNumHpcs) throw Error(ErrorKind::kConfiguration, "feature view has too many counters");
  FeatureView v;
  v.counters = std::move(counters);
  const std::size_t d = v.counters.size();
  v.mean.assign(d, 0.0);
  v.sdev.assign(d, 1.0);
  const double n = static_cast<double>(train.size());
  if (train.size() == 0) return v;
  for (std::size_t j = 0; j < d; ++j) {
    const auto c = v.counters[j];
    double sum = 0.0;
    for (const auto& row : train.rows) {
      if (!row.has(c)) throw Error(ErrorKind::kFeatureMismatch, "training rows lack counter " + c.str());
      sum += row[c];
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& row : train.rows) ss += (row[c] - mean) * (row[c] - mean);
    const double sd = std::sqrt(ss / n);
    v.mean[j] = mean;
    v.sdev[j] = sd > 0.0 ? sd : 1.0;
  }
  return v;
}

std::vector<double> FeatureView::extract(const CounterRow& row) const {
  std::vector<double> out(counters.size());
  for (std::size_t j = 0; j < counters.size(); ++j) {
    if (!row.has(counters[j])) throw Error(ErrorKind::kFeatureMismatch, "row lacks counter " + counters[j].str());
    out[j] = row[counters[j]];
  }
  return out;
}

void FeatureView::standardize(std::span<double> raw) const {
  for (std::size_t j = 0; j < raw.size(); ++j) raw[j] = (raw[j] - mean[j]) / sdev[j];
}

double TreeModel::score(std::span<const double> raw) const {
  return nodes[cart::find_leaf(nodes, raw)].p_malware();
}

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double NetworkModel::logit(const Eigen::VectorXd& standardized) const {
  Eigen::VectorXd a = standardized;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd z = layers[l].weights * a + layers[l].bias;
    a = (l + 1 < layers.size()) ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return a(0);
}

double TrainedClassifier::score_raw(std::span<const double> raw) const {
  if (const auto* tree = std::get_if<TreeModel>(&model)) return tree->score(raw);
  const auto& net = std::get<NetworkModel>(model);
  Eigen::VectorXd z(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t j = 0; j < raw.size(); ++j) z(static_cast<Eigen::Index>(j)) = (raw[j] - view.mean[j]) / view.sdev[j];
  return sigmoid(net.logit(z));
}

Prediction TrainedClassifier::predict(const CounterRow& row) const {
  const auto raw = view.extract(row);
  const double s = score_raw(raw);
  return {s >= 0.5 ? Label::kMalware : Label::kBenign, s};
}

Prediction predict_iteration(const TrainedClassifier& c, const CounterRow& row) { return c.predict(row); }

namespace {

cart::DesignMatrix design_matrix(const TrainingRows& train, const FeatureView& view) {
  cart::DesignMatrix m;
  m.rows = train.size();
  m.cols = view.counters.size();
  m.x.reserve(m.rows * m.cols);
  m.y.reserve(m.rows);
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (auto c : view.counters) m.x.push_back(train.rows[i][c]);
    m.y.push_back(train.labels[i] == Label::kMalware ? 1 : 0);
  }
  return m;
}

// Reduced-error pruning: collapse any subtree that does not beat its own
// root-as-leaf on the held-out rows.
std::vector<cart::Node> prune(std::vector<cart::Node> nodes, const cart::DesignMatrix& data,
                              std::span<const std::size_t> holdout) {
  std::vector<std::uint32_t> leaf_errors(nodes.size(), 0);
  std::vector<double> features(data.cols);
  for (auto r : holdout) {
    for (std::size_t j = 0; j < data.cols; ++j) features[j] = data.at(r, j);
    std::size_t i = 0;
    while (true) {
      const bool predicted_malware = nodes[i].p_malware() >= 0.5;
      if (predicted_malware != (data.y[r] == 1)) ++leaf_errors[i];
      if (nodes[i].is_leaf()) break;
      i = static_cast<std::size_t>(features[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
    }
  }

  // Children always have larger indices than their parent, so a reverse
  // sweep visits subtrees bottom-up.
  std::vector<std::uint32_t> subtree_errors(nodes.size(), 0);
  for (std::size_t k = nodes.size(); k-- > 0;) {
    auto& node = nodes[k];
    if (node.is_leaf()) {
      subtree_errors[k] = leaf_errors[k];
      continue;
    }
    const auto below = subtree_errors[node.left] + subtree_errors[node.right];
    if (leaf_errors[k] <= below) {
      node.feature = -1;
      node.left = node.right = -1;
      subtree_errors[k] = leaf_errors[k];
    } else {
      subtree_errors[k] = below;
    }
  }

  // Compact away unreachable nodes, keeping parent-before-child order.
  struct Pending {
    std::size_t old_index;
    int parent;
    bool is_left;
  };
  std::vector<cart::Node> out;
  std::vector<Pending> stack{{0, -1, false}};
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    const int new_index = static_cast<int>(out.size());
    out.push_back(nodes[p.old_index]);
    if (p.parent >= 0) (p.is_left ? out[p.parent].left : out[p.parent].right) = new_index;
    if (!nodes[p.old_index].is_leaf()) {
      stack.push_back({static_cast<std::size_t>(nodes[p.old_index].right), new_index, false});
      stack.push_back({static_cast<std::size_t>(nodes[p.old_index].left), new_index, true});
    }
  }
  return out;
}

}  // namespace

TrainedClassifier train_decision_tree(const TrainingRows& train, std::vector<HpcName> counters,
                                      const TreeOptions& options, std::uint64_t seed) {
  if (counters.empty()) throw Error(ErrorKind::kConfiguration, "decision tree needs a non-empty view");
  if (options.max_depth < 1) throw Error(ErrorKind::kPrecondition, "max_depth must be >= 1");
  if (!(options.prune_fraction >= 0.0 && options.prune_fraction < 1.0)) {
    throw Error(ErrorKind::kPrecondition, "prune_fraction must lie in [0, 1)");
  }
  if (!train.has_both_labels()) throw Error(ErrorKind::kDegenerateInput, "training rows need both labels");

  TrainedClassifier c;
  c.algo = Algo::kDecisionTree;
  c.view = FeatureView::fit(std::move(counters), train);
  c.training_seed = seed;
  const auto data = design_matrix(train, c.view);

  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), 0);
  const auto n_holdout = static_cast<std::size_t>(std::llround(options.prune_fraction * static_cast<double>(data.rows)));
  if (n_holdout > 0) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::span<const std::size_t> holdout(order.data(), n_holdout);
  std::vector<std::size_t> grow_rows(order.begin() + static_cast<std::ptrdiff_t>(n_holdout), order.end());
  std::sort(grow_rows.begin(), grow_rows.end());

  cart::GrowOptions grow_options{options.max_depth, std::max<std::size_t>(options.min_leaf, 1), 0};
  auto nodes = cart::grow(data, grow_rows, grow_options, nullptr, nullptr);
  if (n_holdout > 0) nodes = prune(std::move(nodes), data, holdout);
  c.model = TreeModel{std::move(nodes)};
  return c;
}

TrainedClassifier train_decision_tree(const Dataset& train, std::vector<HpcName> counters,
                                      const TreeOptions& options, std::uint64_t seed) {
  return train_decision_tree(TrainingRows::from(train), std::move(counters), options, seed);
}

TrainedClassifier train_neural_network(const TrainingRows& train, std::vector<HpcName> counters,
                                       const NetworkOptions& options, std::uint64_t seed) {
  if (counters.empty()) throw Error(ErrorKind::kConfiguration, "neural network needs a non-empty view");
  if (options.epochs < 1) throw Error(ErrorKind::kPrecondition, "epochs must be >= 1");
  if (!(options.lr > 0.0)) throw Error(ErrorKind::kPrecondition, "learning rate must be positive");
  if (options.hidden.empty()) throw Error(ErrorKind::kPrecondition, "at least one hidden layer is required");
  for (auto w : options.hidden) {
    if (w == 0) throw Error(ErrorKind::kPrecondition, "hidden layer width must be positive");
  }
  if (!train.has_both_labels()) throw Error(ErrorKind::kDegenerateInput, "training rows need both labels");

  TrainedClassifier c;
  c.algo = Algo::kNeuralNetwork;
  c.view = FeatureView::fit(std::move(counters), train);
  c.training_seed = seed;

  const auto n = static_cast<Eigen::Index>(train.size());
  const auto d = static_cast<Eigen::Index>(c.view.counters.size());
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto raw = c.view.extract(train.rows[static_cast<std::size_t>(i)]);
    c.view.standardize(raw);
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = raw[static_cast<std::size_t>(j)];
    y(i) = train.labels[static_cast<std::size_t>(i)] == Label::kMalware ? 1.0 : 0.0;
  }

  std::mt19937_64 rng(seed);
  NetworkModel net;
  std::vector<std::size_t> widths{static_cast<std::size_t>(d)};
  widths.insert(widths.end(), options.hidden.begin(), options.hidden.end());
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(widths[l]);
    const auto fan_out = static_cast<Eigen::Index>(widths[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> init(-limit, limit);
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    for (Eigen::Index r = 0; r < fan_out; ++r) {
      for (Eigen::Index k = 0; k < fan_in; ++k) layer.weights(r, k) = init(rng);
    }
    net.layers.push_back(std::move(layer));
  }

  const std::size_t n_layers = net.layers.size();
  std::vector<Eigen::MatrixXd> activations(n_layers + 1);  // activations[0] = input, rows are samples
  std::vector<Eigen::MatrixXd> pre(n_layers);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    activations[0] = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
      pre[l] = (activations[l] * net.layers[l].weights.transpose()).rowwise() + net.layers[l].bias.transpose();
      activations[l + 1] = (l + 1 < n_layers) ? Eigen::MatrixXd(pre[l].cwiseMax(0.0)) : pre[l];
    }
    const Eigen::VectorXd logits = pre.back().col(0);
    double loss = 0.0;
    Eigen::MatrixXd delta(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = logits(i);
      loss += y(i) > 0.5 ? softplus(-z) : softplus(z);
      delta(i, 0) = (sigmoid(z) - y(i)) / static_cast<double>(n);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::kDivergence, "non-finite loss at epoch " + std::to_string(epoch));
    }
    for (std::size_t l = n_layers; l-- > 0;) {
      const Eigen::MatrixXd grad_w = delta.transpose() * activations[l];
      const Eigen::VectorXd grad_b = delta.colwise().sum().transpose();
      if (l > 0) {
        delta = (delta * net.layers[l].weights).cwiseProduct(
            (pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
      net.layers[l].weights -= options.lr * grad_w;
      net.layers[l].bias -= options.lr * grad_b;
    }
  }
  for (const auto& layer : net.layers) {
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw Error(ErrorKind::kDivergence, "non-finite weights after epoch " + std::to_string(options.epochs - 1));
    }
  }
  c.model = std::move(net);
  return c;
}

TrainedClassifier train_neural_network(const Dataset& train, std::vector<HpcName> counters,
                                       const NetworkOptions& options, std::uint64_t seed) {
  return train_neural_network(TrainingRows::from(train), std::move(counters), options, seed);
}

TrainedClassifier train_classifier(Algo algo, const TrainingRows& train, std::vector<HpcName> counters,
                                   const ClassifierOptions& options, std::uint64_t seed) {
  return algo == Algo::kDecisionTree ? train_decision_tree(train, std::move(counters), options.tree, seed)
                                     : train_neural_network(train, std::move(counters), options.network, seed);
}

std::vector<double> input_gradient(const TrainedClassifier& c, const CounterRow& row, Label target) {
  const auto* net = std::get_if<NetworkModel>(&c.model);
  if (net == nullptr) throw Error(ErrorKind::kUnsupported, "input gradient requires a neural network");
  const auto raw = c.view.extract(row);
  const auto d = static_cast<Eigen::Index>(raw.size());

  std::vector<Eigen::VectorXd> pre;
  Eigen::VectorXd a(d);
  for (Eigen::Index j = 0; j < d; ++j) a(j) = (raw[static_cast<std::size_t>(j)] - c.view.mean[static_cast<std::size_t>(j)]) / c.view.sdev[static_cast<std::size_t>(j)];
  for (std::size_t l = 0; l < net->layers.size(); ++l) {
    pre.push_back(net->layers[l].weights * a + net->layers[l].bias);
    a = (l + 1 < net->layers.size()) ? Eigen::VectorXd(pre.back().cwiseMax(0.0)) : pre.back();
  }
  // s - y without cancellation: s - 1 = -sigmoid(-logit) when the target is malware.
  Eigen::VectorXd delta(1);
  delta(0) = target == Label::kMalware ? -sigmoid(-a(0)) : sigmoid(a(0));
  for (std::size_t l = net->layers.size(); l-- > 0;) {
    Eigen::VectorXd back = net->layers[l].weights.transpose() * delta;
    if (l > 0) back = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    delta = std::move(back);
  }
  std::vector<double> g(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) g[j] = delta(static_cast<Eigen::Index>(j)) / c.view.sdev[j];
  return g;
}

void ConfusionCounts::add(Label truth, Label predicted) {
  if (truth == Label::kMalware) {
    (predicted == Label::kMalware ? tp : fn) += 1;
  } else {
    (predicted == Label::kMalware ? fp : tn) += 1;
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

Metrics compute_metrics(const ConfusionCounts& cc) {
  const auto total = cc.total();
  if (total == 0) throw Error(ErrorKind::kEmptyEvaluation, "no evaluated iterations");
  Metrics m;
  m.accuracy = static_cast<double>(cc.tp + cc.tn) / static_cast<double>(total);
  if (cc.tp + cc.fp > 0) m.precision = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fp);
  if (cc.tp + cc.fn > 0) m.recall = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fn);
  return m;
}

ConfusionCounts evaluate(const TrainedClassifier& c, const Dataset& d) {
  ConfusionCounts cc;
  for (const auto& t : d.traces) {
    for (std::size_t r = 0; r < t.iterations(); ++r) cc.add(t.label(), c.predict(t.row(r)).label);
  }
  return cc;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(r, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw Error(ErrorKind::kParse, "ragged weight matrix");
    for (Eigen::Index k = 0; k < cols; ++k) m(r, k) = j[r][k].get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const TrainedClassifier& c) {
  nlohmann::json j;
  j["format"] = "hmdlab.classifier";
  j["version"] = 1;
  j["algo"] = to_string(c.algo);
  j["training_seed"] = c.training_seed;
  j["view"] = {{"counters", hpc_names(c.view.counters)}, {"mean", c.view.mean}, {"sdev", c.view.sdev}};
  if (const auto* tree = std::get_if<TreeModel>(&c.model)) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : tree->nodes) {
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                       {"right", n.right}, {"n", n.n}, {"n_malware", n.n_malware}});
    }
    j["tree"] = std::move(nodes);
  } else {
    auto layers = nlohmann::json::array();
    for (const auto& layer : std::get<NetworkModel>(c.model).layers) {
      std::vector<double> bias(layer.bias.data(), layer.bias.data() + layer.bias.size());
      layers.push_back({{"weights", matrix_to_json(layer.weights)}, {"bias", bias}});
    }
    j["network"] = std::move(layers);
  }
  return j;
}

TrainedClassifier classifier_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "hmdlab.classifier" || j.at("version") != 1) {
      throw Error(ErrorKind::kParse, "unsupported classifier format/version");
    }
    TrainedClassifier c;
    c.algo = parse_algo(j.at("algo").get<std::string>());
    c.training_seed = j.at("training_seed").get<std::uint64_t>();
    const auto names = j.at("view").at("counters").get<std::vector<std::string>>();
    c.view.counters = parse_hpc_list(names);
    c.view.mean = j.at("view").at("mean").get<std::vector<double>>();
    c.view.sdev = j.at("view").at("sdev").get<std::vector<double>>();
    if (c.view.mean.size() != c.view.counters.size() || c.view.sdev.size() != c.view.counters.size()) {
      throw Error(ErrorKind::kParse, "view scaling does not match counters");
    }
    if (c.algo == Algo::kDecisionTree) {
      TreeModel tree;
      for (const auto& n : j.at("tree")) {
        cart::Node node;
        node.feature = n.at("feature").get<int>();
        node.threshold = n.at("threshold").get<double>();
        node.left = n.at("left").get<int>();
        node.right = n.at("right").get<int>();
        node.n = n.at("n").get<std::uint32_t>();
        node.n_malware = n.at("n_malware").get<std::uint32_t>();
        tree.nodes.push_back(node);
      }
      if (tree.nodes.empty()) throw Error(ErrorKind::kParse, "tree has no nodes");
      c.model = std::move(tree);
    } else {
      NetworkModel net;
      for (const auto& l : j.at("network")) {
        const auto bias = l.at("bias").get<std::vector<double>>();
        DenseLayer layer{matrix_from_json(l.at("weights")),
                         Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()))};
        net.layers.push_back(std::move(layer));
      }
      if (net.layers.empty()) throw Error(ErrorKind::kParse, "network has no layers");
      c.model = std::move(net);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("classifier JSON: ") + e.what());
  }
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision ? nlohmann::json(*m.precision) : nlohmann::json(nullptr);
  j["recall"] = m.recall ? nlohmann::json(*m.recall) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ConfusionCounts& cc) {
  return {{"tp", cc.tp}, {"tn", cc.tn}, {"fp", cc.fp}, {"fn", cc.fn}};
}

}  // namespace hmdlab
