#include "hmdlab/cart.hpp"

#include <algorithm>
#include <numeric>

namespace hmdlab::cart {
namespace {

double gini(double n, double n_pos) {
  if (n <= 0.0) return 0.0;
  const double p = n_pos / n;
  return 2.0 * p * (1.0 - p);
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;  // weighted child impurity, n_l*g_l + n_r*g_r
};

class Grower {
 public:
  Grower(const DesignMatrix& data, const GrowOptions& options, std::mt19937_64* rng,
         std::vector<double>* importance)
      : data_(data), options_(options), rng_(rng), importance_(importance) {}

  std::vector<Node> run(std::vector<std::size_t> rows) {
    total_ = static_cast<double>(rows.size());
    build(rows, 0);
    return std::move(nodes_);
  }

 private:
  int build(std::vector<std::size_t>& rows, std::size_t depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Node node;
    node.n = static_cast<std::uint32_t>(rows.size());
    for (auto r : rows) node.n_malware += data_.y[r];
    nodes_[id] = node;

    const bool pure = node.n_malware == 0 || node.n_malware == node.n;
    if (pure || depth >= options_.max_depth || rows.size() < 2 * options_.min_leaf) return id;

    const Split best = find_split(rows, node);
    if (best.feature < 0) return id;

    if (importance_ != nullptr) {
      (*importance_)[best.feature] += (node.n * gini(node.n, node.n_malware) - best.impurity) / total_;
    }

    std::vector<std::size_t> left, right;
    for (auto r : rows) (data_.at(r, best.feature) <= best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    nodes_[id].feature = best.feature;
    nodes_[id].threshold = best.threshold;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> features(data_.cols);
    std::iota(features.begin(), features.end(), 0);
    if (options_.mtry == 0 || options_.mtry >= data_.cols) return features;
    // Partial Fisher-Yates, then restore column order so ties resolve by column.
    for (std::size_t i = 0; i < options_.mtry; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, data_.cols - 1);
      std::swap(features[i], features[pick(*rng_)]);
    }
    features.resize(options_.mtry);
    std::sort(features.begin(), features.end());
    return features;
  }

  Split find_split(const std::vector<std::size_t>& rows, const Node& node) {
    const double n = node.n;
    const double parent = n * gini(n, node.n_malware);
    Split best;
    best.impurity = parent;
    constexpr double kMinGain = 1e-12;

    std::vector<std::pair<double, std::uint8_t>> column(rows.size());
    for (auto f : candidate_features()) {
      for (std::size_t i = 0; i < rows.size(); ++i) column[i] = {data_.at(rows[i], f), data_.y[rows[i]]};
      std::sort(column.begin(), column.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_n = 0.0, left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left_n += 1.0;
        left_pos += column[i].second;
        if (column[i].first == column[i + 1].first) continue;
        if (left_n < options_.min_leaf || n - left_n < options_.min_leaf) continue;
        const double right_n = n - left_n;
        const double impurity = left_n * gini(left_n, left_pos) + right_n * gini(right_n, node.n_malware - left_pos);
        if (impurity < best.impurity - kMinGain) {
          best.feature = static_cast<int>(f);
          best.threshold = column[i].first + (column[i + 1].first - column[i].first) / 2.0;
          if (best.threshold >= column[i + 1].first) best.threshold = column[i].first;
          best.impurity = impurity;
        }
      }
    }
    return best;
  }

  const DesignMatrix& data_;
  GrowOptions options_;
  std::mt19937_64* rng_;
  std::vector<double>* importance_;
  std::vector<Node> nodes_;
  double total_ = 0.0;
};

}  // namespace

std::vector<Node> grow(const DesignMatrix& data, std::span<const std::size_t> rows,
                       const GrowOptions& options, std::mt19937_64* rng,
                       std::vector<double>* importance) {
  if (importance != nullptr) importance->assign(data.cols, 0.0);
  Grower grower(data, options, rng, importance);
  return grower.run(std::vector<std::size_t>(rows.begin(), rows.end()));
}

std::size_t find_leaf(const std::vector<Node>& nodes, std::span<const double> features) {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    i = static_cast<std::size_t>(features[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  }
  return i;
}

std::size_t depth(const std::vector<Node>& nodes) {
  std::size_t deepest = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes[i].is_leaf()) {
      stack.push_back({static_cast<std::size_t>(nodes[i].left), d + 1});
      stack.push_back({static_cast<std::size_t>(nodes[i].right), d + 1});
    }
  }
  return deepest;
}

}  // namespace hmdlab::cart
