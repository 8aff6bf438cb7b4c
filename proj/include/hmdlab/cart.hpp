#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace hmdlab::cart {

/// Dense row-major design matrix with binary targets (1 = malware).
struct DesignMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> x;
  std::vector<std::uint8_t> y;

  double at(std::size_t r, std::size_t c) const { return x[r * cols + c]; }
};

/// Binary CART node. Rows with value <= threshold go left.
struct Node {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::uint32_t n = 0;
  std::uint32_t n_malware = 0;

  bool is_leaf() const { return feature < 0; }
  double p_malware() const { return n == 0 ? 0.0 : static_cast<double>(n_malware) / n; }
};

struct GrowOptions {
  std::size_t max_depth = 8;
  std::size_t min_leaf = 1;
  std::size_t mtry = 0;  // features tried per split; 0 = all
};

/// Grows a Gini CART on the given row indices (duplicates allowed, as in a
/// bootstrap sample). When `importance` is non-null, the weighted impurity
/// decrease of every split is accumulated per feature. `rng` is required
/// when mtry > 0.
std::vector<Node> grow(const DesignMatrix& data, std::span<const std::size_t> rows,
                       const GrowOptions& options, std::mt19937_64* rng,
                       std::vector<double>* importance);

/// Index of the leaf reached by `features`.
std::size_t find_leaf(const std::vector<Node>& nodes, std::span<const double> features);

std::size_t depth(const std::vector<Node>& nodes);

}  // namespace hmdlab::cart
