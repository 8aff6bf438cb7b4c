#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <doctest.h>

#include "hmdlab/classifiers.hpp"
#include "hmdlab/error.hpp"
#include "hmdlab/trace.hpp"

namespace hmdlab::testing {

/// One trace with the given counters; `rows` are row-major per iteration.
inline HpcTrace make_trace(std::string id, Label label, std::vector<HpcName> counters,
                           const std::vector<std::vector<std::uint64_t>>& rows) {
  std::vector<std::uint64_t> values;
  for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
  return HpcTrace(std::move(id), label, 10, std::move(counters), std::move(values));
}

/// Each row becomes its own single-iteration app, labelled by `labels`.
inline Dataset one_row_apps(const std::vector<HpcName>& counters, const std::vector<std::vector<std::uint64_t>>& rows,
                            const std::vector<Label>& labels) {
  Dataset d;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.traces.push_back(make_trace("app-" + std::to_string(i), labels[i], counters, {rows[i]}));
  }
  return d;
}

inline bool is_permutation_of(std::vector<HpcName> a, std::vector<HpcName> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

/// Kind of the hmdlab::Error thrown by fn; fails the test when nothing is thrown.
template <typename F>
ErrorKind error_kind(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an hmdlab::Error");
  return ErrorKind::kInvariant;
}

/// Network with identity standardization unless mean/sdev are given.
inline TrainedClassifier hand_network(std::vector<HpcName> counters, std::vector<DenseLayer> layers,
                                      std::vector<double> mean = {}, std::vector<double> sdev = {}) {
  TrainedClassifier c;
  c.algo = Algo::kNeuralNetwork;
  c.view.counters = counters;
  c.view.mean = mean.empty() ? std::vector<double>(counters.size(), 0.0) : mean;
  c.view.sdev = sdev.empty() ? std::vector<double>(counters.size(), 1.0) : sdev;
  c.model = NetworkModel{std::move(layers)};
  return c;
}

/// Depth-1 tree on one counter: malware iff value > threshold (or <= when flipped).
inline TrainedClassifier stump(HpcName counter, double threshold, bool flipped = false) {
  TrainedClassifier c;
  c.algo = Algo::kDecisionTree;
  c.view.counters = {counter};
  c.view.mean = {0.0};
  c.view.sdev = {1.0};
  TreeModel m;
  m.nodes.resize(3);
  m.nodes[0] = {0, threshold, 1, 2, 2, 1};
  m.nodes[1] = {-1, 0.0, -1, -1, 1, flipped ? 1u : 0u};
  m.nodes[2] = {-1, 0.0, -1, -1, 1, flipped ? 0u : 1u};
  c.model = m;
  return c;
}

}  // namespace hmdlab::testing
