#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmdlab/classifiers.hpp"
#include "hmdlab/features.hpp"
#include "hmdlab/trace.hpp"

namespace hmdlab {

/// 16-bit Fibonacci LFSR, taps 16,15,13,4 (x^16 + x^15 + x^13 + x^4 + 1).
class Lfsr {
 public:
  /// A zero seed is remapped to 1.
  explicit Lfsr(std::uint16_t seed = 1) : state_(seed == 0 ? 1 : seed) {}

  std::uint16_t state() const { return state_; }

  /// Advances one step and returns the new state.
  std::uint16_t next() {
    const std::uint16_t bit = (state_ ^ (state_ >> 1) ^ (state_ >> 3) ^ (state_ >> 12)) & 1u;
    state_ = static_cast<std::uint16_t>((state_ >> 1) | (bit << 15));
    return state_;
  }

  friend bool operator==(const Lfsr&, const Lfsr&) = default;

 private:
  std::uint16_t state_;
};

std::pair<Lfsr, std::uint16_t> lfsr_next(Lfsr l);

/// Folds a 64-bit seed into a non-zero LFSR state.
Lfsr lfsr_from_seed(std::uint64_t seed);

struct SelectionPolicy {
  enum class Kind { kUniform, kPriority };
  Kind kind = Kind::kUniform;
  std::size_t best_index = 0;

  static SelectionPolicy uniform() { return {}; }
  static SelectionPolicy priority(std::size_t best) { return {Kind::kPriority, best}; }
};

/// Exact-uniform draw from 0..n-1 by rejection over LFSR outputs.
std::size_t uniform_index(Lfsr& lfsr, std::size_t n);

/// Uniform policy: uniform_index over the pool. Priority policy: even ticks
/// return the best classifier, odd ticks draw uniformly among the others.
std::size_t select_classifier(const SelectionPolicy& policy, std::size_t pool_size, std::size_t tick, Lfsr& lfsr);

struct MtdPool {
  std::vector<TrainedClassifier> classifiers;
  SelectionPolicy policy;
  Lfsr lfsr;

  /// At least two members, pairwise-disjoint views, valid priority index.
  void validate() const;
};

MtdPool design_pool(const TrainingRows& train, const std::vector<std::vector<HpcName>>& groups,
                    const std::vector<Algo>& algos, const SelectionPolicy& policy, std::uint64_t seed,
                    const ClassifierOptions& options = {});
MtdPool design_pool(const Dataset& train, const HpcGrouping& grouping, const std::vector<Algo>& algos,
                    const SelectionPolicy& policy, std::uint64_t seed, const ClassifierOptions& options = {});

struct IterationRecord {
  std::size_t classifier;
  Label predicted;
  Label truth;
};

struct MtdRunReport {
  std::vector<IterationRecord> iterations;
  std::uint64_t pass = 0;
  std::uint64_t fail = 0;
  ConfusionCounts confusion;
  Metrics metrics;
  std::vector<std::uint64_t> histogram;

  double accuracy() const { return static_cast<double>(pass) / static_cast<double>(pass + fail); }
};

/// Routes every iteration row, in dataset order, to the classifier chosen for
/// that tick. Uses a private copy of the pool's LFSR.
MtdRunReport classify_stream(const MtdPool& pool, const Dataset& test);

nlohmann::json to_json(const MtdRunReport& r, bool include_iterations = false);

struct SweepRow {
  std::size_t pool_size = 0;
  double mean_accuracy = 0.0;
  /// Schedule identity from standalone member accuracies: mean of members
  /// (uniform) or 0.5*best + 0.5*mean(others) (priority). Averaged over seeds.
  double expected_accuracy = 0.0;
  std::vector<double> per_seed;
};

/// For each size k, pools of the first k groups (one algorithm throughout)
/// evaluated on `test`, averaged over seeds. Under the priority policy the
/// member with the best training accuracy gets priority.
std::vector<SweepRow> evaluate_pool_sweep(const Dataset& train, const Dataset& test, const HpcGrouping& grouping,
                                          Algo algo, SelectionPolicy::Kind policy,
                                          const std::vector<std::size_t>& sizes,
                                          const std::vector<std::uint64_t>& seeds,
                                          const ClassifierOptions& options = {});

}  // namespace hmdlab
