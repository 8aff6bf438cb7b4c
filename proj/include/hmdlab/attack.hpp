#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmdlab/classifiers.hpp"
#include "hmdlab/hpc.hpp"
#include "hmdlab/trace.hpp"

namespace hmdlab {

/// Side-effect events caused by one injected event of a controllable counter.
struct Coupling {
  double instructions = 0.0;
  double branch_instructions = 0.0;
};

struct AttackBudget {
  double epsilon = 1.0;
  std::vector<HpcName> controllable;
  std::map<HpcName, Coupling> coupling;
  std::map<HpcName, std::uint64_t> max_inject;

  /// branch-misses and LLC-load-misses under the default coupling.
  static AttackBudget defaults();
  void validate() const;
};

/// Events added to each iteration row, indexed by catalog position.
struct Perturbation {
  std::vector<std::array<std::uint64_t, kNumHpcs>> deltas;

  static Perturbation zero(std::size_t rows) { return {std::vector<std::array<std::uint64_t, kNumHpcs>>(rows, std::array<std::uint64_t, kNumHpcs>{})}; }
  std::size_t rows() const { return deltas.size(); }
  std::uint64_t at(std::size_t row, HpcName c) const { return deltas[row][c.index()]; }
  bool is_zero() const;

  /// Row-wise sum; throws shape/range errors.
  Perturbation operator+(const Perturbation& other) const;
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

using LabelOracle = std::function<Label(const CounterRow&)>;

struct SurrogateReport {
  TrainedClassifier surrogate;
  double agreement = 0.0;
  std::vector<std::pair<Algo, double>> candidates;  // held-out agreement per candidate
};

/// Queries the victim on every probe row, fits one candidate per algorithm on
/// 70% of the probe apps and keeps the one that agrees most with the victim
/// on the remaining 30%. `counters` is the feature set the attacker harvests;
/// empty means every counter of the first probe trace.
SurrogateReport reverse_engineer(const LabelOracle& victim, const Dataset& probe,
                                 const std::vector<Algo>& candidate_algos, std::uint64_t seed,
                                 std::vector<HpcName> counters = {},
                                 const ClassifierOptions& options = {});

/// Sign-gradient step that raises the surrogate's loss on the malware label,
/// scaled by each counter's training sdev and projected onto what an
/// injector can do: positive integer additions on controllable counters plus
/// their coupled side effects, capped by max_inject.
Perturbation craft_perturbation(const TrainedClassifier& surrogate, const HpcTrace& trace,
                                const AttackBudget& budget);

HpcTrace inject(const HpcTrace& trace, const Perturbation& p);

/// Adds a flat number of branch misses (with their coupling) to every row.
Perturbation strengthen(const Perturbation& p, std::uint64_t extra_branch_misses,
                        const AttackBudget& budget = AttackBudget::defaults());

nlohmann::json to_json(const Perturbation& p);
Perturbation perturbation_from_json(const nlohmann::json& j);

}  // namespace hmdlab
