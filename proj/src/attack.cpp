#include "hmdlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "hmdlab/error.hpp"

namespace hmdlab {

AttackBudget AttackBudget::defaults() {
  AttackBudget b;
  b.epsilon = 1.0;
  b.controllable = {hpc::kBranchMisses, hpc::kLlcLoadMisses};
  b.coupling[hpc::kBranchMisses] = Coupling{6.0, 5.0};
  b.coupling[hpc::kLlcLoadMisses] = Coupling{3.0, 0.0};
  return b;
}

void AttackBudget::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw Error(ErrorKind::kPrecondition, "epsilon must lie in (0, 1]");
  for (auto c : controllable) {
    if (c != hpc::kBranchMisses && c != hpc::kLlcLoadMisses) {
      throw Error(ErrorKind::kConfiguration, "counter " + c.str() + " is not controllable by the injector");
    }
  }
  for (const auto& [c, k] : coupling) {
    if (!std::isfinite(k.instructions) || !std::isfinite(k.branch_instructions) || k.instructions < 0.0 ||
        k.branch_instructions < 0.0) {
      throw Error(ErrorKind::kConfiguration, "coupling for " + c.str() + " must be finite and non-negative");
    }
  }
}

bool Perturbation::is_zero() const {
  return std::all_of(deltas.begin(), deltas.end(), [](const auto& row) {
    return std::all_of(row.begin(), row.end(), [](std::uint64_t v) { return v == 0; });
  });
}

namespace {

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  if (a > std::numeric_limits<std::uint64_t>::max() - b) throw Error(ErrorKind::kRange, "counter overflow");
  return a + b;
}

std::uint64_t coupled_events(double per_event, std::uint64_t events) {
  const double v = std::round(per_event * static_cast<double>(events));
  if (v >= 18446744073709551615.0) throw Error(ErrorKind::kRange, "coupled event count overflows");
  return static_cast<std::uint64_t>(v);
}

void add_coupling(std::array<std::uint64_t, kNumHpcs>& row, const Coupling& k, std::uint64_t events) {
  auto& instr = row[hpc::kInstructions.index()];
  auto& branch = row[hpc::kBranchInstructions.index()];
  instr = checked_add(instr, coupled_events(k.instructions, events));
  branch = checked_add(branch, coupled_events(k.branch_instructions, events));
}

}  // namespace

Perturbation Perturbation::operator+(const Perturbation& other) const {
  if (rows() != other.rows()) throw Error(ErrorKind::kShape, "perturbation row counts differ");
  Perturbation out = *this;
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t j = 0; j < kNumHpcs; ++j) out.deltas[r][j] = checked_add(out.deltas[r][j], other.deltas[r][j]);
  }
  return out;
}

SurrogateReport reverse_engineer(const LabelOracle& victim, const Dataset& probe,
                                 const std::vector<Algo>& candidate_algos, std::uint64_t seed,
                                 std::vector<HpcName> counters, const ClassifierOptions& options) {
  if (candidate_algos.empty()) throw Error(ErrorKind::kConfiguration, "no candidate algorithms");
  if (probe.traces.size() < 2) throw Error(ErrorKind::kPrecondition, "probe needs at least two apps");
  if (counters.empty()) counters = probe.traces.front().counters();

  std::vector<std::size_t> apps(probe.traces.size());
  std::iota(apps.begin(), apps.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(apps.begin(), apps.end(), rng);
  auto n_fit = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(apps.size())));
  n_fit = std::clamp<std::size_t>(n_fit, 1, apps.size() - 1);

  auto query = [&](std::size_t first, std::size_t last) {
    TrainingRows rows;
    for (std::size_t k = first; k < last; ++k) {
      const auto& t = probe.traces[apps[k]];
      for (std::size_t r = 0; r < t.iterations(); ++r) {
        auto row = t.row(r);
        Label answer;
        try {
          answer = victim(row);
        } catch (const std::exception& e) {
          throw Error(ErrorKind::kOracle, std::string("victim query failed: ") + e.what());
        }
        rows.rows.push_back(row);
        rows.labels.push_back(answer);
      }
    }
    return rows;
  };
  const TrainingRows fit = query(0, n_fit);
  const TrainingRows held = query(n_fit, apps.size());

  SurrogateReport report;
  bool have_best = false;
  for (auto algo : candidate_algos) {
    auto candidate = train_classifier(algo, fit, counters, options, seed);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < held.size(); ++i) agree += candidate.predict(held.rows[i]).label == held.labels[i];
    const double agreement = held.size() == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(held.size());
    report.candidates.emplace_back(algo, agreement);
    if (!have_best || agreement > report.agreement) {
      report.surrogate = std::move(candidate);
      report.agreement = agreement;
      have_best = true;
    }
  }
  return report;
}

Perturbation craft_perturbation(const TrainedClassifier& surrogate, const HpcTrace& trace,
                                const AttackBudget& budget) {
  if (surrogate.algo != Algo::kNeuralNetwork) {
    throw Error(ErrorKind::kUnsupported, "perturbations are predicted from a gradient-based surrogate");
  }
  if (trace.label() != Label::kMalware) {
    throw Error(ErrorKind::kPrecondition, "only malware traces are camouflaged");
  }
  budget.validate();

  Perturbation p = Perturbation::zero(trace.iterations());
  for (std::size_t r = 0; r < trace.iterations(); ++r) {
    const auto row = trace.row(r);
    const auto grad = input_gradient(surrogate, row, Label::kMalware);
    auto& out = p.deltas[r];
    for (auto c : budget.controllable) {
      auto it = std::find(surrogate.view.counters.begin(), surrogate.view.counters.end(), c);
      if (it == surrogate.view.counters.end()) continue;
      const auto j = static_cast<std::size_t>(it - surrogate.view.counters.begin());
      const double sign = (grad[j] > 0.0) - (grad[j] < 0.0);
      const double step = budget.epsilon * sign * surrogate.view.sdev[j];
      if (step <= 0.0) continue;
      out[c.index()] = checked_add(out[c.index()], static_cast<std::uint64_t>(std::ceil(step)));
    }
    for (auto c : budget.controllable) {
      const auto events = out[c.index()];
      if (events == 0) continue;
      if (auto k = budget.coupling.find(c); k != budget.coupling.end()) add_coupling(out, k->second, events);
    }
    for (const auto& [c, cap] : budget.max_inject) out[c.index()] = std::min(out[c.index()], cap);
  }
  return p;
}

HpcTrace inject(const HpcTrace& trace, const Perturbation& p) {
  if (p.rows() != trace.iterations()) {
    throw Error(ErrorKind::kShape, "perturbation has " + std::to_string(p.rows()) + " rows, trace has " +
                                       std::to_string(trace.iterations()));
  }
  std::vector<std::uint64_t> values = trace.values();
  const std::size_t width = trace.width();
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t j = 0; j < kNumHpcs; ++j) {
      const auto delta = p.deltas[r][j];
      if (delta == 0) continue;
      const auto col = trace.column_of(HpcName::from_index(j));
      if (col < 0) throw Error(ErrorKind::kShape, "trace does not sample " + std::string(kHpcCatalog[j]));
      auto& cell = values[r * width + static_cast<std::size_t>(col)];
      cell = checked_add(cell, delta);
    }
  }
  return HpcTrace(trace.app_id(), trace.label(), trace.interval_ms(), trace.counters(), std::move(values));
}

Perturbation strengthen(const Perturbation& p, std::uint64_t extra_branch_misses, const AttackBudget& budget) {
  Perturbation out = p;
  if (extra_branch_misses == 0) return out;
  Coupling k;
  if (auto it = budget.coupling.find(hpc::kBranchMisses); it != budget.coupling.end()) k = it->second;
  for (auto& row : out.deltas) {
    auto& bm = row[hpc::kBranchMisses.index()];
    bm = checked_add(bm, extra_branch_misses);
    add_coupling(row, k, extra_branch_misses);
  }
  return out;
}

nlohmann::json to_json(const Perturbation& p) {
  auto rows = nlohmann::json::array();
  for (const auto& row : p.deltas) {
    auto entry = nlohmann::json::object();
    for (std::size_t j = 0; j < kNumHpcs; ++j) {
      if (row[j] != 0) entry[std::string(kHpcCatalog[j])] = row[j];
    }
    rows.push_back(std::move(entry));
  }
  return {{"format", "hmdlab.perturbation"}, {"version", 1}, {"rows", std::move(rows)}};
}

Perturbation perturbation_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "hmdlab.perturbation" || j.at("version") != 1) {
      throw Error(ErrorKind::kParse, "unsupported perturbation format/version");
    }
    Perturbation p = Perturbation::zero(j.at("rows").size());
    std::size_t r = 0;
    for (const auto& row : j.at("rows")) {
      for (const auto& [name, value] : row.items()) p.deltas[r][HpcName::parse(name).index()] = value.get<std::uint64_t>();
      ++r;
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("perturbation JSON: ") + e.what());
  }
}

}  // namespace hmdlab
