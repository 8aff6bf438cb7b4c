#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmdlab/hpc.hpp"
#include "hmdlab/trace.hpp"

namespace hmdlab {

enum class ScoreMethod { kUnivariateChi2, kTreeImportance };

struct FeatureScores {
  ScoreMethod method = ScoreMethod::kUnivariateChi2;
  std::map<HpcName, double> scores;
  std::optional<std::size_t> k_selected;

  /// Counters ordered best first; ties resolve by catalog order.
  std::vector<HpcName> ranked() const;
  /// The first k_selected (or all) entries of ranked().
  std::vector<HpcName> selected() const;
};

struct CorrelationMatrix {
  std::vector<HpcName> counters;
  std::vector<std::vector<double>> r;

  double at(HpcName a, HpcName b) const;
};

struct GroupRationale {
  double mean_intra_correlation = 1.0;
  double mean_combined_rank = 0.0;
  double mean_chi2 = 0.0;
  double mean_importance = 0.0;
};

struct HpcGrouping {
  std::vector<std::vector<HpcName>> groups;
  std::vector<GroupRationale> rationale;
};

/// Frequency-style chi-squared of each counter against the label: observed
/// per-class column sums versus the sums expected if the label were
/// independent of the counter.
FeatureScores univariate_select_k_best(const Dataset& train, std::size_t k);

struct ImportanceOptions {
  std::size_t max_depth = 10;
  std::size_t min_leaf = 5;
};

/// Mean impurity-decrease importance over bootstrapped trees with sqrt(d)
/// features tried per split, normalized to sum to one.
FeatureScores feature_importance_scores(const Dataset& train, std::size_t n_trees, std::uint64_t seed,
                                        const ImportanceOptions& options = {});

/// Pearson r over all iterations pooled across apps.
CorrelationMatrix correlation_matrix(const Dataset& train);

struct GroupingOptions {
  double correlation_threshold = 0.5;
};

/// Greedy grouping: seed each group with the best unused counter by mean of
/// chi2 and importance ranks, then add unused counters (best rank first)
/// whose correlation with every member exceeds the threshold.
HpcGrouping propose_hpc_groups(const FeatureScores& chi2, const FeatureScores& importance,
                               const CorrelationMatrix& corr, std::size_t n_groups, std::size_t r_max,
                               const GroupingOptions& options = {});

/// Heat-map export: r values as a CSV matrix plus a JSON sidecar with the
/// counter order.
void write_heatmap(const CorrelationMatrix& corr, const std::filesystem::path& csv_path,
                   const std::filesystem::path& json_path);

nlohmann::json to_json(const FeatureScores& s);
nlohmann::json to_json(const HpcGrouping& g);

}  // namespace hmdlab
