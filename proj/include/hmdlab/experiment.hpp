#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmdlab/attack.hpp"
#include "hmdlab/classifiers.hpp"
#include "hmdlab/hpc.hpp"
#include "hmdlab/mtd.hpp"

namespace hmdlab {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Recipe { kBaseline, kAttack, kMtd, kPoolSweep, kPrioritySweep, kMixed, kResilience, kCombinatorics };

std::string_view to_string(Recipe r);
Recipe parse_recipe(std::string_view text);
const std::vector<std::string>& recipe_names();

struct DatasetConfig {
  std::string source = "synthetic";  // or "csv"
  std::filesystem::path csv_path;
  std::size_t train_per_class = 300;
  std::size_t test_per_class = 50;
  // Attacker's own probe programs, generated independently of the victim data.
  std::size_t probe_per_class = 100;
  std::uint64_t probe_seed_offset = 1000;
};

struct SweepConfig {
  std::size_t n_groups = 5;
  std::size_t r_max = 4;
  std::vector<std::size_t> sizes = {2, 3, 4, 5};
  double correlation_threshold = 0.5;
  std::size_t importance_trees = 20;
};

struct CombinatoricsConfig {
  std::uint64_t h_t = 20;
  std::uint64_t r_max = 4;
  std::uint64_t h = 8;
  std::vector<std::uint64_t> sweep_h_t = {4, 8, 12, 16, 20, 30, 40, 50, 60, 70, 80, 90, 100};
};

struct ExperimentConfig {
  Recipe recipe = Recipe::kBaseline;
  DatasetConfig dataset;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<Algo> algos = {Algo::kDecisionTree, Algo::kNeuralNetwork};
  std::vector<HpcName> victim_counters = {hpc::kBranchInstructions, hpc::kBranchMisses, hpc::kInstructions,
                                          hpc::kLlcLoadMisses};
  ClassifierOptions classifier;
  AttackBudget budget = AttackBudget::defaults();
  std::vector<std::vector<HpcName>> mtd_groups = {
      {hpc::kBranchInstructions, hpc::kBranchMisses, hpc::kBusCycles, hpc::kCacheMisses},
      {hpc::kCacheReferences, hpc::kCpuCycles, hpc::kInstructions}};
  SelectionPolicy::Kind mtd_policy = SelectionPolicy::Kind::kUniform;
  SweepConfig sweep;
  // Victim/pool algorithm for the resilience recipe and the victim attacked in the mixed recipe.
  Algo single_algo = Algo::kNeuralNetwork;
  std::vector<std::uint64_t> extra_branch_misses = {10'000'000, 20'000'000, 40'000'000};
  CombinatoricsConfig combinatorics;
  bool include_iterations = false;
  std::filesystem::path out_dir;

  void validate() const;
};

/// Defaults, overlaid by a JSON object. Unknown keys are configuration errors.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

struct ExperimentReport {
  nlohmann::json results;      // deterministic
  double wall_clock_seconds = 0.0;
  ExperimentConfig config;

  /// format/version/tool/config/results, plus a separate "timing" object.
  nlohmann::json to_json() const;
};

ExperimentReport run(const ExperimentConfig& config);

/// Writes <out_dir>/<recipe>.json atomically; returns the path.
std::filesystem::path write_report(const ExperimentReport& report, const std::filesystem::path& out_dir);

struct PlotRow {
  std::string series;
  std::string x;
  double y;
};

const std::vector<std::string>& figure_ids();

/// Tidy (series, x, y) projection of a saved report for one figure.
std::vector<PlotRow> plot_data(const nlohmann::json& report, std::string_view figure);
void write_plot_csv(const std::vector<PlotRow>& rows, std::ostream& out);

}  // namespace hmdlab
