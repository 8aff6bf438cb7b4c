#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hmdlab/hpc.hpp"

namespace hmdlab {

enum class Label { kBenign = 0, kMalware = 1 };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

/// Counter readings for one application: one row per sampling iteration,
/// one column per counter. Immutable after construction.
class HpcTrace {
 public:
  HpcTrace(std::string app_id, Label label, std::uint32_t interval_ms,
           std::vector<HpcName> counters, std::vector<std::uint64_t> values);

  const std::string& app_id() const { return app_id_; }
  Label label() const { return label_; }
  std::uint32_t interval_ms() const { return interval_ms_; }
  const std::vector<HpcName>& counters() const { return counters_; }
  std::size_t iterations() const { return values_.size() / counters_.size(); }
  std::size_t width() const { return counters_.size(); }

  std::uint64_t at(std::size_t row, std::size_t col) const { return values_[row * width() + col]; }
  std::span<const std::uint64_t> row_values(std::size_t row) const {
    return {values_.data() + row * width(), width()};
  }
  const std::vector<std::uint64_t>& values() const { return values_; }

  /// Column of `c`, or -1 when the trace does not sample it.
  std::ptrdiff_t column_of(HpcName c) const;
  CounterRow row(std::size_t row) const;

  friend bool operator==(const HpcTrace&, const HpcTrace&) = default;

 private:
  std::string app_id_;
  Label label_;
  std::uint32_t interval_ms_;
  std::vector<HpcName> counters_;
  std::vector<std::uint64_t> values_;
};

enum class Provenance { kSynthetic, kIngested };

struct Dataset {
  std::vector<HpcTrace> traces;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::kSynthetic;

  std::size_t total_rows() const;
  std::size_t count(Label label) const;
  bool has_both_labels() const { return count(Label::kBenign) > 0 && count(Label::kMalware) > 0; }

  /// Throws on duplicate app ids.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Class-conditional lognormal model with shared latent factors:
/// log(x_j) = log_mean[c][j] + sum_k loadings[j][k] * f_k + log_sdev[c][j] * e_j.
struct SyntheticProfile {
  static constexpr std::size_t kFactors = 5;

  std::array<std::array<double, kNumHpcs>, 2> log_mean{};
  std::array<std::array<double, kNumHpcs>, 2> log_sdev{};
  std::array<std::array<double, kFactors>, kNumHpcs> loadings{};
  std::uint32_t iterations = 20;
  std::uint32_t interval_ms = 10;

  /// Throws a profile error on non-positive sdev, non-finite values or zero
  /// iterations.
  void validate() const;
};

SyntheticProfile default_profile();

Dataset generate_synthetic_dataset(const SyntheticProfile& profile, std::size_t n_benign,
                                   std::size_t n_malware, std::uint64_t seed);

Dataset parse_perf_csv(const std::filesystem::path& path);
Dataset parse_perf_csv(std::istream& in);

/// Writes the ingestion format. All traces must share one counter list.
void write_perf_csv(const Dataset& d, std::ostream& out);
void write_perf_csv(const Dataset& d, const std::filesystem::path& path);

std::pair<Dataset, Dataset> split_train_test(const Dataset& d, std::size_t n_test_per_class,
                                             std::uint64_t seed);

}  // namespace hmdlab
