#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hmdlab {

using BigInt = boost::multiprecision::cpp_int;

/// An exact non-negative count with its base-10 logarithm.
struct BigCount {
  BigInt exact;
  double log10 = 0.0;  // -inf for zero

  static BigCount of(BigInt value);

  std::string decimal() const { return exact.str(); }
  std::size_t digits() const { return decimal().size(); }
  /// Leading mantissa m in [1, 10) with exact ~= m * 10^floor(log10).
  double mantissa() const;
};

/// log10 of a non-negative big integer from its top 64 bits and bit length.
double big_log10(const BigInt& value);

struct ExactRational {
  BigInt numerator;
  BigInt denominator;

  /// Scientific notation with `significant` digits.
  std::string decimal(int significant = 12) const;
  double value() const;
};

BigCount binomial(std::uint64_t n, std::uint64_t k);

/// Sum of C(h_t, i) for i = 1..r_max.
BigCount total_classifiers(std::uint64_t h_t, std::uint64_t r_max);

/// 2^n_h - n_h - 1: the number of pools of two or more distinct classifiers.
BigCount total_combinations(const BigCount& n_h);

/// 1 / C(h_t, h).
ExactRational single_classifier_probability(std::uint64_t h_t, std::uint64_t h);

struct CombinatoricsReport {
  std::uint64_t h_t = 20;
  std::uint64_t r_max = 4;
  std::uint64_t h = 8;
  BigCount n_h;
  BigCount n_c;
  double mtd_guess_probability_log10 = 0.0;
  ExactRational single_classifier_probability;
};

CombinatoricsReport combinatorics_report(std::uint64_t h_t, std::uint64_t r_max, std::uint64_t h);

struct SweepPoint {
  std::uint64_t h_t = 0;
  BigCount n_h;
  double n_c_log10 = 0.0;
};

std::vector<SweepPoint> sweep_curves(const std::vector<std::uint64_t>& h_t_values, std::uint64_t r_max);
void write_sweep_csv(const std::vector<SweepPoint>& points, std::uint64_t r_max, std::ostream& out);

nlohmann::json to_json(const BigCount& c);
nlohmann::json to_json(const CombinatoricsReport& r);

}  // namespace hmdlab
