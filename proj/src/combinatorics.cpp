#include "hmdlab/combinatorics.hpp"

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "hmdlab/error.hpp"

namespace hmdlab {

namespace mp = boost::multiprecision;

double big_log10(const BigInt& value) {
  if (value.is_zero()) return -std::numeric_limits<double>::infinity();
  const std::size_t bits = mp::msb(value) + 1;
  if (bits <= 64) return static_cast<double>(std::log10(static_cast<long double>(value.convert_to<std::uint64_t>())));
  const std::size_t shift = bits - 64;
  const auto top = static_cast<BigInt>(value >> shift).convert_to<std::uint64_t>();
  const long double log10_2 = 0.301029995663981195213738894724493026768189881462108541310L;
  return static_cast<double>(std::log10(static_cast<long double>(top)) + static_cast<long double>(shift) * log10_2);
}

BigCount BigCount::of(BigInt value) {
  BigCount c;
  c.log10 = big_log10(value);
  c.exact = std::move(value);
  return c;
}

double BigCount::mantissa() const {
  if (exact.is_zero()) return 0.0;
  return std::pow(10.0, log10 - std::floor(log10));
}

std::string ExactRational::decimal(int significant) const {
  using Dec = mp::cpp_dec_float_50;
  const Dec v = Dec(numerator) / Dec(denominator);
  std::ostringstream out;
  out << std::scientific << std::setprecision(significant - 1) << v;
  return out.str();
}

double ExactRational::value() const {
  return std::pow(10.0, big_log10(numerator) - big_log10(denominator));
}

BigCount binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) throw Error(ErrorKind::kDomain, "C(" + std::to_string(n) + ", " + std::to_string(k) + ") with k > n");
  if (k > n - k) k = n - k;
  BigInt result = 1;
  // After step i the running value is C(n - k + i, i), so each division is exact.
  for (std::uint64_t i = 1; i <= k; ++i) {
    result *= n - k + i;
    result /= i;
  }
  return BigCount::of(std::move(result));
}

BigCount total_classifiers(std::uint64_t h_t, std::uint64_t r_max) {
  if (r_max < 1 || r_max > h_t) throw Error(ErrorKind::kDomain, "r_max must lie in [1, h_t]");
  BigInt sum = 0;
  for (std::uint64_t i = 1; i <= r_max; ++i) sum += binomial(h_t, i).exact;
  return BigCount::of(std::move(sum));
}

BigCount total_combinations(const BigCount& n_h) {
  if (n_h.exact < 2) throw Error(ErrorKind::kDomain, "an MTD pool needs at least two candidate classifiers");
  constexpr std::uint64_t kMaxBits = std::uint64_t{1} << 28;
  if (n_h.exact > kMaxBits) {
    throw Error(ErrorKind::kRange, "2^n_h is too large to materialize for n_h = " + n_h.decimal());
  }
  const auto n = n_h.exact.convert_to<std::uint64_t>();
  BigInt value = BigInt(1) << n;
  value -= n_h.exact;
  value -= 1;
  return BigCount::of(std::move(value));
}

ExactRational single_classifier_probability(std::uint64_t h_t, std::uint64_t h) {
  if (h < 1 || h > h_t) throw Error(ErrorKind::kDomain, "h must lie in [1, h_t]");
  return {BigInt(1), binomial(h_t, h).exact};
}

CombinatoricsReport combinatorics_report(std::uint64_t h_t, std::uint64_t r_max, std::uint64_t h) {
  CombinatoricsReport r;
  r.h_t = h_t;
  r.r_max = r_max;
  r.h = h;
  r.n_h = total_classifiers(h_t, r_max);
  r.n_c = total_combinations(r.n_h);
  r.mtd_guess_probability_log10 = -r.n_c.log10;
  r.single_classifier_probability = single_classifier_probability(h_t, h);
  return r;
}

std::vector<SweepPoint> sweep_curves(const std::vector<std::uint64_t>& h_t_values, std::uint64_t r_max) {
  std::vector<SweepPoint> out;
  out.reserve(h_t_values.size());
  for (auto h_t : h_t_values) {
    SweepPoint p;
    p.h_t = h_t;
    p.n_h = total_classifiers(h_t, r_max);
    // N_c = 2^N_h - N_h - 1; for N_h >= 64 the correction is far below
    // double resolution of the logarithm.
    if (p.n_h.exact < 64) {
      p.n_c_log10 = total_combinations(p.n_h).log10;
    } else {
      p.n_c_log10 = static_cast<double>(static_cast<long double>(p.n_h.exact.convert_to<long double>()) *
                                        0.301029995663981195213738894724493026768189881462108541310L);
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_sweep_csv(const std::vector<SweepPoint>& points, std::uint64_t r_max, std::ostream& out) {
  out << "h_t,r_max,n_h,n_h_log10,n_c_log10\n";
  out.precision(17);
  for (const auto& p : points) {
    out << p.h_t << ',' << r_max << ',' << p.n_h.decimal() << ',' << p.n_h.log10 << ',' << p.n_c_log10 << '\n';
  }
}

nlohmann::json to_json(const BigCount& c) {
  return {{"exact", c.decimal()}, {"log10", c.log10}, {"digits", c.digits()}, {"mantissa", c.mantissa()}};
}

nlohmann::json to_json(const CombinatoricsReport& r) {
  nlohmann::json j;
  j["h_t"] = r.h_t;
  j["r_max"] = r.r_max;
  j["n_h"] = to_json(r.n_h);
  j["n_c"] = to_json(r.n_c);
  j["mtd_guess_probability_log10"] = r.mtd_guess_probability_log10;
  j["single_classifier_probability"] = {
      {"h", r.h},
      {"numerator", r.single_classifier_probability.numerator.str()},
      {"denominator", r.single_classifier_probability.denominator.str()},
      {"decimal", r.single_classifier_probability.decimal()},
  };
  return j;
}

}  // namespace hmdlab
