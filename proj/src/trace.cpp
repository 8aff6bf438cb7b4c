#include "hmdlab/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "hmdlab/error.hpp"

namespace hmdlab {

std::string_view to_string(Label label) {
  return label == Label::kMalware ? "malware" : "benign";
}

Label parse_label(std::string_view text) {
  if (text == "benign") return Label::kBenign;
  if (text == "malware") return Label::kMalware;
  throw Error(ErrorKind::kParse, "unknown label '" + std::string(text) + "'");
}

HpcTrace::HpcTrace(std::string app_id, Label label, std::uint32_t interval_ms,
                   std::vector<HpcName> counters, std::vector<std::uint64_t> values)
    : app_id_(std::move(app_id)),
      label_(label),
      interval_ms_(interval_ms),
      counters_(std::move(counters)),
      values_(std::move(values)) {
  if (counters_.empty()) throw Error(ErrorKind::kShape, "trace '" + app_id_ + "' has no counters");
  if (interval_ms_ == 0) throw Error(ErrorKind::kShape, "trace '" + app_id_ + "' has zero interval");
  if (values_.empty() || values_.size() % counters_.size() != 0) {
    throw Error(ErrorKind::kShape, "trace '" + app_id_ + "' values do not form whole rows");
  }
  std::bitset<kNumHpcs> seen;
  for (auto c : counters_) {
    if (seen.test(c.index())) throw Error(ErrorKind::kShape, "duplicate counter " + c.str());
    seen.set(c.index());
  }
}

std::ptrdiff_t HpcTrace::column_of(HpcName c) const {
  auto it = std::find(counters_.begin(), counters_.end(), c);
  return it == counters_.end() ? -1 : std::distance(counters_.begin(), it);
}

CounterRow HpcTrace::row(std::size_t r) const {
  CounterRow out;
  auto vals = row_values(r);
  for (std::size_t j = 0; j < counters_.size(); ++j) out.set(counters_[j], static_cast<double>(vals[j]));
  return out;
}

std::size_t Dataset::total_rows() const {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.iterations();
  return n;
}

std::size_t Dataset::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(traces.begin(), traces.end(), [&](const HpcTrace& t) { return t.label() == label; }));
}

void Dataset::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& t : traces) {
    if (!ids.insert(t.app_id()).second) {
      throw Error(ErrorKind::kInvariant, "duplicate app_id '" + t.app_id() + "'");
    }
  }
}

void SyntheticProfile::validate() const {
  for (int c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < kNumHpcs; ++j) {
      if (!std::isfinite(log_mean[c][j])) {
        throw Error(ErrorKind::kProfile, "non-finite log-mean for " + std::string(kHpcCatalog[j]));
      }
      if (!(log_sdev[c][j] > 0.0) || !std::isfinite(log_sdev[c][j])) {
        throw Error(ErrorKind::kProfile, "non-positive log-sdev for " + std::string(kHpcCatalog[j]));
      }
    }
  }
  for (const auto& row : loadings) {
    for (double l : row) {
      if (!std::isfinite(l)) throw Error(ErrorKind::kProfile, "non-finite factor loading");
    }
  }
  if (iterations == 0) throw Error(ErrorKind::kProfile, "iterations must be positive");
  if (interval_ms == 0) throw Error(ErrorKind::kProfile, "interval_ms must be positive");
}

namespace {

struct CounterModel {
  double median;            // benign median count per iteration
  double malware_shift;     // log-space class offset
  std::size_t factor;       // latent factor the counter loads on
  double loading;
  double noise;             // idiosyncratic log-sdev
};

// Factors: 0 compute, 1 branch unit, 2 memory hierarchy, 3 data TLB, 4 front end / bus.
// Malware runs are compute heavy with fewer branch mispredictions and LLC
// load misses than the benign mix.
constexpr std::array<CounterModel, kNumHpcs> kDefaultModel = {{
    {3.0e+08, 0.03, 1, 0.30, 0.25},  // branch-instructions
    {2.0e+07, -0.20, 1, 0.10, 0.35}, // branch-misses
    {5.0e+07, 0.30, 4, 0.35, 0.25},  // bus-cycles
    {1.5e+07, 0.35, 2, 0.30, 0.30},  // cache-misses
    {4.0e+08, 0.35, 0, 0.40, 0.15},  // cache-references
    {1.5e+09, 0.25, 0, 0.40, 0.15},  // cpu-cycles
    {2.0e+09, 0.05, 0, 0.40, 0.15},  // instructions
    {1.0e+07, -0.35, 2, 0.10, 0.35}, // LLC-load-misses
    {5.0e+07, -0.05, 2, 0.30, 0.30}, // LLC-loads
    {5.0e+06, 0.10, 2, 0.30, 0.30},  // LLC-store-misses
    {2.0e+07, 0.05, 2, 0.30, 0.30},  // LLC-stores
    {3.0e+08, 0.03, 1, 0.30, 0.25},  // branch-loads
    {2.0e+07, -0.05, 1, 0.30, 0.30}, // branch-load-misses
    {2.0e+06, 0.20, 3, 0.30, 0.30},  // dTLB-load-misses
    {6.0e+08, 0.26, 3, 0.30, 0.30},  // dTLB-loads
    {1.0e+06, 0.10, 3, 0.30, 0.30},  // dTLB-store-misses
    {3.0e+08, 0.05, 3, 0.30, 0.30},  // dTLB-stores
    {5.0e+05, 0.15, 4, 0.30, 0.30},  // iTLB-load-misses
    {1.0e+08, 0.20, 4, 0.30, 0.30},  // iTLB-loads
    {2.0e+03, 0.10, 4, 0.30, 0.30},  // page-faults
}};

}  // namespace

SyntheticProfile default_profile() {
  SyntheticProfile p;
  for (std::size_t j = 0; j < kNumHpcs; ++j) {
    const auto& m = kDefaultModel[j];
    p.log_mean[0][j] = std::log(m.median);
    p.log_mean[1][j] = std::log(m.median) + m.malware_shift;
    p.log_sdev[0][j] = m.noise;
    p.log_sdev[1][j] = m.noise;
    p.loadings[j].fill(0.0);
    p.loadings[j][m.factor] = m.loading;
  }
  return p;
}

Dataset generate_synthetic_dataset(const SyntheticProfile& profile, std::size_t n_benign,
                                   std::size_t n_malware, std::uint64_t seed) {
  if (n_benign < 1 || n_malware < 1) {
    throw Error(ErrorKind::kPrecondition, "synthetic dataset needs at least one app per class");
  }
  profile.validate();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto counters = all_hpcs();

  Dataset d;
  d.seed = seed;
  d.provenance = Provenance::kSynthetic;
  d.traces.reserve(n_benign + n_malware);

  auto emit = [&](Label label, std::size_t index) {
    const auto c = static_cast<std::size_t>(label);
    std::vector<std::uint64_t> values;
    values.reserve(profile.iterations * kNumHpcs);
    std::array<double, SyntheticProfile::kFactors> factors{};
    for (std::uint32_t it = 0; it < profile.iterations; ++it) {
      for (auto& f : factors) f = normal(rng);
      for (std::size_t j = 0; j < kNumHpcs; ++j) {
        double z = profile.log_mean[c][j] + profile.log_sdev[c][j] * normal(rng);
        for (std::size_t k = 0; k < SyntheticProfile::kFactors; ++k) z += profile.loadings[j][k] * factors[k];
        values.push_back(static_cast<std::uint64_t>(std::llround(std::exp(z))));
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", label == Label::kMalware ? "malware" : "benign", index);
    d.traces.emplace_back(id, label, profile.interval_ms, counters, std::move(values));
  };

  for (std::size_t i = 0; i < n_benign; ++i) emit(Label::kBenign, i);
  for (std::size_t i = 0; i < n_malware; ++i) emit(Label::kMalware, i);
  return d;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void fail_at(std::size_t line_no, const std::string& what) {
  throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + what);
}

std::uint64_t parse_count(std::string_view field, std::size_t line_no, std::string_view column) {
  if (field.empty()) fail_at(line_no, "missing value for " + std::string(column));
  if (field.front() == '-') fail_at(line_no, "negative value '" + std::string(field) + "' for " + std::string(column));
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    fail_at(line_no, "invalid integer '" + std::string(field) + "' for " + std::string(column));
  }
  return v;
}

struct PendingApp {
  Label label;
  std::size_t first_line;
  std::map<std::uint64_t, std::vector<std::uint64_t>> rows;
};

}  // namespace

Dataset parse_perf_csv(std::istream& in) {
  Dataset d;
  d.provenance = Provenance::kIngested;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "line 1: missing header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  auto header = split_fields(line);
  if (header.size() < 4 || header[0] != "app_id" || header[1] != "label" || header[2] != "iteration") {
    fail_at(line_no, "malformed header, expected app_id,label,iteration,<counters...>");
  }
  std::vector<HpcName> counters;
  std::bitset<kNumHpcs> seen;
  for (std::size_t i = 3; i < header.size(); ++i) {
    auto c = HpcName::find(header[i]);
    if (!c) fail_at(line_no, "malformed header, unknown counter '" + std::string(header[i]) + "'");
    if (seen.test(c->index())) fail_at(line_no, "malformed header, duplicate counter '" + std::string(header[i]) + "'");
    seen.set(c->index());
    counters.push_back(*c);
  }

  std::vector<std::string> order;
  std::unordered_map<std::string, PendingApp> apps;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      fail_at(line_no, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    std::string app(fields[0]);
    if (app.empty()) fail_at(line_no, "empty app_id");
    Label label;
    try {
      label = parse_label(fields[1]);
    } catch (const Error&) {
      fail_at(line_no, "unknown label '" + std::string(fields[1]) + "'");
    }
    auto iteration = parse_count(fields[2], line_no, "iteration");
    std::vector<std::uint64_t> values;
    values.reserve(counters.size());
    for (std::size_t i = 3; i < fields.size(); ++i) values.push_back(parse_count(fields[i], line_no, header[i]));

    auto [it, inserted] = apps.try_emplace(app, PendingApp{label, line_no, {}});
    if (inserted) order.push_back(app);
    if (it->second.label != label) fail_at(line_no, "label of '" + app + "' changes between rows");
    if (!it->second.rows.emplace(iteration, std::move(values)).second) {
      fail_at(line_no, "duplicate iteration " + std::to_string(iteration) + " for '" + app + "'");
    }
  }

  for (const auto& app : order) {
    auto& pending = apps.at(app);
    std::vector<std::uint64_t> values;
    std::uint64_t expected = 0;
    for (auto& [iteration, row] : pending.rows) {
      if (iteration != expected) {
        fail_at(pending.first_line, "iterations of '" + app + "' are not contiguous from 0");
      }
      ++expected;
      values.insert(values.end(), row.begin(), row.end());
    }
    d.traces.emplace_back(app, pending.label, 10, counters, std::move(values));
  }
  return d;
}

Dataset parse_perf_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return parse_perf_csv(in);
}

void write_perf_csv(const Dataset& d, std::ostream& out) {
  std::vector<HpcName> counters = d.traces.empty() ? all_hpcs() : d.traces.front().counters();
  out << "app_id,label,iteration";
  for (auto c : counters) out << ',' << c.name();
  out << '\n';
  for (const auto& t : d.traces) {
    if (t.counters() != counters) throw Error(ErrorKind::kShape, "traces do not share one counter list");
    for (std::size_t r = 0; r < t.iterations(); ++r) {
      out << t.app_id() << ',' << to_string(t.label()) << ',' << r;
      for (auto v : t.row_values(r)) out << ',' << v;
      out << '\n';
    }
  }
}

void write_perf_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write_perf_csv(d, out);
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& d, std::size_t n_test_per_class,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<bool> in_test(d.traces.size(), false);
  for (Label label : {Label::kBenign, Label::kMalware}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.traces.size(); ++i) {
      if (d.traces[i].label() == label) idx.push_back(i);
    }
    if (idx.size() <= n_test_per_class) {
      throw Error(ErrorKind::kSize, "class " + std::string(to_string(label)) + " has " + std::to_string(idx.size()) +
                                        " traces, need more than " + std::to_string(n_test_per_class));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n_test_per_class; ++i) in_test[idx[i]] = true;
  }
  Dataset train{{}, d.seed, d.provenance};
  Dataset test{{}, d.seed, d.provenance};
  for (std::size_t i = 0; i < d.traces.size(); ++i) (in_test[i] ? test : train).traces.push_back(d.traces[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace hmdlab
