#include "hmdlab/hpc.hpp"

#include "hmdlab/error.hpp"

namespace hmdlab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kProfile: return "profile-validation";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kDegenerateInput: return "degenerate-input";
    case ErrorKind::kGrouping: return "grouping";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kFeatureMismatch: return "feature-mismatch";
    case ErrorKind::kUnsupported: return "unsupported-operation";
    case ErrorKind::kEmptyEvaluation: return "empty-evaluation";
    case ErrorKind::kOracle: return "oracle";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kInvariant: return "invariant-violation";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kMapping: return "mapping";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::optional<HpcName> HpcName::find(std::string_view name) {
  for (std::size_t i = 0; i < kNumHpcs; ++i) {
    if (kHpcCatalog[i] == name) return HpcName(i);
  }
  return std::nullopt;
}

HpcName HpcName::parse(std::string_view name) {
  if (auto found = find(name)) return *found;
  throw Error(ErrorKind::kParse, "unknown counter '" + std::string(name) + "'");
}

std::vector<HpcName> all_hpcs() {
  std::vector<HpcName> out;
  out.reserve(kNumHpcs);
  for (std::size_t i = 0; i < kNumHpcs; ++i) out.push_back(HpcName::from_index(i));
  return out;
}

std::vector<HpcName> parse_hpc_list(std::span<const std::string> names) {
  std::vector<HpcName> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(HpcName::parse(n));
  return out;
}

std::vector<std::string> hpc_names(std::span<const HpcName> counters) {
  std::vector<std::string> out;
  out.reserve(counters.size());
  for (auto c : counters) out.push_back(c.str());
  return out;
}

}  // namespace hmdlab
