#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hmdlab {

inline constexpr std::size_t kNumHpcs = 20;

// Canonical counter catalog. Index order is the tie-break order used
// everywhere a deterministic ordering of counters is needed.
inline constexpr std::array<std::string_view, kNumHpcs> kHpcCatalog = {
    "branch-instructions", "branch-misses",     "bus-cycles",        "cache-misses",
    "cache-references",    "cpu-cycles",        "instructions",      "LLC-load-misses",
    "LLC-loads",           "LLC-store-misses",  "LLC-stores",        "branch-loads",
    "branch-load-misses",  "dTLB-load-misses",  "dTLB-loads",        "dTLB-store-misses",
    "dTLB-stores",         "iTLB-load-misses",  "iTLB-loads",        "page-faults",
};

/// A counter from the catalog, stored by catalog index. Comparison follows
/// catalog order.
class HpcName {
 public:
  constexpr HpcName() = default;

  /// Throws a parse error for names outside the catalog (case-sensitive).
  static HpcName parse(std::string_view name);
  static std::optional<HpcName> find(std::string_view name);
  static constexpr HpcName from_index(std::size_t index) { return HpcName(index); }

  constexpr std::size_t index() const { return index_; }
  constexpr std::string_view name() const { return kHpcCatalog[index_]; }
  std::string str() const { return std::string(name()); }

  friend constexpr auto operator<=>(HpcName, HpcName) = default;

 private:
  constexpr explicit HpcName(std::size_t index) : index_(index) {}
  std::size_t index_ = 0;
};

namespace hpc {
inline constexpr HpcName kBranchInstructions = HpcName::from_index(0);
inline constexpr HpcName kBranchMisses = HpcName::from_index(1);
inline constexpr HpcName kBusCycles = HpcName::from_index(2);
inline constexpr HpcName kCacheMisses = HpcName::from_index(3);
inline constexpr HpcName kCacheReferences = HpcName::from_index(4);
inline constexpr HpcName kCpuCycles = HpcName::from_index(5);
inline constexpr HpcName kInstructions = HpcName::from_index(6);
inline constexpr HpcName kLlcLoadMisses = HpcName::from_index(7);
}  // namespace hpc

/// All twenty counters in catalog order.
std::vector<HpcName> all_hpcs();

std::vector<HpcName> parse_hpc_list(std::span<const std::string> names);
std::vector<std::string> hpc_names(std::span<const HpcName> counters);

/// One sampling iteration addressed by counter name. Counters not sampled
/// are absent rather than zero.
struct CounterRow {
  std::array<double, kNumHpcs> value{};
  std::bitset<kNumHpcs> present;

  void set(HpcName c, double v) {
    value[c.index()] = v;
    present.set(c.index());
  }
  bool has(HpcName c) const { return present.test(c.index()); }
  double operator[](HpcName c) const { return value[c.index()]; }
};

}  // namespace hmdlab
