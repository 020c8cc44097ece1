#pragma once

// Core value types shared by every module: patient records, subgroup summary
// tables, and the not-estimable-aware summary triple.

#include <array>
#include <optional>
#include <vector>

#include "synthipd/common.hpp"

namespace synthipd {

// One synthetic patient: observed time, event indicator (1 = event,
// 0 = censored), arm in {0, 1}, and an optional covariate label in {0..K}.
struct IpdRecord {
  double time = 0.0;
  int event = 0;
  int arm = 0;
  std::optional<int> covariate;
};

struct IpdDataset {
  std::vector<IpdRecord> records;
  int k_max = 0;  // largest covariate label; 0 for a single-stratum dataset

  std::size_t size() const { return records.size(); }
  bool fully_assigned() const {
    for (const auto& r : records)
      if (!r.covariate) return false;
    return true;
  }
};

inline void validate(const IpdDataset& d) {
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    if (!(r.time >= 0.0)) throw Error(format("record %zu: negative time", i));
    if (r.event != 0 && r.event != 1)
      throw Error(format("record %zu: event must be 0 or 1", i));
    if (r.arm != 0 && r.arm != 1)
      throw Error(format("record %zu: arm must be 0 or 1", i));
    if (r.covariate && (*r.covariate < 0 || *r.covariate > d.k_max))
      throw Error(format("record %zu: covariate label out of range", i));
  }
}

// Point estimate with a 95% interval; any member can be not-estimable.
struct SummaryTriple {
  std::optional<double> estimate;
  std::optional<double> lo95;
  std::optional<double> hi95;

  bool any() const { return estimate || lo95 || hi95; }
};

// Per-(covariate, arm) cell of a subgroup summary table.
struct SubgroupCell {
  long n = 0;
  SummaryTriple median;
  std::vector<SummaryTriple> rates;  // parallel to SubgroupSummaryTable::rate_times
};

// Published-table shape: medians and counts per (x, arm) cell, one hazard
// ratio per covariate level, optional survival rates at fixed timepoints.
struct SubgroupSummaryTable {
  int k_max = 0;
  std::vector<double> rate_times;
  std::vector<std::array<SubgroupCell, 2>> cells;  // cells[x][arm]
  std::vector<SummaryTriple> hazard_ratios;        // hazard_ratios[x], arm 1 vs 0

  const SubgroupCell& cell(int x, int arm) const { return cells.at(x)[arm]; }
  SubgroupCell& cell(int x, int arm) { return cells.at(x)[arm]; }
};

inline std::vector<IpdRecord> subset(const IpdDataset& d,
                                     std::optional<int> covariate,
                                     std::optional<int> arm) {
  std::vector<IpdRecord> out;
  for (const auto& r : d.records) {
    if (arm && r.arm != *arm) continue;
    if (covariate && (!r.covariate || *r.covariate != *covariate)) continue;
    out.push_back(r);
  }
  return out;
}

// counts[x][arm] over assigned records.
inline std::vector<std::array<long, 2>> cell_counts(const IpdDataset& d) {
  std::vector<std::array<long, 2>> counts(std::size_t(d.k_max) + 1,
                                          {0, 0});
  for (const auto& r : d.records) {
    if (!r.covariate) continue;
    counts.at(*r.covariate)[r.arm]++;
  }
  return counts;
}

}  // namespace synthipd
