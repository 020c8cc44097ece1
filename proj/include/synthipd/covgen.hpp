#pragma once

// Covariate assignment by constrained stochastic local search: worst-case
// relative-error losses against a published summary table, count-preserving
// pair-swap proposals, and the four-branch acceptance rule with a pluggable
// uphill-acceptance family.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "synthipd/rng.hpp"
#include "synthipd/survival.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

enum class AcceptFamily { kExpDecay, kZero };

inline AcceptFamily parse_accept_family(const std::string& name) {
  if (name == "exp_decay") return AcceptFamily::kExpDecay;
  if (name == "zero") return AcceptFamily::kZero;
  throw Error("unknown acceptance family: " + name);
}

inline const char* accept_family_name(AcceptFamily f) {
  return f == AcceptFamily::kExpDecay ? "exp_decay" : "zero";
}

// Probability of accepting an uphill move of size delta after gamma accepted
// improvements.  exp_decay is exp(-delta / gamma) with the gamma = 0 case
// pinned to 0, which turns the search into randomized local descent until the
// first improvement has been banked.
inline double acceptance_probability(AcceptFamily f, double delta,
                                     long gamma) {
  if (!(delta > 0.0)) throw Error("acceptance_probability: delta must be > 0");
  switch (f) {
    case AcceptFamily::kExpDecay:
      return gamma == 0 ? 0.0 : std::exp(-delta / double(gamma));
    case AcceptFamily::kZero:
      return 0.0;
  }
  throw Error("acceptance_probability: bad family");
}

// Structural checks every family must satisfy: the probability vanishes
// monotonically for growing uphill size at fixed gamma, and vanishes as the
// improvement count drops to zero at fixed uphill size.
inline void validate_acceptance_family(AcceptFamily f) {
  for (long gamma : {1L, 4L, 64L}) {
    double prev = 1.0;
    for (double delta : {1e-2, 1.0, 1e2, 1e6, 1e9}) {
      const double p = acceptance_probability(f, delta, gamma);
      if (!(p >= 0.0 && p <= 1.0) || p > prev + 1e-12)
        throw Error("acceptance family fails the large-uphill limit check");
      prev = p;
    }
    if (prev > 1e-8)
      throw Error("acceptance family fails the large-uphill limit check");
  }
  for (double delta : {0.05, 1.0, 20.0}) {
    double prev = 0.0;
    for (long gamma : {0L, 1L, 2L, 8L, 64L}) {
      const double p = acceptance_probability(f, delta, gamma);
      if (p + 1e-12 < prev)
        throw Error("acceptance family fails the zero-gamma limit check");
      prev = p;
    }
    if (acceptance_probability(f, delta, 0) != 0.0)
      throw Error("acceptance family fails the zero-gamma limit check");
  }
}

struct AnnealConfig {
  long max_iters = 2'500'000;
  double hr_ceiling = 0.01;  // H, as a fraction
  double swap_lo = 1.0;      // a, percent of records touched per proposal
  double swap_hi = 20.0;     // b, percent
  AcceptFamily acceptance = AcceptFamily::kExpDecay;
  std::optional<double> stop_tol_m;   // stop when loss_m <= this fraction
  std::optional<double> stop_tol_hr;  // and loss_hr <= this fraction
  double ne_penalty = 1.0;  // loss for an NE/finite mismatch on a component
  std::uint64_t seed = 0;
  long trace_stride = 0;  // 0 = auto (~10k rows)
  int restarts = 10;      // initial assignments tried before giving up
  bool adaptive_shrink = false;  // shrink swap_hi toward swap_lo near stop_tol_m
  std::vector<int> initial_labels;  // optional fixed start (testing, reruns)
};

inline void validate(const AnnealConfig& cfg) {
  if (cfg.max_iters < 0) throw Error("anneal config: max_iters must be >= 0");
  if (!(cfg.swap_lo > 0.0) || cfg.swap_lo > cfg.swap_hi)
    throw Error("anneal config: need 0 < swap_lo <= swap_hi");
  if (!(cfg.hr_ceiling > 0.0 && cfg.hr_ceiling < 1.0))
    throw Error("anneal config: hr_ceiling must be in (0,1)");
  for (const auto& tol : {cfg.stop_tol_m, cfg.stop_tol_hr})
    if (tol && !(*tol > 0.0 && *tol < 1.0))
      throw Error("anneal config: stop tolerances must be in (0,1)");
  if (!(cfg.ne_penalty >= 0.0))
    throw Error("anneal config: ne_penalty must be >= 0");
  validate_acceptance_family(cfg.acceptance);
}

// One scored discrepancy between a candidate statistic member and its target.
struct LossComponent {
  std::string statistic;  // "median", "hr", or "rate"
  int x = 0;
  int arm = -1;        // -1 for per-subgroup statistics (hr)
  int member = 0;      // 0 = estimate, 1 = lo95, 2 = hi95
  double time = kNaN;  // rate timepoint, NaN otherwise
  std::optional<double> target;
  std::optional<double> candidate;
  double rae = 0.0;
};

struct LossPart {
  double value = 0.0;
  std::vector<LossComponent> components;
  std::vector<std::string> flags;
};

namespace detail {

// Relative absolute error of one member.  NE target matches NE candidate at
// zero loss and a finite candidate at the fixed penalty (and vice versa);
// zero-valued targets cannot be scored relatively and are skipped.
inline std::optional<double> rae_member(const std::optional<double>& target,
                                        const std::optional<double>& cand,
                                        double penalty) {
  if (!target) return cand ? std::optional<double>(penalty)
                           : std::optional<double>(0.0);
  if (!cand) return penalty;
  if (*target == 0.0) return std::nullopt;  // excluded, flagged by caller
  return std::fabs(*cand - *target) / std::fabs(*target);
}

inline double triple_rae(const SummaryTriple& target, const SummaryTriple& cand,
                         double penalty) {
  double worst = 0.0;
  const std::optional<double>* t[3] = {&target.estimate, &target.lo95,
                                       &target.hi95};
  const std::optional<double>* c[3] = {&cand.estimate, &cand.lo95, &cand.hi95};
  for (int m = 0; m < 3; ++m) {
    auto r = rae_member(*t[m], *c[m], penalty);
    if (r) worst = std::max(worst, *r);
  }
  return worst;
}

inline void append_triple(LossPart& part, const char* statistic, int x, int arm,
                          double time, const SummaryTriple& target,
                          const SummaryTriple& cand, double penalty) {
  const std::optional<double>* t[3] = {&target.estimate, &target.lo95,
                                       &target.hi95};
  const std::optional<double>* c[3] = {&cand.estimate, &cand.lo95, &cand.hi95};
  for (int m = 0; m < 3; ++m) {
    auto r = rae_member(*t[m], *c[m], penalty);
    if (!r) {
      part.flags.push_back(format(
          "%s component (x=%d, arm=%d, member=%d) has zero target; excluded",
          statistic, x, arm, m));
      continue;
    }
    LossComponent comp;
    comp.statistic = statistic;
    comp.x = x;
    comp.arm = arm;
    comp.member = m;
    comp.time = time;
    comp.target = *t[m];
    comp.candidate = *c[m];
    comp.rae = *r;
    part.value = std::max(part.value, *r);
    part.components.push_back(std::move(comp));
  }
}

}  // namespace detail

// Worst-case median RAE between two summary tables.
inline LossPart median_loss(const SubgroupSummaryTable& cand,
                            const SubgroupSummaryTable& target,
                            double ne_penalty = 1.0) {
  if (cand.k_max != target.k_max)
    throw Error("median_loss: covariate range mismatch");
  LossPart part;
  for (int x = 0; x <= target.k_max; ++x)
    for (int arm = 0; arm < 2; ++arm)
      detail::append_triple(part, "median", x, arm, kNaN,
                            target.cell(x, arm).median, cand.cell(x, arm).median,
                            ne_penalty);
  return part;
}

inline LossPart hazard_ratio_loss(const SubgroupSummaryTable& cand,
                                  const SubgroupSummaryTable& target,
                                  double ne_penalty = 1.0) {
  if (cand.k_max != target.k_max)
    throw Error("hazard_ratio_loss: covariate range mismatch");
  LossPart part;
  for (int x = 0; x <= target.k_max; ++x)
    detail::append_triple(part, "hr", x, -1, kNaN, target.hazard_ratios[x],
                          cand.hazard_ratios[x], ne_penalty);
  return part;
}

// Survival-rate targets at the table's named timepoints, same max-RAE
// contract.
inline LossPart rate_loss(const SubgroupSummaryTable& cand,
                          const SubgroupSummaryTable& target,
                          double ne_penalty = 1.0) {
  if (cand.k_max != target.k_max)
    throw Error("rate_loss: covariate range mismatch");
  if (cand.rate_times != target.rate_times)
    throw Error("rate_loss: rate timepoint mismatch");
  LossPart part;
  for (int x = 0; x <= target.k_max; ++x)
    for (int arm = 0; arm < 2; ++arm)
      for (std::size_t t = 0; t < target.rate_times.size(); ++t)
        detail::append_triple(part, "rate", x, arm, target.rate_times[t],
                              target.cell(x, arm).rates[t],
                              cand.cell(x, arm).rates[t], ne_penalty);
  return part;
}

// Dataset-level conveniences: summarize the candidate, then score.
inline LossPart median_loss(const IpdDataset& candidate,
                            const SubgroupSummaryTable& target,
                            double ne_penalty = 1.0) {
  return median_loss(summarize(candidate), target, ne_penalty);
}

inline LossPart hazard_ratio_loss(const IpdDataset& candidate,
                                  const SubgroupSummaryTable& target,
                                  double ne_penalty = 1.0) {
  return hazard_ratio_loss(summarize(candidate), target, ne_penalty);
}

// Uniformly random count-feasible assignment: within each arm the labels are
// a random permutation of the multiset given by counts[x][arm].
inline std::vector<int> initial_assignment(
    const std::vector<int>& arm_of,
    const std::vector<std::array<long, 2>>& counts, Rng& rng) {
  long arm_sizes[2] = {0, 0};
  for (int a : arm_of) {
    if (a != 0 && a != 1) throw Error("initial_assignment: arm must be 0 or 1");
    ++arm_sizes[a];
  }
  std::vector<int> pool[2];
  for (int arm = 0; arm < 2; ++arm) {
    long total = 0;
    for (std::size_t x = 0; x < counts.size(); ++x) {
      if (counts[x][arm] < 0)
        throw Error("initial_assignment: negative count");
      total += counts[x][arm];
      pool[arm].insert(pool[arm].end(), std::size_t(counts[x][arm]), int(x));
    }
    if (total != arm_sizes[arm])
      throw Error(format(
          "initial_assignment: counts for arm %d sum to %ld but the arm has "
          "%ld records",
          arm, total, arm_sizes[arm]));
    rng.shuffle(pool[arm]);
  }
  std::vector<int> labels(arm_of.size());
  std::size_t next[2] = {0, 0};
  for (std::size_t i = 0; i < arm_of.size(); ++i)
    labels[i] = pool[arm_of[i]][next[arm_of[i]]++];
  return labels;
}

// Count-preserving neighborhood move: ceil(alpha% * n / 2) disjoint pairs,
// each pair two same-arm records with different labels whose labels are
// exchanged.  Swaps are applied to `labels` in place; the returned pair list
// allows the caller to revert.  Fewer pairs are swapped when the assignment
// runs out of eligible pairs (K = 0 always returns no pairs).
inline std::vector<std::pair<int, int>> propose_pairs(
    std::vector<int>& labels, const std::vector<int>& arm_of, int k_max,
    double alpha_percent, Rng& rng) {
  const std::size_t n = labels.size();
  const long want = long(std::ceil(alpha_percent / 100.0 * double(n) / 2.0));
  std::vector<std::pair<int, int>> pairs;
  if (k_max == 0 || want <= 0) return pairs;

  // unused[arm][x] holds indices still available this proposal.
  std::vector<std::vector<std::vector<int>>> unused(
      2, std::vector<std::vector<int>>(std::size_t(k_max) + 1));
  for (std::size_t i = 0; i < n; ++i)
    unused[arm_of[i]][labels[i]].push_back(int(i));

  auto arm_total = [&](int arm) {
    std::size_t t = 0;
    for (const auto& v : unused[arm]) t += v.size();
    return t;
  };
  auto arm_eligible = [&](int arm) {
    // a mixed-label pair exists iff not all remaining records share one label
    std::size_t total = arm_total(arm), mx = 0;
    for (const auto& v : unused[arm]) mx = std::max(mx, v.size());
    return total >= 2 && mx < total;
  };

  auto take = [&](int arm, int x, std::size_t pos) {
    auto& v = unused[arm][x];
    int idx = v[pos];
    v[pos] = v.back();
    v.pop_back();
    return idx;
  };

  while (long(pairs.size()) < want) {
    bool el[2] = {arm_eligible(0), arm_eligible(1)};
    if (!el[0] && !el[1]) break;
    const std::size_t total =
        (el[0] ? arm_total(0) : 0) + (el[1] ? arm_total(1) : 0);
    std::size_t r = rng.uniform_index(total);
    int arm = 0;
    if (!el[0] || r >= arm_total(0)) {
      if (el[0]) r -= arm_total(0);
      arm = 1;
    }
    int xi = 0;
    while (r >= unused[arm][xi].size()) r -= unused[arm][xi++].size();
    const int i = take(arm, xi, r);

    std::size_t partners = 0;
    for (int x = 0; x <= k_max; ++x)
      if (x != xi) partners += unused[arm][x].size();
    std::size_t r2 = rng.uniform_index(partners);
    int xj = 0;
    for (;; ++xj) {
      if (xj == xi) continue;
      if (r2 < unused[arm][xj].size()) break;
      r2 -= unused[arm][xj].size();
    }
    const int j = take(arm, xj, r2);

    std::swap(labels[i], labels[j]);
    pairs.emplace_back(i, j);
  }
  return pairs;
}

// Copying wrapper: propose a candidate assignment without mutating the
// current one.
inline std::vector<int> propose_neighbor(const std::vector<int>& labels,
                                         const std::vector<int>& arm_of,
                                         int k_max, const AnnealConfig& cfg,
                                         Rng& rng) {
  std::vector<int> cand = labels;
  const double alpha = rng.uniform(cfg.swap_lo, cfg.swap_hi);
  propose_pairs(cand, arm_of, k_max, alpha, rng);
  return cand;
}

struct AnnealState {
  std::vector<int> assignment;
  double loss_m = 0.0;
  double loss_hr = 0.0;
  long gamma = 0;
  long iter = 0;
};

struct TraceRow {
  long iter = 0;
  double loss_m = 0.0;
  double loss_hr = 0.0;
  long gamma = 0;
  bool accepted = false;
  int branch = 0;  // 1..4 per acceptance rule; 0 = no branch applied
};

struct LossReport {
  double loss_m = 0.0;
  double loss_hr = 0.0;
  std::optional<double> loss_extra;  // survival-rate targets, when present
  std::vector<LossComponent> components;
  long iterations = 0;
  long gamma = 0;
  bool converged = false;
  std::vector<std::string> flags;
};

struct CovGenResult {
  IpdDataset dataset;
  AnnealState state;
  LossReport report;
  std::vector<TraceRow> trace;
};

namespace detail {

// Cached per-cell statistics for the incremental annealer loop.
struct CellCache {
  SummaryTriple median;
  std::vector<SummaryTriple> rates;
  double median_rae = 0.0;
  double rate_rae = 0.0;
};

struct SubgroupCache {
  SummaryTriple hr;
  double hr_rae = 0.0;
};

class CovGenEngine {
 public:
  CovGenEngine(const IpdDataset& data, const SubgroupSummaryTable& target,
               const AnnealConfig& cfg)
      : target_(target), cfg_(cfg), k_(target.k_max) {
    n_ = long(data.records.size());
    time_.reserve(n_);
    event_.reserve(n_);
    arm_of_.reserve(n_);
    for (const auto& r : data.records) {
      time_.push_back(r.time);
      event_.push_back(r.event);
      arm_of_.push_back(r.arm);
      arm_members_[r.arm].push_back(int(time_.size()) - 1);
    }
    counts_.assign(std::size_t(k_) + 1, {0, 0});
    for (int x = 0; x <= k_; ++x)
      for (int arm = 0; arm < 2; ++arm)
        counts_[x][arm] = target.cell(x, arm).n;
    for (int arm = 0; arm < 2; ++arm) {
      long sum = 0;
      for (int x = 0; x <= k_; ++x) sum += counts_[x][arm];
      if (sum != long(arm_members_[arm].size()))
        throw Error(format(
            "covgen: target counts for arm %d sum to %ld but the dataset has "
            "%zu records in that arm",
            arm, sum, arm_members_[arm].size()));
    }
    cells_.resize((std::size_t(k_) + 1) * 2);
    subgroups_.resize(std::size_t(k_) + 1);
  }

  const std::vector<int>& arm_of() const { return arm_of_; }
  const std::vector<std::array<long, 2>>& counts() const { return counts_; }

  void set_labels(std::vector<int> labels) {
    labels_ = std::move(labels);
    for (int x = 0; x <= k_; ++x) {
      for (int arm = 0; arm < 2; ++arm) eval_cell(x, arm);
      eval_subgroup(x);
    }
  }

  std::vector<int>& labels() { return labels_; }

  double loss_m() const {
    double worst = 0.0;
    for (const auto& c : cells_)
      worst = std::max(worst, std::max(c.median_rae, c.rate_rae));
    return worst;
  }

  double loss_hr() const {
    double worst = 0.0;
    for (const auto& s : subgroups_) worst = std::max(worst, s.hr_rae);
    return worst;
  }

  double loss_rates_only() const {
    double worst = 0.0;
    for (const auto& c : cells_) worst = std::max(worst, c.rate_rae);
    return worst;
  }

  // Recompute the cells and subgroups touched by the given swapped pairs.
  // Returns the data needed to undo the recomputation on rejection.
  struct Undo {
    std::vector<std::pair<std::size_t, CellCache>> cells;
    std::vector<std::pair<int, SubgroupCache>> subgroups;
  };

  Undo reevaluate_touched(const std::vector<std::pair<int, int>>& pairs) {
    touched_cells_.clear();
    touched_subgroups_.clear();
    for (const auto& [i, j] : pairs) {
      const int arm = arm_of_[i];
      mark(labels_[i], arm);  // labels already swapped: these are the new
      mark(labels_[j], arm);  // labels; old labels are the same two values
      mark_subgroup(labels_[i]);
      mark_subgroup(labels_[j]);
    }
    Undo undo;
    for (std::size_t ci : touched_cells_) {
      undo.cells.emplace_back(ci, cells_[ci]);
      eval_cell(int(ci / 2), int(ci % 2));
    }
    for (int x : touched_subgroups_) {
      undo.subgroups.emplace_back(x, subgroups_[x]);
      eval_subgroup(x);
    }
    return undo;
  }

  void restore(const Undo& undo) {
    for (const auto& [ci, cache] : undo.cells) cells_[ci] = cache;
    for (const auto& [x, cache] : undo.subgroups) subgroups_[x] = cache;
  }

 private:
  void mark(int x, int arm) {
    const std::size_t ci = std::size_t(x) * 2 + std::size_t(arm);
    if (std::find(touched_cells_.begin(), touched_cells_.end(), ci) ==
        touched_cells_.end())
      touched_cells_.push_back(ci);
  }

  void mark_subgroup(int x) {
    if (std::find(touched_subgroups_.begin(), touched_subgroups_.end(), x) ==
        touched_subgroups_.end())
      touched_subgroups_.push_back(x);
  }

  void gather(int x, std::optional<int> arm) {
    scratch_.clear();
    for (int a = 0; a < 2; ++a) {
      if (arm && *arm != a) continue;
      for (int idx : arm_members_[a]) {
        if (labels_[idx] != x) continue;
        IpdRecord r;
        r.time = time_[idx];
        r.event = event_[idx];
        r.arm = a;
        scratch_.push_back(r);
      }
    }
  }

  void eval_cell(int x, int arm) {
    auto& cell = cells_[std::size_t(x) * 2 + std::size_t(arm)];
    gather(x, arm);
    const auto& tcell = target_.cell(x, arm);
    if (scratch_.empty()) {
      cell.median = SummaryTriple{};
      cell.rates.assign(target_.rate_times.size(), SummaryTriple{});
    } else {
      const auto km = km_fit(scratch_);
      cell.median = km_median(km);
      cell.rates.resize(target_.rate_times.size());
      for (std::size_t t = 0; t < target_.rate_times.size(); ++t)
        cell.rates[t] = survival_rate(km, target_.rate_times[t]);
    }
    cell.median_rae = triple_rae(tcell.median, cell.median, cfg_.ne_penalty);
    cell.rate_rae = 0.0;
    for (std::size_t t = 0; t < target_.rate_times.size(); ++t)
      cell.rate_rae = std::max(
          cell.rate_rae,
          triple_rae(tcell.rates[t], cell.rates[t], cfg_.ne_penalty));
  }

  void eval_subgroup(int x) {
    auto& sg = subgroups_[std::size_t(x)];
    gather(x, std::nullopt);
    try {
      sg.hr = cox_fit(scratch_).hr;
    } catch (const Error&) {
      sg.hr = SummaryTriple{};
    }
    sg.hr_rae =
        triple_rae(target_.hazard_ratios[x], sg.hr, cfg_.ne_penalty);
  }

  const SubgroupSummaryTable& target_;
  const AnnealConfig& cfg_;
  int k_;
  long n_ = 0;
  std::vector<double> time_;
  std::vector<int> event_;
  std::vector<int> arm_of_;
  std::array<std::vector<int>, 2> arm_members_;
  std::vector<std::array<long, 2>> counts_;
  std::vector<int> labels_;
  std::vector<CellCache> cells_;
  std::vector<SubgroupCache> subgroups_;
  std::vector<IpdRecord> scratch_;
  std::vector<std::size_t> touched_cells_;
  std::vector<int> touched_subgroups_;
};

}  // namespace detail

// Algorithm: from a count-feasible random start, repeatedly swap label pairs
// and accept by the four-branch rule:
//   (i)   loss_m strictly down and candidate loss_hr < max(H, current
//         loss_hr): accept, gamma++
//   (ii)  loss_m tied and loss_hr strictly down: accept, gamma++
//   (iii) loss_m up and candidate loss_hr <= H: accept w.p. f(delta, gamma)
//   (iv)  otherwise candidate loss_hr >= the applicable ceiling: reject
// The ceiling in (i) is effective, not absolute: random starts sit far above
// H, and demanding loss_hr < H there would freeze loss_m until the HR loss
// crossed the ceiling through exact-tie moves alone, which stalls on
// continuous losses. Above H the hazard-ratio loss must improve alongside
// every median-loss descent (so it never worsens while infeasible); once a
// state reaches hr <= H, max(H, loss_hr) = H and the ceiling is absolute
// from then on. Uphill moves (iii) are only ever taken inside the ceiling.
// Survival-rate targets, when present in the table, join the minimized
// objective as additional worst-case components alongside the medians.
inline CovGenResult run_covgen(const IpdDataset& data,
                               const SubgroupSummaryTable& target,
                               const AnnealConfig& cfg) {
  validate(cfg);
  if (data.records.empty()) throw Error("run_covgen: empty dataset");
  if (std::size_t(target.k_max) + 1 != target.cells.size() ||
      target.hazard_ratios.size() != target.cells.size())
    throw Error("run_covgen: malformed target table");

  detail::CovGenEngine eng(data, target, cfg);
  Rng rng(cfg.seed);

  CovGenResult result;
  auto& report = result.report;
  const bool has_rates = !target.rate_times.empty();
  if (has_rates)
    report.flags.push_back(
        "survival-rate targets included in the minimized objective");

  if (!cfg.initial_labels.empty()) {
    if (long(cfg.initial_labels.size()) != long(data.records.size()))
      throw Error("run_covgen: initial_labels length mismatch");
    eng.set_labels(cfg.initial_labels);
  } else {
    double best_hr = kInf;
    bool ok = false;
    const int tries = std::max(1, cfg.restarts);
    for (int t = 0; t < tries; ++t) {
      eng.set_labels(initial_assignment(eng.arm_of(), eng.counts(), rng));
      const double lhr = eng.loss_hr();
      if (std::isfinite(lhr) && lhr < 1.0) {
        ok = true;
        break;
      }
      best_hr = std::min(best_hr, lhr);
    }
    if (!ok)
      throw Error(format(
          "run_covgen: infeasible start; %d initial assignments all had "
          "hazard-ratio loss >= 1 (best %g)",
          tries, best_hr));
  }

  double loss_m = eng.loss_m();
  double loss_hr = eng.loss_hr();
  long gamma = 0;
  const double h = cfg.hr_ceiling;
  const long stride = cfg.trace_stride > 0
                          ? cfg.trace_stride
                          : std::max(1L, cfg.max_iters / 10000);
  result.trace.push_back({0, loss_m, loss_hr, 0, false, 0});

  auto stop_reached = [&]() {
    if (loss_m == 0.0 && loss_hr == 0.0) return true;
    if (!cfg.stop_tol_m && !cfg.stop_tol_hr) return false;
    if (cfg.stop_tol_m && !(loss_m <= *cfg.stop_tol_m)) return false;
    if (cfg.stop_tol_hr && !(loss_hr <= *cfg.stop_tol_hr)) return false;
    return true;
  };

  long iter = 0;
  bool converged = stop_reached();
  bool last_accepted = false;
  int last_branch = 0;
  long last_traced = 0;
  while (!converged && iter < cfg.max_iters) {
    ++iter;
    double hi = cfg.swap_hi;
    if (cfg.adaptive_shrink && cfg.stop_tol_m && *cfg.stop_tol_m > 0.0) {
      // walk b toward a as the objective approaches the stop tolerance
      const double scale =
          std::clamp(loss_m / (2.0 * *cfg.stop_tol_m), 0.0, 1.0);
      hi = cfg.swap_lo + (cfg.swap_hi - cfg.swap_lo) * scale;
    }
    const double alpha = rng.uniform(cfg.swap_lo, hi);
    auto pairs = propose_pairs(eng.labels(), eng.arm_of(), target.k_max,
                               alpha, rng);

    bool accepted = false;
    int branch = 0;
    if (pairs.empty()) {
      // candidate identical to current state
      if (loss_hr >= h) branch = 4;
    } else {
      auto undo = eng.reevaluate_touched(pairs);
      const double cand_m = eng.loss_m();
      const double cand_hr = eng.loss_hr();
      if (cand_m < loss_m && cand_hr < std::max(h, loss_hr)) {
        branch = 1;
        accepted = true;
      } else if (cand_m == loss_m && cand_hr < loss_hr) {
        branch = 2;
        accepted = true;
      } else if (cand_m > loss_m && cand_hr <= h) {
        branch = 3;
        const double p =
            acceptance_probability(cfg.acceptance, cand_m - loss_m, gamma);
        accepted = rng.uniform01() < p;
      } else if (cand_hr >= h) {
        branch = 4;
      }
      if (accepted) {
        loss_m = cand_m;
        loss_hr = cand_hr;
        if (branch == 1 || branch == 2) ++gamma;
      } else {
        eng.restore(undo);
        for (const auto& [i, j] : pairs)
          std::swap(eng.labels()[i], eng.labels()[j]);
      }
    }
    last_accepted = accepted;
    last_branch = branch;
    if (iter % stride == 0) {
      result.trace.push_back({iter, loss_m, loss_hr, gamma, accepted, branch});
      last_traced = iter;
    }
    converged = stop_reached();
  }
  if (iter > 0 && last_traced != iter)
    result.trace.push_back(
        {iter, loss_m, loss_hr, gamma, last_accepted, last_branch});

  result.dataset.records = data.records;
  result.dataset.k_max = target.k_max;
  for (std::size_t i = 0; i < result.dataset.records.size(); ++i)
    result.dataset.records[i].covariate = eng.labels()[i];

  result.state.assignment = eng.labels();
  result.state.loss_m = loss_m;
  result.state.loss_hr = loss_hr;
  result.state.gamma = gamma;
  result.state.iter = iter;

  // Final report from a clean full recomputation over the public path; the
  // incremental caches agree with it (property-tested).
  const auto final_table = summarize(result.dataset, target.rate_times);
  auto med = median_loss(final_table, target, cfg.ne_penalty);
  auto hrp = hazard_ratio_loss(final_table, target, cfg.ne_penalty);
  report.loss_m = med.value;
  report.loss_hr = hrp.value;
  report.components = std::move(med.components);
  report.components.insert(report.components.end(), hrp.components.begin(),
                           hrp.components.end());
  for (auto& f : med.flags) report.flags.push_back(std::move(f));
  for (auto& f : hrp.flags) report.flags.push_back(std::move(f));
  if (has_rates) {
    auto rp = rate_loss(final_table, target, cfg.ne_penalty);
    report.loss_extra = rp.value;
    report.components.insert(report.components.end(), rp.components.begin(),
                             rp.components.end());
    for (auto& f : rp.flags) report.flags.push_back(std::move(f));
    report.loss_m = std::max(report.loss_m, rp.value);
  }
  report.iterations = iter;
  report.gamma = gamma;
  report.converged = converged;
  return result;
}

// Flattens a multivariate categorical covariate into a single label,
// returning the per-record labels and the label map (flattened label ->
// source tuple).  Tuples are mapped in first-appearance order.
inline std::pair<std::vector<int>, std::vector<std::vector<int>>>
flatten_strata(const std::vector<std::vector<int>>& tuples) {
  std::vector<int> labels;
  std::vector<std::vector<int>> map;
  labels.reserve(tuples.size());
  for (const auto& t : tuples) {
    int found = -1;
    for (std::size_t m = 0; m < map.size(); ++m)
      if (map[m] == t) {
        found = int(m);
        break;
      }
    if (found < 0) {
      found = int(map.size());
      map.push_back(t);
    }
    labels.push_back(found);
  }
  return {labels, map};
}

}  // namespace synthipd
