#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "synthipd/covgen.hpp"
#include "synthipd/simulate.hpp"
#include "testutil.hpp"

using namespace synthipd;

namespace {

SummaryTriple triple(double e, double lo, double hi) {
  SummaryTriple t;
  t.estimate = e;
  t.lo95 = lo;
  t.hi95 = hi;
  return t;
}

// Minimal one-level table (k_max = 0) holding a single median triple per arm
// and one hazard ratio.
SubgroupSummaryTable tiny_table(SummaryTriple med0, SummaryTriple med1,
                                SummaryTriple hr) {
  SubgroupSummaryTable t;
  t.k_max = 0;
  t.cells.resize(1);
  t.hazard_ratios.resize(1);
  t.cell(0, 0).median = med0;
  t.cell(0, 1).median = med1;
  t.hazard_ratios[0] = hr;
  return t;
}

}  // namespace

TEST_CASE("median loss is the worst relative error over triple members",
          "[covgen][loss]") {
  SECTION("identical tables score zero") {
    const auto target = tiny_table(triple(10, 8, 12), triple(20, 15, 25),
                                   triple(0.5, 0.4, 0.6));
    REQUIRE(median_loss(target, target).value == 0.0);
    REQUIRE(hazard_ratio_loss(target, target).value == 0.0);
  }
  SECTION("single off estimate: 22.55 vs 22.83") {
    const auto target = tiny_table(triple(22.55, 16.37, 26.93),
                                   triple(22.55, 16.37, 26.93),
                                   triple(0.5, 0.4, 0.6));
    auto cand = target;
    cand.cell(0, 0).median.estimate = 22.83;
    const double expect = std::fabs(22.83 - 22.55) / 22.55;
    REQUIRE_THAT(median_loss(cand, target).value,
                 Catch::Matchers::WithinAbs(expect, 1e-12));
    REQUIRE_THAT(expect, Catch::Matchers::WithinAbs(0.01242, 2e-5));
  }
  SECTION("triple (10,8,12) against (10,8,15) scores 0.25") {
    const auto target = tiny_table(triple(10, 8, 12), triple(10, 8, 12),
                                   triple(0.5, 0.4, 0.6));
    auto cand = target;
    cand.cell(0, 0).median = triple(10, 8, 15);
    REQUIRE_THAT(median_loss(cand, target).value,
                 Catch::Matchers::WithinAbs(0.25, 1e-12));
  }
}

TEST_CASE("hazard-ratio loss mirrors the same contract", "[covgen][loss]") {
  SECTION("hr triple (0.21,0.16,0.26) vs (0.21,0.16,0.27)") {
    const auto target = tiny_table(triple(10, 8, 12), triple(10, 8, 12),
                                   triple(0.21, 0.16, 0.26));
    auto cand = target;
    cand.hazard_ratios[0] = triple(0.21, 0.16, 0.27);
    const double expect = std::fabs(0.27 - 0.26) / 0.26;
    REQUIRE_THAT(hazard_ratio_loss(cand, target).value,
                 Catch::Matchers::WithinAbs(expect, 1e-12));
    REQUIRE_THAT(expect, Catch::Matchers::WithinAbs(0.0385, 1e-4));
  }
  SECTION("max semantics: one subgroup off by ten percent") {
    SubgroupSummaryTable target;
    target.k_max = 1;
    target.cells.resize(2);
    target.hazard_ratios = {triple(0.5, 0.4, 0.6), triple(0.8, 0.7, 0.9)};
    auto cand = target;
    cand.hazard_ratios[1].estimate = 0.8 * 1.10;
    REQUIRE_THAT(hazard_ratio_loss(cand, target).value,
                 Catch::Matchers::WithinAbs(0.10, 1e-12));
  }
}

TEST_CASE("not-estimable members match by kind", "[covgen][loss]") {
  SummaryTriple ne;  // all members not estimable
  SECTION("NE against NE is free") {
    const auto target = tiny_table(ne, triple(10, 8, 12), triple(0.5, 0.4, 0.6));
    REQUIRE(median_loss(target, target).value == 0.0);
  }
  SECTION("NE against finite pays the penalty") {
    const auto target = tiny_table(ne, triple(10, 8, 12), triple(0.5, 0.4, 0.6));
    auto cand = target;
    cand.cell(0, 0).median = triple(9, 7, 11);
    REQUIRE(median_loss(cand, target, 1.0).value == 1.0);
    REQUIRE(median_loss(cand, target, 0.25).value == 0.25);
  }
  SECTION("finite target against NE candidate pays the penalty") {
    const auto target = tiny_table(triple(10, 8, 12), triple(10, 8, 12),
                                   triple(0.5, 0.4, 0.6));
    auto cand = target;
    cand.cell(0, 0).median = ne;
    REQUIRE(median_loss(cand, target, 1.0).value == 1.0);
  }
  SECTION("zero-valued targets are excluded and flagged") {
    const auto target = tiny_table(triple(0.0, 8, 12), triple(10, 8, 12),
                                   triple(0.5, 0.4, 0.6));
    auto cand = target;
    cand.cell(0, 0).median.estimate = 5.0;
    const auto part = median_loss(cand, target);
    REQUIRE(part.value == 0.0);
    REQUIRE(!part.flags.empty());
  }
}

TEST_CASE("uphill acceptance families", "[covgen]") {
  REQUIRE_THAT(acceptance_probability(AcceptFamily::kExpDecay, 3.0, 3),
               Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-15));
  REQUIRE(acceptance_probability(AcceptFamily::kExpDecay, 0.5, 0) == 0.0);
  REQUIRE(acceptance_probability(AcceptFamily::kZero, 0.5, 10) == 0.0);
  REQUIRE_THROWS_AS(acceptance_probability(AcceptFamily::kExpDecay, 0.0, 1),
                    Error);
  REQUIRE_NOTHROW(validate_acceptance_family(AcceptFamily::kExpDecay));
  REQUIRE_NOTHROW(validate_acceptance_family(AcceptFamily::kZero));
  REQUIRE_THROWS_AS(parse_accept_family("simulated"), Error);
}

TEST_CASE("initial assignment is an exact-count uniform shuffle", "[covgen]") {
  SECTION("counts are always honored") {
    Rng rng(21);
    std::vector<int> arm_of = {0, 0, 0, 1, 1, 1, 1};
    std::vector<std::array<long, 2>> counts = {{2, 1}, {1, 3}};
    for (int trial = 0; trial < 200; ++trial) {
      const auto labels = initial_assignment(arm_of, counts, rng);
      long got[2][2] = {{0, 0}, {0, 0}};
      for (std::size_t i = 0; i < labels.size(); ++i)
        got[labels[i]][arm_of[i]]++;
      REQUIRE(got[0][0] == 2);
      REQUIRE(got[1][0] == 1);
      REQUIRE(got[0][1] == 1);
      REQUIRE(got[1][1] == 3);
    }
  }
  SECTION("mismatched counts are rejected") {
    Rng rng(22);
    std::vector<int> arm_of = {0, 0, 1, 1};
    std::vector<std::array<long, 2>> counts = {{1, 1}, {2, 1}};
    REQUIRE_THROWS_AS(initial_assignment(arm_of, counts, rng), Error);
  }
  SECTION("four-outcome uniformity by chi-square") {
    // arm sizes (2, 2) with one of each label per arm: 2 x 2 equally likely
    // placements.  chi-square on 10k draws, 3 dof; 16.27 is the 0.1% cut.
    Rng rng(23);
    std::vector<int> arm_of = {0, 0, 1, 1};
    std::vector<std::array<long, 2>> counts = {{1, 1}, {1, 1}};
    std::map<std::vector<int>, long> freq;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
      freq[initial_assignment(arm_of, counts, rng)]++;
    REQUIRE(freq.size() == 4);
    double chi2 = 0.0;
    const double expect = draws / 4.0;
    for (const auto& [key, count] : freq)
      chi2 += (double(count) - expect) * (double(count) - expect) / expect;
    REQUIRE(chi2 < 16.27);
  }
}

TEST_CASE("proposals preserve per-cell counts and swap within arms",
          "[covgen]") {
  Rng rng(33);
  const long n = 60;
  std::vector<int> arm_of, labels;
  for (long i = 0; i < n; ++i) {
    arm_of.push_back(rng.bernoulli(0.5) ? 1 : 0);
    labels.push_back(int(rng.uniform_index(3)));
  }
  const int k_max = 2;
  auto base_counts = [&](const std::vector<int>& ls) {
    std::map<std::pair<int, int>, long> m;
    for (std::size_t i = 0; i < ls.size(); ++i) m[{ls[i], arm_of[i]}]++;
    return m;
  };
  const auto want = base_counts(labels);

  for (int trial = 0; trial < 2000; ++trial) {
    auto cand = labels;
    const auto pairs = propose_pairs(cand, arm_of, k_max,
                                     rng.uniform(1.0, 20.0), rng);
    REQUIRE(base_counts(cand) == want);
    std::vector<int> seen;
    for (const auto& [i, j] : pairs) {
      REQUIRE(arm_of[std::size_t(i)] == arm_of[std::size_t(j)]);
      REQUIRE(cand[std::size_t(i)] != cand[std::size_t(j)]);  // swapped, stay different
      seen.push_back(i);
      seen.push_back(j);
    }
    std::sort(seen.begin(), seen.end());
    REQUIRE(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  }

  SECTION("single-label data admits no swaps") {
    std::vector<int> flat(std::size_t(n), 0);
    auto cand = flat;
    const auto pairs = propose_pairs(cand, arm_of, 0, 10.0, rng);
    REQUIRE(pairs.empty());
    REQUIRE(cand == flat);
  }
}

namespace {

// Fixture for optimizer tests: a small dataset with a known labeling and the
// summary table that labeling generates.
struct SmallInstance {
  IpdDataset data;           // labels stripped
  std::vector<int> truth;    // the labeling that generated the target
  SubgroupSummaryTable target;
  std::vector<std::array<long, 2>> counts;
};

SmallInstance make_instance(std::uint64_t seed, long n) {
  Rng rng(seed);
  IpdDataset labeled;
  labeled.k_max = 1;
  for (long i = 0; i < n; ++i) {
    IpdRecord r;
    r.time = rng.exponential(0.1);
    r.event = rng.bernoulli(0.85) ? 1 : 0;
    r.arm = i % 2;
    r.covariate = rng.bernoulli(0.5) ? 1 : 0;
    labeled.records.push_back(r);
  }
  // ensure both labels in both arms so every cell is populated
  labeled.records[0].covariate = 0;
  labeled.records[1].covariate = 0;
  labeled.records[2].covariate = 1;
  labeled.records[3].covariate = 1;

  SmallInstance inst;
  inst.target = summarize(labeled);
  inst.counts = cell_counts(labeled);
  for (const auto& r : labeled.records) inst.truth.push_back(*r.covariate);
  inst.data = labeled;
  for (auto& r : inst.data.records) r.covariate.reset();
  return inst;
}

// Exhaustive minimum of the median loss over count-feasible assignments with
// hazard-ratio loss below the ceiling.
double exhaustive_best(const SmallInstance& inst, double h) {
  std::vector<int> arm0_labels, arm1_labels;
  for (std::size_t i = 0; i < inst.truth.size(); ++i)
    (inst.data.records[i].arm ? arm1_labels : arm0_labels)
        .push_back(inst.truth[i]);
  const auto perms0 = testutil::all_label_permutations(arm0_labels);
  const auto perms1 = testutil::all_label_permutations(arm1_labels);

  double best = kInf;
  IpdDataset cand = inst.data;
  for (const auto& p0 : perms0)
    for (const auto& p1 : perms1) {
      std::size_t i0 = 0, i1 = 0;
      for (auto& r : cand.records)
        r.covariate = r.arm ? p1[i1++] : p0[i0++];
      const auto table = summarize(cand);
      const double lm = median_loss(table, inst.target).value;
      const double lhr = hazard_ratio_loss(table, inst.target).value;
      if (lhr <= h) best = std::min(best, lm);
    }
  return best;
}

}  // namespace

TEST_CASE("start at the target labeling returns immediately with zero loss",
          "[covgen][search]") {
  const auto inst = make_instance(404, 16);
  AnnealConfig cfg;
  cfg.max_iters = 1000;
  cfg.hr_ceiling = 0.5;
  cfg.seed = 1;
  cfg.initial_labels = inst.truth;
  const auto result = run_covgen(inst.data, inst.target, cfg);
  REQUIRE(result.report.loss_m == 0.0);
  REQUIRE(result.report.loss_hr == 0.0);
  REQUIRE(result.report.converged);
  REQUIRE(result.state.iter == 0);
  REQUIRE(result.dataset.fully_assigned());
}

TEST_CASE("randomized descent reaches the exhaustive optimum on tiny instances",
          "[covgen][search]") {
  const double h = 0.5;
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto inst = make_instance(1000 + seed, 12);
    const double best = exhaustive_best(inst, h);

    double found = kInf;
    for (std::uint64_t restart = 0; restart < 12; ++restart) {
      AnnealConfig cfg;
      cfg.max_iters = 4000;
      cfg.hr_ceiling = h;
      cfg.acceptance = AcceptFamily::kZero;
      cfg.swap_lo = 5.0;
      cfg.swap_hi = 20.0;
      cfg.seed = derive_seed(9000 + seed, restart);
      const auto result = run_covgen(inst.data, inst.target, cfg);
      found = std::min(found, result.report.loss_m);
    }
    if (std::fabs(found - best) <= 1e-9) ++hits;
  }
  REQUIRE(hits >= 2);  // the acceptance gate requires 18/20 at full scale
}

TEST_CASE("trace records the four-branch dynamics faithfully",
          "[covgen][search]") {
  const auto inst = make_instance(70, 20);
  AnnealConfig cfg;
  cfg.max_iters = 3000;
  cfg.hr_ceiling = 0.10;
  cfg.acceptance = AcceptFamily::kZero;
  cfg.trace_stride = 1;
  cfg.seed = 5;
  const auto result = run_covgen(inst.data, inst.target, cfg);
  REQUIRE(!result.trace.empty());

  long gamma = 0;
  double prev_m = kInf, prev_hr = kInf;
  bool first = true;
  for (const auto& row : result.trace) {
    if (row.branch == 4) REQUIRE(!row.accepted);
    if (row.accepted && (row.branch == 1 || row.branch == 2)) ++gamma;
    REQUIRE(row.gamma == gamma);
    if (!first) {
      // zero family: accepted losses never go lexicographically up
      if (row.loss_m == prev_m)
        REQUIRE(row.loss_hr <= prev_hr);
      else
        REQUIRE(row.loss_m < prev_m);
    }
    prev_m = row.loss_m;
    prev_hr = row.loss_hr;
    first = false;
  }
  REQUIRE(result.state.gamma == gamma);
}

TEST_CASE("identical configurations reproduce identical traces",
          "[covgen][search]") {
  const auto inst = make_instance(71, 18);
  AnnealConfig cfg;
  cfg.max_iters = 1500;
  cfg.hr_ceiling = 0.2;
  cfg.trace_stride = 7;
  cfg.seed = 99;
  const auto a = run_covgen(inst.data, inst.target, cfg);
  const auto b = run_covgen(inst.data, inst.target, cfg);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    REQUIRE(a.trace[i].iter == b.trace[i].iter);
    REQUIRE(a.trace[i].loss_m == b.trace[i].loss_m);
    REQUIRE(a.trace[i].loss_hr == b.trace[i].loss_hr);
    REQUIRE(a.trace[i].gamma == b.trace[i].gamma);
    REQUIRE(a.trace[i].accepted == b.trace[i].accepted);
    REQUIRE(a.trace[i].branch == b.trace[i].branch);
  }
  REQUIRE(a.state.assignment == b.state.assignment);
}

TEST_CASE("rate targets join the minimized objective", "[covgen][search]") {
  // labeled data summarized WITH a rate timepoint; the run must report the
  // extra loss and flag the folding
  Rng rng(55);
  IpdDataset labeled;
  labeled.k_max = 1;
  for (long i = 0; i < 24; ++i) {
    IpdRecord r;
    r.time = rng.exponential(0.15);
    r.event = 1;
    r.arm = i % 2;
    r.covariate = (i / 2) % 2;
    labeled.records.push_back(r);
  }
  const auto target = summarize(labeled, {4.0});
  auto data = labeled;
  for (auto& r : data.records) r.covariate.reset();

  AnnealConfig cfg;
  cfg.max_iters = 2000;
  cfg.hr_ceiling = 0.9;
  cfg.seed = 3;
  const auto result = run_covgen(data, target, cfg);
  REQUIRE(result.report.loss_extra.has_value());
  bool flagged = false;
  for (const auto& f : result.report.flags)
    flagged |= f.find("rate") != std::string::npos;
  REQUIRE(flagged);
}

TEST_CASE("infeasible configurations are rejected with diagnostics",
          "[covgen]") {
  const auto inst = make_instance(88, 10);
  AnnealConfig cfg;
  cfg.hr_ceiling = 1.5;  // outside (0,1)
  REQUIRE_THROWS_AS(run_covgen(inst.data, inst.target, cfg), Error);
  cfg.hr_ceiling = 0.01;
  cfg.swap_lo = 0.0;
  REQUIRE_THROWS_AS(run_covgen(inst.data, inst.target, cfg), Error);
}

TEST_CASE("strata flattening maps tuples by first appearance", "[covgen]") {
  const std::vector<std::vector<int>> tuples = {
      {0, 1}, {1, 0}, {0, 1}, {2, 2}, {1, 0}};
  const auto [labels, map] = flatten_strata(tuples);
  REQUIRE(labels == std::vector<int>{0, 1, 0, 2, 1});
  REQUIRE(map == std::vector<std::vector<int>>{{0, 1}, {1, 0}, {2, 2}});
}
