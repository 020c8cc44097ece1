#pragma once

// Survival-analysis kernel: product-limit curves with Greenwood variance and
// log-transformed confidence bands, median extraction with band-crossing
// intervals, and a Newton solver for the two-arm proportional-hazards model
// with Efron tie handling and optional stratification.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "synthipd/common.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

struct StepCurve {
  std::vector<double> times;     // strictly increasing drop times
  std::vector<double> survival;  // value taken at times[i]; non-increasing
  std::vector<double> censor_times;

  // Right-continuous evaluation; 1 before the first drop.
  double eval(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[std::size_t(it - times.begin()) - 1];
  }

  // Left limit: the value just before t.
  double eval_left(double t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[std::size_t(it - times.begin()) - 1];
  }

  double max_time() const {
    double m = times.empty() ? 0.0 : times.back();
    for (double c : censor_times) m = std::max(m, c);
    return m;
  }
};

struct KmCurve {
  StepCurve step;
  // Greenwood cumulative sum at each drop: sum d / (n (n - d)); this is the
  // variance of log S, and S^2 times it is the variance of S.
  std::vector<double> var_sum;
  std::vector<double> lower;  // pointwise 95% band, log transform; NaN when
  std::vector<double> upper;  // undefined (S = 0)
  long n = 0;
};

constexpr double kZ95 = 1.96;

inline KmCurve km_fit(std::span<const IpdRecord> slice) {
  if (slice.empty()) throw Error("km_fit: empty slice");
  std::vector<std::pair<double, int>> obs;
  obs.reserve(slice.size());
  for (const auto& r : slice) obs.emplace_back(r.time, r.event);
  std::sort(obs.begin(), obs.end());

  KmCurve km;
  km.n = long(obs.size());
  double at_risk = double(obs.size());
  double s = 1.0;
  double vsum = 0.0;
  std::size_t i = 0;
  while (i < obs.size()) {
    const double t = obs[i].first;
    long d = 0, c = 0;
    std::size_t j = i;
    while (j < obs.size() && obs[j].first == t) {
      obs[j].second ? ++d : ++c;
      ++j;
    }
    if (d > 0) {
      s *= 1.0 - double(d) / at_risk;
      vsum += (at_risk > double(d))
                  ? double(d) / (at_risk * (at_risk - double(d)))
                  : kInf;
      km.step.times.push_back(t);
      km.step.survival.push_back(s);
      km.var_sum.push_back(vsum);
      if (s > 0.0 && std::isfinite(vsum)) {
        const double se = std::sqrt(vsum);
        km.lower.push_back(s * std::exp(-kZ95 * se));
        km.upper.push_back(std::min(1.0, s * std::exp(kZ95 * se)));
      } else {
        km.lower.push_back(kNaN);
        km.upper.push_back(kNaN);
      }
    }
    for (long k = 0; k < c; ++k) km.step.censor_times.push_back(t);
    at_risk -= double(d + c);
    i = j;
  }
  return km;
}

// First listed drop time where `values[i] <= 0.5`; values may contain NaN
// entries which are skipped, matching the band-crossing convention.
inline std::optional<double> first_crossing(const std::vector<double>& times,
                                            const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    if (values[i] <= 0.5) return times[i];
  }
  return std::nullopt;
}

// Median survival: smallest time with S <= 0.5.  The interval comes from the
// crossings of the pointwise bands: the lower band crosses no later than the
// curve and yields the lower bound, the upper band yields the upper bound.
inline SummaryTriple km_median(const KmCurve& km) {
  SummaryTriple out;
  out.estimate = first_crossing(km.step.times, km.step.survival);
  out.lo95 = first_crossing(km.step.times, km.lower);
  out.hi95 = first_crossing(km.step.times, km.upper);
  return out;
}

// S(t) with its pointwise band.  Before the first event the estimate is 1
// with a degenerate interval.  `extrapolated`, when given, is set when t lies
// beyond the largest observed time.
inline SummaryTriple survival_rate(const KmCurve& km, double t,
                                   bool* extrapolated = nullptr) {
  if (extrapolated) *extrapolated = t > km.step.max_time();
  auto it = std::upper_bound(km.step.times.begin(), km.step.times.end(), t);
  SummaryTriple out;
  if (it == km.step.times.begin()) {
    out.estimate = 1.0;
    out.lo95 = 1.0;
    out.hi95 = 1.0;
    return out;
  }
  const std::size_t i = std::size_t(it - km.step.times.begin()) - 1;
  out.estimate = km.step.survival[i];
  if (!std::isnan(km.lower[i])) out.lo95 = km.lower[i];
  if (!std::isnan(km.upper[i])) out.hi95 = km.upper[i];
  return out;
}

namespace detail {

// Tie group at one event time within one stratum: at-risk and event counts
// split by arm.
struct TieGroup {
  double n0, n1;  // at risk just before the event time
  double d0, d1;  // events at the time
};

inline std::vector<TieGroup> cox_groups(std::span<const IpdRecord> slice,
                                        const std::vector<int>* strata) {
  struct Row {
    int stratum;
    double time;
    int event;
    int arm;
  };
  std::vector<Row> rows;
  rows.reserve(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    rows.push_back({strata ? strata->at(i) : 0, slice[i].time, slice[i].event,
                    slice[i].arm});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.stratum != b.stratum) return a.stratum < b.stratum;
    return a.time < b.time;
  });

  std::vector<TieGroup> groups;
  std::size_t i = 0;
  while (i < rows.size()) {
    const int st = rows[i].stratum;
    std::size_t end = i;
    double n0 = 0, n1 = 0;
    while (end < rows.size() && rows[end].stratum == st) {
      rows[end].arm ? ++n1 : ++n0;
      ++end;
    }
    std::size_t j = i;
    while (j < end) {
      const double t = rows[j].time;
      double d0 = 0, d1 = 0, out0 = 0, out1 = 0;
      while (j < end && rows[j].time == t) {
        if (rows[j].event) (rows[j].arm ? d1 : d0) += 1;
        (rows[j].arm ? out1 : out0) += 1;
        ++j;
      }
      if (d0 + d1 > 0) groups.push_back({n0, n1, d0, d1});
      n0 -= out0;
      n1 -= out1;
    }
    i = end;
  }
  return groups;
}

struct CoxDerivs {
  double loglik = 0, grad = 0, info = 0;
};

// Partial log-likelihood with Efron tie correction for a single binary
// predictor (arm), plus first two derivatives in theta.
inline CoxDerivs cox_derivs(const std::vector<TieGroup>& groups, double theta) {
  CoxDerivs out;
  const double w = std::exp(theta);
  for (const auto& g : groups) {
    const double d = g.d0 + g.d1;
    const double s0 = g.n0 + g.n1 * w;
    const double s1 = g.n1 * w;
    const double t0 = g.d0 + g.d1 * w;
    const double t1 = g.d1 * w;
    out.loglik += theta * g.d1;
    for (double l = 0; l < d; ++l) {
      const double phi = s0 - (l / d) * t0;
      const double a = s1 - (l / d) * t1;
      out.loglik -= std::log(phi);
      const double r = a / phi;
      out.grad -= r;
      out.info += r * (1.0 - r);
    }
    out.grad += g.d1;
  }
  return out;
}

}  // namespace detail

// Log partial likelihood at a given coefficient; exposed so tests can check
// the solver's gradient against finite differences.
inline double cox_loglik(std::span<const IpdRecord> slice, double theta,
                         const std::vector<int>* strata = nullptr) {
  return detail::cox_derivs(detail::cox_groups(slice, strata), theta).loglik;
}

struct CoxFit {
  double theta = 0.0;  // log hazard ratio, arm 1 vs arm 0
  double se = 0.0;
  SummaryTriple hr;
  int iterations = 0;
  double grad = 0.0;  // score at theta, for convergence reporting
};

// Newton iteration from theta = 0 on the Efron partial likelihood.
// Converges when |gradient| < 1e-9; steps are halved while the candidate
// likelihood is non-finite.  A monotone likelihood (complete separation of
// the arms in event order) has no finite maximizer; it is detected up front
// from the tie groups -- the gradient limit at +/-inf is zero iff every
// event group whose risk set still contains the favored arm has all of its
// events in that arm -- and reported as non-convergence.  A coefficient
// walking past |theta| > 35 is kept as a numeric backstop.
inline CoxFit cox_fit(std::span<const IpdRecord> slice,
                      const std::vector<int>* strata = nullptr) {
  if (strata && strata->size() != slice.size())
    throw Error("cox_fit: strata length mismatch");
  bool arm_seen[2] = {false, false};
  long events = 0;
  for (const auto& r : slice) {
    arm_seen[r.arm] = true;
    events += r.event;
  }
  if (events == 0) throw Error("cox_fit: no events in slice");
  if (!arm_seen[0] || !arm_seen[1])
    throw Error("cox_fit: both arms required in slice");

  const auto groups = detail::cox_groups(slice, strata);
  bool sep_up = true, sep_down = true;  // theta -> +inf / -inf
  for (const auto& g : groups) {
    const long d = g.d0 + g.d1;
    if (g.n1 > 0 && g.d1 != d) sep_up = false;
    if (g.n0 > 0 && g.d1 != 0) sep_down = false;
  }
  if (sep_up || sep_down)
    throw Error("cox_fit: monotone partial likelihood (separation)");
  double theta = 0.0;
  auto cur = detail::cox_derivs(groups, theta);
  CoxFit fit;
  const int max_iter = 50;
  for (int it = 1; it <= max_iter; ++it) {
    fit.iterations = it;
    if (std::fabs(cur.grad) < 1e-9) break;
    if (!(cur.info > 1e-12))
      throw Error("cox_fit: no between-arm information at event times");
    double step = cur.grad / cur.info;
    double cand_theta = theta + step;
    auto cand = detail::cox_derivs(groups, cand_theta);
    int halvings = 0;
    while (!std::isfinite(cand.loglik) && halvings < 40) {
      step *= 0.5;
      cand_theta = theta + step;
      cand = detail::cox_derivs(groups, cand_theta);
      ++halvings;
    }
    if (!std::isfinite(cand.loglik))
      throw Error("cox_fit: likelihood non-finite; fit did not converge");
    theta = cand_theta;
    cur = cand;
    if (std::fabs(theta) > 35.0)
      throw Error("cox_fit: monotone partial likelihood (separation)");
  }
  if (std::fabs(cur.grad) >= 1e-9)
    throw Error("cox_fit: did not converge in 50 iterations");
  if (!(cur.info > 1e-12))
    throw Error("cox_fit: no between-arm information at event times");
  fit.theta = theta;
  fit.grad = cur.grad;
  fit.se = 1.0 / std::sqrt(cur.info);
  fit.hr.estimate = std::exp(theta);
  fit.hr.lo95 = std::exp(theta - kZ95 * fit.se);
  fit.hr.hi95 = std::exp(theta + kZ95 * fit.se);
  return fit;
}

// Subgroup summary of a fully assigned dataset: per-(x, arm) counts and
// median triples, one hazard ratio per covariate level, and optional
// survival-rate triples at the given timepoints.  Cells whose slice is empty
// or whose fit fails are marked not-estimable.
inline SubgroupSummaryTable summarize(const IpdDataset& data,
                                      const std::vector<double>& rate_times = {}) {
  if (!data.fully_assigned())
    throw Error("summarize: dataset has unassigned covariates");
  validate(data);
  SubgroupSummaryTable table;
  table.k_max = data.k_max;
  table.rate_times = rate_times;
  table.cells.resize(std::size_t(data.k_max) + 1);
  table.hazard_ratios.resize(std::size_t(data.k_max) + 1);

  for (int x = 0; x <= data.k_max; ++x) {
    std::vector<IpdRecord> pooled;
    for (int arm = 0; arm < 2; ++arm) {
      auto slice = subset(data, x, arm);
      auto& cell = table.cell(x, arm);
      cell.n = long(slice.size());
      cell.rates.assign(rate_times.size(), SummaryTriple{});
      if (slice.empty()) continue;
      const auto km = km_fit(slice);
      cell.median = km_median(km);
      for (std::size_t t = 0; t < rate_times.size(); ++t)
        cell.rates[t] = survival_rate(km, rate_times[t]);
      pooled.insert(pooled.end(), slice.begin(), slice.end());
    }
    try {
      table.hazard_ratios[x] = cox_fit(pooled).hr;
    } catch (const Error&) {
      table.hazard_ratios[x] = SummaryTriple{};
    }
  }
  return table;
}

}  // namespace synthipd
