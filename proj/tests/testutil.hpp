#pragma once

// Shared test oracles: independent reference implementations the library
// results are checked against.  Everything here is written directly from
// the defining formulas, structured differently from the library code so a
// shared bug is unlikely.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "synthipd/rng.hpp"
#include "synthipd/survival.hpp"
#include "synthipd/types.hpp"

namespace testutil {

// ---------------------------------------------------------------------------
// Product-limit oracle.  Walks the distinct event times in order; at each,
// counts the at-risk set by rescanning the whole sample.  Uses the defining
// factor (1 - d/n) so agreement with an efficient implementation is exact,
// not approximate.
struct OracleKm {
  std::vector<double> times;     // distinct event times, ascending
  std::vector<double> survival;  // product-limit value at each
  std::vector<double> var_sum;   // Greenwood cumulative sum d/(n(n-d))
  std::vector<double> lower;     // log-transform 95% band
  std::vector<double> upper;
};

inline OracleKm oracle_km(const std::vector<synthipd::IpdRecord>& slice) {
  std::set<double> event_times;
  for (const auto& r : slice)
    if (r.event) event_times.insert(r.time);

  OracleKm out;
  double s = 1.0;
  double vsum = 0.0;
  for (double t : event_times) {
    double n = 0, d = 0;
    for (const auto& r : slice) {
      if (r.time >= t) n += 1;
      if (r.event && r.time == t) d += 1;
    }
    s *= 1.0 - d / n;
    vsum += (n > d) ? d / (n * (n - d)) : synthipd::kInf;
    out.times.push_back(t);
    out.survival.push_back(s);
    out.var_sum.push_back(vsum);
    if (s > 0.0 && std::isfinite(vsum)) {
      const double se = std::sqrt(vsum);
      out.lower.push_back(s * std::exp(-1.96 * se));
      out.upper.push_back(std::min(1.0, s * std::exp(1.96 * se)));
    } else {
      out.lower.push_back(synthipd::kNaN);
      out.upper.push_back(synthipd::kNaN);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exact Cox partial log-likelihood for untied data, straight from the
// definition: at each event time, theta * arm - log(sum over the risk set of
// exp(theta * arm_j)).
inline double oracle_cox_loglik_noties(
    const std::vector<synthipd::IpdRecord>& slice, double theta) {
  double ll = 0.0;
  for (const auto& ev : slice) {
    if (!ev.event) continue;
    double denom = 0.0;
    for (const auto& r : slice)
      if (r.time >= ev.time) denom += r.arm ? std::exp(theta) : 1.0;
    ll += theta * ev.arm - std::log(denom);
  }
  return ll;
}

// Grid-search maximizer at `fine` resolution: coarse pass over [lo, hi],
// then an exhaustive fine grid around the coarse winner.  The partial
// likelihood is concave in theta, so the bracket contains the maximizer.
inline double oracle_cox_grid_max(const std::vector<synthipd::IpdRecord>& slice,
                                  double lo = -8.0, double hi = 8.0,
                                  double coarse = 0.05, double fine = 1e-4) {
  double best_t = lo, best_v = -synthipd::kInf;
  for (double t = lo; t <= hi + 1e-12; t += coarse) {
    const double v = oracle_cox_loglik_noties(slice, t);
    if (v > best_v) {
      best_v = v;
      best_t = t;
    }
  }
  const double a = best_t - 2.0 * coarse, b = best_t + 2.0 * coarse;
  for (double t = a; t <= b + 1e-12; t += fine) {
    const double v = oracle_cox_loglik_noties(slice, t);
    if (v > best_v) {
      best_v = v;
      best_t = t;
    }
  }
  return best_t;
}

// ---------------------------------------------------------------------------
// Riemann oracle for the normalized area between two step functions:
// midpoint sum over equal slices of [0, tau] with the given absolute
// spacing.  The error is bounded by (number of drops) * spacing / tau.
inline double oracle_nauc_riemann(const synthipd::StepCurve& f,
                                  const synthipd::StepCurve& g, double tau,
                                  double spacing = 1e-6) {
  const long steps = std::max(1L, long(std::ceil(tau / spacing)));
  const double h = tau / double(steps);
  double area = 0.0;
  std::size_t fi = 0, gi = 0;  // index of the last drop at or before t
  double fv = 1.0, gv = 1.0;
  for (long k = 0; k < steps; ++k) {
    const double t = (double(k) + 0.5) * h;
    while (fi < f.times.size() && f.times[fi] <= t) fv = f.survival[fi++];
    while (gi < g.times.size() && g.times[gi] <= t) gv = g.survival[gi++];
    area += h * std::fabs(fv - gv);
  }
  return area / tau;
}

// ---------------------------------------------------------------------------
// Random test data.
inline std::vector<synthipd::IpdRecord> random_records(
    synthipd::Rng& rng, long n, double event_prob = 0.7,
    bool allow_ties = false) {
  std::vector<synthipd::IpdRecord> out;
  out.reserve(std::size_t(n));
  for (long i = 0; i < n; ++i) {
    synthipd::IpdRecord r;
    r.time = allow_ties ? double(1 + rng.uniform_index(std::size_t(n)))
                        : rng.exponential(0.1);
    r.event = rng.bernoulli(event_prob) ? 1 : 0;
    r.arm = rng.bernoulli(0.5) ? 1 : 0;
    out.push_back(r);
  }
  // make sure both arms appear and at least one event exists
  if (!out.empty()) {
    out[0].arm = 0;
    out[0].event = 1;
    out[std::size_t(n - 1)].arm = 1;
    out[std::size_t(n - 1)].event = 1;
  }
  return out;
}

// Random step function on [0, horizon]: monotone staircase from 1 downward.
inline synthipd::StepCurve random_step(synthipd::Rng& rng, double horizon,
                                       int max_drops = 12) {
  synthipd::StepCurve s;
  const int k = 1 + int(rng.uniform_index(std::size_t(max_drops)));
  std::vector<double> ts;
  for (int i = 0; i < k; ++i) ts.push_back(rng.uniform(0.0, horizon));
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  double level = 1.0;
  for (double t : ts) {
    level *= rng.uniform(0.3, 0.98);
    s.times.push_back(t);
    s.survival.push_back(level);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scratch directory for file-format tests, removed when the test ends.  A
// process-wide counter keeps paths unique even when several tests in one
// binary create directories back to back.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("synthipd-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

// Exhaustive distinct permutations of a label multiset, as sorted start +
// next_permutation walk.
inline std::vector<std::vector<int>> all_label_permutations(
    std::vector<int> labels) {
  std::sort(labels.begin(), labels.end());
  std::vector<std::vector<int>> out;
  do {
    out.push_back(labels);
  } while (std::next_permutation(labels.begin(), labels.end()));
  return out;
}

}  // namespace testutil
