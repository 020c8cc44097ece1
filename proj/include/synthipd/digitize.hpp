#pragma once

// Reconstruction of per-patient event/censoring records from a digitized
// Kaplan-Meier curve plus an at-risk table, via interval accounting:
// spread censorings over tick marks (or uniformly when no ticks are drawn),
// then recover event multiplicities with a chronological sweep that keeps a
// running at-risk count and inverts each survival drop locally, so an exact
// figure round-trips to the exact record multiset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "synthipd/common.hpp"
#include "synthipd/rng.hpp"
#include "synthipd/survival.hpp"
#include "synthipd/svg.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

// Two (pixel, data) anchor pairs per axis define the affine pixel->data map.
struct AxisAnchor {
  double pixel = 0.0;
  double data = 0.0;
};

struct AxisCalibration {
  std::array<AxisAnchor, 2> x_anchors;  // time axis
  std::array<AxisAnchor, 2> y_anchors;  // survival axis

  double time_of(double px) const {
    return x_anchors[0].data + (px - x_anchors[0].pixel) *
                                   (x_anchors[1].data - x_anchors[0].data) /
                                   (x_anchors[1].pixel - x_anchors[0].pixel);
  }
  double survival_of(double py) const {
    return y_anchors[0].data + (py - y_anchors[0].pixel) *
                                   (y_anchors[1].data - y_anchors[0].data) /
                                   (y_anchors[1].pixel - y_anchors[0].pixel);
  }
};

inline void validate(const AxisCalibration& cal) {
  if (cal.x_anchors[0].pixel == cal.x_anchors[1].pixel)
    throw Error("calibration: time-axis anchor pixels coincide");
  if (cal.y_anchors[0].pixel == cal.y_anchors[1].pixel)
    throw Error("calibration: survival-axis anchor pixels coincide");
  if (cal.x_anchors[0].data == cal.x_anchors[1].data)
    throw Error("calibration: time-axis anchor data values coincide");
  if (cal.y_anchors[0].data == cal.y_anchors[1].data)
    throw Error("calibration: survival-axis anchor data values coincide");
  for (const auto& a : cal.y_anchors)
    if (a.data < 0.0 || a.data > 1.0)
      throw Error("calibration: survival anchors must lie in [0, 1]");
}

// Published at-risk table: shared time grid, per-arm at-risk counts, and
// optionally per-interval reported censor counts.
struct RiskTable {
  std::vector<double> grid;
  std::array<std::vector<long>, 2> at_risk;
  std::array<std::vector<long>, 2> reported_censor;  // empty or size grid-1

  std::size_t intervals() const { return grid.empty() ? 0 : grid.size() - 1; }
};

inline void validate(const RiskTable& risk) {
  if (risk.grid.size() < 2)
    throw Error("risk table: need at least two grid times");
  for (std::size_t i = 1; i < risk.grid.size(); ++i)
    if (!(risk.grid[i] > risk.grid[i - 1]))
      throw Error("risk table: grid times must be strictly increasing");
  for (int arm = 0; arm < 2; ++arm) {
    const auto& n = risk.at_risk[arm];
    if (n.size() != risk.grid.size())
      throw Error(format("risk table: arm %d at-risk length %zu != grid %zu",
                         arm, n.size(), risk.grid.size()));
    if (n.front() <= 0)
      throw Error(format("risk table: arm %d starts with no patients", arm));
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (n[i] < 0)
        throw Error(format("risk table: arm %d has a negative count", arm));
      if (i > 0 && n[i] > n[i - 1])
        throw Error(
            format("risk table: arm %d at-risk counts increase at index %zu",
                   arm, i));
    }
    const auto& rc = risk.reported_censor[arm];
    if (!rc.empty()) {
      if (rc.size() != risk.intervals())
        throw Error(format(
            "risk table: arm %d reported censor counts length %zu != "
            "interval count %zu",
            arm, rc.size(), risk.intervals()));
      for (long v : rc)
        if (v < 0)
          throw Error(format("risk table: arm %d reported censor count < 0",
                             arm));
    }
  }
}

// A curve read off a figure: unique drop times with post-drop survival
// levels, the level the curve starts at, and censor-tick times.
struct DigitizedCurve {
  int arm = 0;
  double start_time = 0.0;
  double start_level = 1.0;
  std::vector<std::pair<double, double>> unique_points;  // (time, survival)
  std::vector<double> censor_ticks;

  // Left limit: survival just before t.
  double value_before(double t) const {
    double level = start_level;
    for (const auto& [time, s] : unique_points) {
      if (time >= t) break;
      level = s;
    }
    return level;
  }

  // Right-continuous value at t.
  double value_at(double t) const {
    double level = start_level;
    for (const auto& [time, s] : unique_points) {
      if (time > t) break;
      level = s;
    }
    return level;
  }

  StepCurve to_step() const {
    StepCurve step;
    if (start_level < 1.0) {
      step.times.push_back(start_time);
      step.survival.push_back(start_level);
    }
    for (const auto& [time, s] : unique_points) {
      step.times.push_back(time);
      step.survival.push_back(s);
    }
    step.censor_times = censor_ticks;
    return step;
  }
};

inline void validate(const DigitizedCurve& curve) {
  double level = curve.start_level;
  if (level < 0.0 || level > 1.0)
    throw Error("digitized curve: start level outside [0, 1]");
  double prev_t = curve.start_time;
  for (const auto& [t, s] : curve.unique_points) {
    if (t < prev_t)
      throw Error("digitized curve: drop times out of order");
    if (s > level || s < 0.0)
      throw Error("digitized curve: survival not non-increasing in [0, 1]");
    prev_t = t;
    level = s;
  }
}

struct SvgParseOptions {
  double tick_max_px = 15.0;    // selected elements at most this long are
                                // censor-tick candidates
  double tick_slack_px = 2.5;   // max pixel distance from tick to curve
  double monotone_tol = 1e-6;   // data-unit tolerance for survival jitter
};

namespace detail {

inline double point_segment_distance(const std::array<double, 2>& p,
                                     const std::array<double, 2>& a,
                                     const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = p[0] - a[0], wy = p[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p[0] - (a[0] + t * vx), p[1] - (a[1] + t * vy));
}

}  // namespace detail

// Extracts one arm's curve from parsed SVG: selected long pieces are the
// step curve (concatenated in document order, reversed if drawn
// right-to-left); selected short segments lying on the curve are censor
// ticks.  Output is in data space via the calibration.
inline DigitizedCurve parse_svg(const XmlNode& root,
                                const AxisCalibration& cal,
                                const Selector& sel, int arm,
                                const SvgParseOptions& opts = {}) {
  validate(cal);
  const auto elements = collect_selected(root, sel);
  if (elements.empty())
    throw Error("svg: no element matches the configured curve selector");

  std::vector<std::array<double, 2>> curve_px;
  std::vector<std::pair<std::array<double, 2>, std::array<double, 2>>>
      curve_segments;
  std::vector<std::array<double, 2>> tick_centroids;
  for (const auto& el : elements) {
    if (el.length > opts.tick_max_px) {
      for (const auto& sp : el.subpaths) {
        for (std::size_t i = 1; i < sp.size(); ++i)
          curve_segments.emplace_back(sp[i - 1], sp[i]);
        curve_px.insert(curve_px.end(), sp.begin(), sp.end());
      }
    } else {
      for (const auto& sp : el.subpaths) {
        if (sp.empty()) continue;
        std::array<double, 2> c{0, 0};
        for (const auto& p : sp) {
          c[0] += p[0];
          c[1] += p[1];
        }
        c[0] /= double(sp.size());
        c[1] /= double(sp.size());
        tick_centroids.push_back(c);
      }
    }
  }
  if (curve_px.size() < 2)
    throw Error(
        "svg: selector matched only short segments; no step curve found");
  if (curve_px.front()[0] > curve_px.back()[0])
    std::reverse(curve_px.begin(), curve_px.end());

  DigitizedCurve curve;
  curve.arm = arm;
  curve.start_time = cal.time_of(curve_px.front()[0]);
  curve.start_level =
      std::clamp(cal.survival_of(curve_px.front()[1]), 0.0, 1.0);
  double level = curve.start_level;
  double last_t = curve.start_time;
  for (std::size_t i = 1; i < curve_px.size(); ++i) {
    const double t = cal.time_of(curve_px[i][0]);
    double s = cal.survival_of(curve_px[i][1]);
    if (s > level) {
      if (s - level > opts.monotone_tol)
        throw Error(format(
            "svg: curve survival rises by %.3g near t = %.6g; not a "
            "Kaplan-Meier step function",
            s - level, t));
      s = level;  // jitter within tolerance
    }
    if (t < last_t - opts.monotone_tol * std::max(1.0, std::fabs(last_t)))
      throw Error(format("svg: curve doubles back in time near t = %.6g", t));
    if (s < level) {
      s = std::max(s, 0.0);
      const double drop_t = std::max(t, last_t);
      if (!curve.unique_points.empty() &&
          curve.unique_points.back().first == drop_t)
        curve.unique_points.back().second = s;
      else
        curve.unique_points.emplace_back(drop_t, s);
      level = s;
    }
    last_t = std::max(last_t, t);
  }

  for (const auto& c : tick_centroids) {
    double best = kInf;
    for (const auto& [a, b] : curve_segments)
      best = std::min(best, detail::point_segment_distance(c, a, b));
    if (best <= opts.tick_slack_px)
      curve.censor_ticks.push_back(cal.time_of(c[0]));
  }
  std::sort(curve.censor_ticks.begin(), curve.censor_ticks.end());
  validate(curve);
  return curve;
}

inline DigitizedCurve parse_svg(const std::string& svg_text,
                                const AxisCalibration& cal,
                                const Selector& sel, int arm,
                                const SvgParseOptions& opts = {}) {
  return parse_svg(parse_xml(svg_text), cal, sel, arm, opts);
}

// Pixel quantization in a rendered figure can land a drop or tick a hair
// off a grid boundary, flipping which half-open interval accounts for it.
// Snap curve times onto grid times whenever the difference is far below
// figure resolution.  The tolerance is capped at a quarter of the smallest
// grid spacing so snapping can never reorder points.
inline DigitizedCurve snap_to_grid(DigitizedCurve curve,
                                   const std::vector<double>& grid,
                                   double rel_tol = 1e-6) {
  if (grid.size() < 2 || rel_tol <= 0.0) return curve;
  double tol = (grid.back() - grid.front()) * rel_tol;
  for (std::size_t i = 1; i < grid.size(); ++i)
    tol = std::min(tol, 0.25 * (grid[i] - grid[i - 1]));
  auto snap = [&](double t) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), t);
    double best = t;
    double dist = kInf;
    if (it != grid.end() && std::fabs(*it - t) < dist) {
      best = *it;
      dist = std::fabs(*it - t);
    }
    if (it != grid.begin() && std::fabs(*(it - 1) - t) < dist) {
      best = *(it - 1);
      dist = std::fabs(*(it - 1) - t);
    }
    return dist <= tol ? best : t;
  };
  curve.start_time = snap(curve.start_time);
  for (auto& t : curve.censor_ticks) t = snap(t);
  std::vector<std::pair<double, double>> merged;
  for (auto& [t, s] : curve.unique_points) {
    const double st = snap(t);
    if (!merged.empty() && merged.back().first == st)
      merged.back().second = s;  // keep the post-merge (lowest) level
    else
      merged.emplace_back(st, s);
  }
  curve.unique_points = std::move(merged);
  return curve;
}

// One interval's accounting, kept for the reconciliation report.
struct IntervalAccount {
  int arm = 0;
  int index = 0;  // interval [grid[index], grid[index+1])
  double t_lo = 0.0;
  double t_hi = 0.0;
  long at_risk_start = 0;
  long at_risk_end = 0;
  double events_raw = 0.0;  // pre-rounding estimate
  long events = 0;
  long censorings = 0;
  // The decrement-free expression N_start - events, recorded so reports can
  // be reconciled against sources that quote censorings that way.
  long naive_censorings = 0;
  bool reported_censorings_used = false;
  long remainder_adjusted = 0;  // drop times bumped +1 by largest remainder
  bool flat_events_converted = false;
};

struct DigitizeReport {
  std::vector<IntervalAccount> intervals;
  std::array<long, 2> trailing_censored{0, 0};
  std::array<long, 2> total_records{0, 0};
  std::vector<std::string> warnings;
};

// Interval event/censoring totals from the survival drop ratio.  Intervals
// are half-open [t_i, t_{i+1}): a drop exactly at a grid time belongs to
// the interval starting there (at-risk counts are "still at risk at t"),
// so both endpoints are evaluated as left limits.
inline IntervalAccount estimate_interval_events(const DigitizedCurve& curve,
                                                const RiskTable& risk,
                                                int arm, int interval) {
  if (interval < 0 || std::size_t(interval) >= risk.intervals())
    throw Error("digitize: interval index out of range");
  IntervalAccount acc;
  acc.arm = arm;
  acc.index = interval;
  acc.t_lo = risk.grid[interval];
  acc.t_hi = risk.grid[interval + 1];
  acc.at_risk_start = risk.at_risk[arm][interval];
  acc.at_risk_end = risk.at_risk[arm][interval + 1];
  const long decrement = acc.at_risk_start - acc.at_risk_end;

  const double s_start = curve.value_before(acc.t_lo);
  const double s_end = curve.value_before(acc.t_hi);
  if (s_start <= 0.0) {
    if (acc.at_risk_start > 0)
      throw Error(format(
          "digitize: arm %d interval %d starts with survival 0 while %ld "
          "patients remain at risk",
          arm, interval, acc.at_risk_start));
    acc.events_raw = 0.0;
    acc.naive_censorings = 0;
    return acc;
  }
  acc.events_raw = double(acc.at_risk_start) * (1.0 - s_end / s_start);

  const long rounded = std::llround(acc.events_raw);
  // The drop ratio can only understate the at-risk decrement (censoring
  // removes patients without dropping survival), so a large overshoot means
  // the curve and table disagree.
  constexpr long kBudget = 2;
  if (rounded > decrement + kBudget || rounded < -kBudget)
    throw Error(format(
        "digitize: arm %d interval %d is inconsistent: estimated %ld events "
        "but the at-risk count drops by %ld",
        arm, interval, rounded, decrement));

  if (!risk.reported_censor[arm].empty()) {
    const long reported = risk.reported_censor[arm][interval];
    if (reported > decrement)
      throw Error(format(
          "digitize: arm %d interval %d reports %ld censorings but the "
          "at-risk count drops by only %ld",
          arm, interval, reported, decrement));
    acc.censorings = reported;
    acc.events = decrement - reported;
    acc.reported_censorings_used = true;
  } else {
    acc.events = std::clamp(rounded, 0L, decrement);
    acc.censorings = decrement - acc.events;
  }
  acc.naive_censorings = acc.at_risk_start - acc.events;
  return acc;
}

namespace detail {

// Largest-remainder allocation of `total` across non-negative weights;
// ties broken toward earlier indices.
inline std::vector<long> largest_remainder(const std::vector<double>& weights,
                                           long total, long* adjusted) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<long> alloc(weights.size(), 0);
  if (total <= 0 || sum <= 0.0) return alloc;
  std::vector<double> frac(weights.size(), 0.0);
  long assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double share = weights[i] * double(total) / sum;
    alloc[i] = long(std::floor(share));
    frac[i] = share - double(alloc[i]);
    assigned += alloc[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return frac[a] > frac[b];
  });
  long rem = total - assigned;
  if (adjusted) *adjusted = rem;
  for (std::size_t k = 0; rem > 0; ++k, --rem) alloc[order[k]] += 1;
  return alloc;
}

}  // namespace detail

// Reconstructs one arm's records.
//
// Event multiplicities come from a chronological sweep that maintains the
// reconstructed at-risk count through both events and placed censorings and
// inverts each drop locally: d_k = round(n_k * (1 - S(t_k)/S(t_k-))).  On an
// exact figure every d_k is an exact integer, so the reconstruction
// reproduces the drawn curve pointwise; the aggregate interval estimate
// (see estimate_interval_events) systematically overstates events whenever
// censoring is interior to the interval, so it is kept for the
// reconciliation report and for the reported-censor-count path only.
// The event/censoring split is then pinned to the at-risk decrement.
//
// `placement_rng` is used only to pick which ticks receive the remainder
// when the censor count does not divide evenly across them; both arms must
// be given identically seeded generators so identical figures reconstruct
// identical record sets.
inline std::vector<IpdRecord> distribute_events(const DigitizedCurve& curve,
                                                const RiskTable& risk,
                                                int arm, Rng& placement_rng,
                                                DigitizeReport* report) {
  std::vector<IpdRecord> records;
  records.reserve(std::size_t(risk.at_risk[arm].front()));

  for (int iv = 0; std::size_t(iv) < risk.intervals(); ++iv) {
    IntervalAccount acc = estimate_interval_events(curve, risk, arm, iv);
    const long decrement = acc.at_risk_start - acc.at_risk_end;

    struct Drop {
      double time;
      double pre;   // survival just before the drop
      double post;  // survival at the drop
    };
    std::vector<Drop> drops;
    double level = curve.value_before(acc.t_lo);
    for (const auto& [t, s] : curve.unique_points) {
      if (t < acc.t_lo) {
        level = s;
        continue;
      }
      if (t >= acc.t_hi) break;
      if (level - s > 0.0) drops.push_back({t, level, s});
      level = s;
    }

    std::vector<double> ticks;
    for (double t : curve.censor_ticks)
      if (t >= acc.t_lo && t < acc.t_hi) ticks.push_back(t);
    // One shuffle per interval, independent of the censor count, so the
    // generator consumption does not depend on intermediate estimates.
    std::vector<std::size_t> tick_order(ticks.size());
    std::iota(tick_order.begin(), tick_order.end(), 0);
    if (tick_order.size() > 1) placement_rng.shuffle(tick_order);

    // Censor times for a given total: spread evenly over ticks (remainder
    // to the pre-shuffled prefix), or at interval midquantiles without
    // ticks.  Returned sorted.
    auto place_censors = [&](long c) {
      std::vector<double> placed;
      if (c <= 0) return placed;
      placed.reserve(std::size_t(c));
      if (!ticks.empty()) {
        const long m = long(ticks.size());
        std::vector<long> per_tick(std::size_t(m), c / m);
        for (long k = 0; k < c % m; ++k)
          per_tick[tick_order[std::size_t(k)]] += 1;
        for (std::size_t k = 0; k < ticks.size(); ++k)
          for (long r = 0; r < per_tick[k]; ++r) placed.push_back(ticks[k]);
      } else {
        for (long j = 1; j <= c; ++j)
          placed.push_back(acc.t_lo + (double(j) - 0.5) *
                                          (acc.t_hi - acc.t_lo) / double(c));
      }
      std::sort(placed.begin(), placed.end());
      return placed;
    };

    // Chronological sweep: censors strictly before a drop leave the risk
    // set first; at a tied time the event precedes the censoring.  With
    // `budget` >= 0 the total is capped and any rounding shortfall is
    // added back at the largest fractional remainders (earlier time wins
    // ties).
    auto sweep = [&](const std::vector<double>& censor_times, long budget) {
      std::vector<long> d(drops.size(), 0);
      std::vector<double> raw(drops.size(), 0.0);
      long n_hat = acc.at_risk_start;
      std::size_t ci = 0;
      long total = 0;
      for (std::size_t k = 0; k < drops.size(); ++k) {
        while (ci < censor_times.size() && censor_times[ci] < drops[k].time) {
          --n_hat;
          ++ci;
        }
        raw[k] = drops[k].pre > 0.0
                     ? double(n_hat) * (1.0 - drops[k].post / drops[k].pre)
                     : 0.0;
        long dk = std::clamp(long(std::llround(raw[k])), 0L,
                             std::max(n_hat, 0L));
        if (budget >= 0) dk = std::min(dk, budget - total);
        d[k] = dk;
        total += dk;
        n_hat -= dk;
      }
      if (budget >= 0 && total < budget && !drops.empty()) {
        std::vector<std::size_t> order(drops.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) {
                           return raw[a] - double(d[a]) > raw[b] - double(d[b]);
                         });
        for (std::size_t k = 0; total < budget; k = (k + 1) % order.size()) {
          d[order[k]] += 1;
          ++total;
          ++acc.remainder_adjusted;
        }
      }
      return std::make_pair(std::move(d), total);
    };

    long e_final = 0;
    long c_final = 0;
    if (acc.reported_censorings_used) {
      // Published censor counts are authoritative for the split.
      e_final = acc.events;
      c_final = acc.censorings;
    } else {
      // Iterate placement -> sweep to a fixed point of the event/censoring
      // split.  The start matters: the aggregate drop-ratio estimate can
      // understate censorings badly (a curve reaching zero attributes the
      // whole decrement to events), and a censor-free split is
      // self-consistent under the sweep.  Each drawn tick marks at least
      // one censoring, so the tick count is a hard floor for the initial
      // guess.  One step usually suffices; an oscillating split is cut off
      // and resolved by the budgeted final pass.  No generator state is
      // consumed here, so the iteration count cannot perturb censor-tick
      // selection.
      long c_guess = std::min(std::max(acc.censorings, long(ticks.size())),
                              decrement);
      for (int pass = 0; pass < 6; ++pass) {
        const auto swept = sweep(place_censors(c_guess), -1);
        e_final = std::clamp(swept.second, 0L, decrement);
        if (decrement - e_final == c_guess) break;
        c_guess = decrement - e_final;
      }
      c_final = decrement - e_final;
      acc.remainder_adjusted = 0;
    }

    if (e_final > 0 && drops.empty()) {
      // Nothing on the curve to attach the events to; keep conservation by
      // treating them as censorings.
      const std::string msg = format(
          "arm %d interval %d: %ld events have no survival drop to attach "
          "to; converted to censorings",
          arm, iv, e_final);
      log(LogLevel::kWarn, "digitize: " + msg);
      if (report) report->warnings.push_back(msg);
      c_final += e_final;
      e_final = 0;
      acc.flat_events_converted = true;
    }

    const std::vector<double> censor_times = place_censors(c_final);
    const auto [per_drop, placed_events] = sweep(censor_times, e_final);
    acc.events = placed_events;
    acc.censorings = c_final;
    acc.naive_censorings = acc.at_risk_start - acc.events;

    for (std::size_t k = 0; k < drops.size(); ++k)
      for (long r = 0; r < per_drop[k]; ++r)
        records.push_back({drops[k].time, 1, arm, std::nullopt});
    for (double ct : censor_times) records.push_back({ct, 0, arm, std::nullopt});

    if (report) report->intervals.push_back(acc);
  }

  // Patients still at risk at the final grid time leave as censored there.
  const long trailing = risk.at_risk[arm].back();
  for (long r = 0; r < trailing; ++r)
    records.push_back({risk.grid.back(), 0, arm, std::nullopt});
  if (report) {
    report->trailing_censored[std::size_t(arm)] = trailing;
    report->total_records[std::size_t(arm)] = long(records.size());
  }
  return records;
}

// Full reconstruction for both arms.  `seed` drives only censor placement;
// each arm's generator is seeded identically so identical curves yield
// identical per-arm record multisets.
inline IpdDataset digitize(const std::array<DigitizedCurve, 2>& curves,
                           const RiskTable& risk, std::uint64_t seed,
                           DigitizeReport* report = nullptr,
                           double grid_snap_rel = 1e-6) {
  validate(risk);
  std::array<DigitizedCurve, 2> snapped;
  for (int arm = 0; arm < 2; ++arm) {
    validate(curves[std::size_t(arm)]);
    if (curves[std::size_t(arm)].arm != arm)
      throw Error("digitize: curve/arm mismatch");
    snapped[std::size_t(arm)] =
        snap_to_grid(curves[std::size_t(arm)], risk.grid, grid_snap_rel);
  }
  IpdDataset out;
  out.k_max = 0;
  std::array<std::vector<IpdRecord>, 2> per_arm;
  std::array<DigitizeReport, 2> arm_reports;
  parallel_for(2, 2, [&](std::size_t arm) {
    Rng placement(derive_seed(seed, 0x63656e736f72ull));  // same for both arms
    per_arm[arm] = distribute_events(snapped[arm], risk, int(arm), placement,
                                     report ? &arm_reports[arm] : nullptr);
  });
  if (report) {
    for (std::size_t arm = 0; arm < 2; ++arm) {
      const auto& rep = arm_reports[arm];
      report->intervals.insert(report->intervals.end(), rep.intervals.begin(),
                               rep.intervals.end());
      report->warnings.insert(report->warnings.end(), rep.warnings.begin(),
                              rep.warnings.end());
      report->trailing_censored[arm] = rep.trailing_censored[arm];
      report->total_records[arm] = rep.total_records[arm];
    }
  }
  for (int arm = 0; arm < 2; ++arm) {
    const long expected = risk.at_risk[std::size_t(arm)].front();
    if (long(per_arm[std::size_t(arm)].size()) != expected)
      throw Error(format(
          "digitize: arm %d produced %zu records but the at-risk table "
          "starts at %ld",
          arm, per_arm[std::size_t(arm)].size(), expected));
    out.records.insert(out.records.end(), per_arm[std::size_t(arm)].begin(),
                       per_arm[std::size_t(arm)].end());
  }
  validate(out);
  return out;
}

}  // namespace synthipd
