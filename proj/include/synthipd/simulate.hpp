#pragma once

// Ground-truth IPD generators: three mechanisms (proportional hazards,
// accelerated failure time, crossing hazards), exponential censoring with
// the rate calibrated by bisection to a target censoring fraction, and the
// matching analytic survival functions for validation.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "synthipd/common.hpp"
#include "synthipd/rng.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

enum class SimCase { kCoxPh = 1, kAft = 2, kCrossover = 3 };

// Which subgroup labeling the emitted covariate column carries.
enum class Margin { kX1, kX2, kJoint };

inline const char* sim_case_name(SimCase c) {
  switch (c) {
    case SimCase::kCoxPh: return "cox_ph";
    case SimCase::kAft: return "aft";
    case SimCase::kCrossover: return "crossover";
  }
  return "?";
}

inline const char* margin_name(Margin m) {
  switch (m) {
    case Margin::kX1: return "x1";
    case Margin::kX2: return "x2";
    case Margin::kJoint: return "joint";
  }
  return "?";
}

struct SimSpec {
  SimCase sim_case = SimCase::kCoxPh;
  long n = 500;
  Margin margin = Margin::kX1;
  double censor_lo = 0.30;
  double censor_hi = 0.50;
  double censor_target = 0.40;
  std::uint64_t seed = 0;
  std::optional<double> p_x1;  // default depends on the mechanism
  std::optional<double> p_x2;
};

inline double default_p_x1(SimCase) { return 0.3; }
inline double default_p_x2(SimCase c) {
  return c == SimCase::kAft ? 0.4 : 0.3;
}

inline void validate(const SimSpec& spec) {
  if (spec.n <= 0) throw Error("simulate: n must be positive");
  const double p1 = spec.p_x1.value_or(default_p_x1(spec.sim_case));
  const double p2 = spec.p_x2.value_or(default_p_x2(spec.sim_case));
  if (p1 <= 0.0 || p1 >= 1.0 || p2 <= 0.0 || p2 >= 1.0)
    throw Error("simulate: covariate probabilities must lie in (0, 1)");
  if (!(0.0 < spec.censor_lo && spec.censor_lo <= spec.censor_target &&
        spec.censor_target <= spec.censor_hi && spec.censor_hi < 1.0))
    throw Error("simulate: censoring range must satisfy 0 < lo <= target "
                "<= hi < 1");
}

namespace detail {

constexpr double kLn2 = 0.6931471805599453;

// Piecewise baseline hazards for the crossing-hazards mechanism: the
// control arm's hazard rises at t0 = 5 while the treated arm's falls, so
// the marginal curves cross shortly after t0.
constexpr double kCrossT0 = 5.0;
inline std::array<double, 2> cross_rates(int arm) {
  return arm == 0 ? std::array<double, 2>{0.1, 0.3}
                  : std::array<double, 2>{0.2, 0.1};
}

inline double cox_rate(int arm, int x1, int x2) {
  return (kLn2 / 10.0) * std::exp(std::log(0.7) * arm + std::log(0.5) * x1 +
                                  std::log(0.75) * x2);
}

inline double aft_mu(int arm, int x1, int x2) {
  return 0.8 * arm - 0.7 * x1 + 0.5 * x2;
}

inline double cross_multiplier(int x1, int x2) {
  return std::exp(std::log(1.8) * x1 + std::log(0.5) * x2);
}

inline double cross_cumhaz(int arm, double t) {
  const auto [r1, r2] = cross_rates(arm);
  if (t <= kCrossT0) return r1 * t;
  return r1 * kCrossT0 + r2 * (t - kCrossT0);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

// Event-time survival S(t | arm, x1, x2) for each mechanism.
inline double analytic_survival(SimCase c, int arm, int x1, int x2,
                                double t) {
  if (t <= 0.0) return 1.0;
  switch (c) {
    case SimCase::kCoxPh:
      return std::exp(-detail::cox_rate(arm, x1, x2) * t);
    case SimCase::kAft: {
      const double z = (std::log(t) - detail::aft_mu(arm, x1, x2)) / 0.3;
      return 1.0 - detail::normal_cdf(z);
    }
    case SimCase::kCrossover:
      return std::exp(-detail::cross_multiplier(x1, x2) *
                      detail::cross_cumhaz(arm, t));
  }
  return kNaN;
}

// Covariate-mixture (marginal) survival per arm.
inline double analytic_marginal_survival(SimCase c, int arm, double p1,
                                         double p2, double t) {
  double s = 0.0;
  for (int x1 = 0; x1 < 2; ++x1)
    for (int x2 = 0; x2 < 2; ++x2) {
      const double w = (x1 ? p1 : 1.0 - p1) * (x2 ? p2 : 1.0 - p2);
      s += w * analytic_survival(c, arm, x1, x2, t);
    }
  return s;
}

// Exponential censoring rate rho such that the expected censored fraction,
// mean_i(1 - exp(-rho * T_i)) over the given event times, hits `target`.
// The mean is continuous and strictly increasing in rho, so bisection on a
// doubling bracket always converges.
inline double calibrate_censoring_rate(const std::vector<double>& event_times,
                                       double target = 0.40) {
  if (event_times.empty())
    throw Error("censoring calibration: no event times");
  if (!(target > 0.0 && target < 1.0))
    throw Error("censoring calibration: target fraction must be in (0, 1)");
  auto expected_fraction = [&](double rho) {
    double acc = 0.0;
    for (double t : event_times) acc += 1.0 - std::exp(-rho * t);
    return acc / double(event_times.size());
  };
  double lo = 0.0, hi = 1.0;
  int guard = 0;
  while (expected_fraction(hi) < target) {
    hi *= 2.0;
    if (++guard > 200)
      throw Error("censoring calibration: failed to bracket the target");
  }
  double rho = hi;
  for (int it = 0; it < 100; ++it) {
    rho = 0.5 * (lo + hi);
    if (expected_fraction(rho) < target)
      lo = rho;
    else
      hi = rho;
  }
  return rho;
}

struct SimResult {
  IpdDataset data;
  double censor_rate = 0.0;          // calibrated exponential rate
  double realized_censoring = 0.0;   // censored fraction actually generated
  // label -> (x1, x2); -1 marks a margin the label does not constrain
  std::vector<std::array<int, 2>> label_map;
};

// Draws arms fairly at random, covariates per their Bernoulli margins,
// event times by inversion for the chosen mechanism, then censors with an
// exponential time whose rate is calibrated on the drawn event times.
// Covariate and event draws use one derived stream, censoring another, so
// calibration does not perturb the event-time sequence.
inline SimResult simulate(const SimSpec& spec) {
  validate(spec);
  const double p1 = spec.p_x1.value_or(default_p_x1(spec.sim_case));
  const double p2 = spec.p_x2.value_or(default_p_x2(spec.sim_case));

  Rng draw(derive_seed(spec.seed, 1));
  std::vector<int> arm(std::size_t(spec.n)), x1(std::size_t(spec.n)),
      x2(std::size_t(spec.n));
  std::vector<double> event_time(std::size_t(spec.n));
  for (std::size_t i = 0; i < std::size_t(spec.n); ++i) {
    arm[i] = draw.bernoulli(0.5) ? 1 : 0;
    x1[i] = draw.bernoulli(p1) ? 1 : 0;
    x2[i] = draw.bernoulli(p2) ? 1 : 0;
    switch (spec.sim_case) {
      case SimCase::kCoxPh:
        event_time[i] =
            draw.exponential(detail::cox_rate(arm[i], x1[i], x2[i]));
        break;
      case SimCase::kAft:
        event_time[i] =
            std::exp(detail::aft_mu(arm[i], x1[i], x2[i]) +
                     draw.normal(0.0, 0.3));
        break;
      case SimCase::kCrossover: {
        const double target = draw.exponential(1.0) /
                              detail::cross_multiplier(x1[i], x2[i]);
        const auto [r1, r2] = detail::cross_rates(arm[i]);
        const double knee = r1 * detail::kCrossT0;
        event_time[i] = target <= knee
                            ? target / r1
                            : detail::kCrossT0 + (target - knee) / r2;
        break;
      }
    }
  }

  SimResult out;
  out.censor_rate = calibrate_censoring_rate(event_time, spec.censor_target);

  Rng censor(derive_seed(spec.seed, 2));
  out.data.k_max = spec.margin == Margin::kJoint ? 3 : 1;
  out.data.records.reserve(std::size_t(spec.n));
  long censored = 0;
  for (std::size_t i = 0; i < std::size_t(spec.n); ++i) {
    const double c = censor.exponential(out.censor_rate);
    IpdRecord rec;
    rec.arm = arm[i];
    rec.event = event_time[i] <= c ? 1 : 0;
    rec.time = rec.event ? event_time[i] : c;
    switch (spec.margin) {
      case Margin::kX1: rec.covariate = x1[i]; break;
      case Margin::kX2: rec.covariate = x2[i]; break;
      case Margin::kJoint: rec.covariate = x1[i] + 2 * x2[i]; break;
    }
    censored += rec.event == 0;
    out.data.records.push_back(rec);
  }
  out.realized_censoring = double(censored) / double(spec.n);

  switch (spec.margin) {
    case Margin::kX1:
      out.label_map = {{0, -1}, {1, -1}};
      break;
    case Margin::kX2:
      out.label_map = {{-1, 0}, {-1, 1}};
      break;
    case Margin::kJoint:
      out.label_map = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
      break;
  }
  validate(out.data);
  return out;
}

inline IpdDataset gen_case1(SimSpec spec) {
  spec.sim_case = SimCase::kCoxPh;
  return simulate(spec).data;
}
inline IpdDataset gen_case2(SimSpec spec) {
  spec.sim_case = SimCase::kAft;
  return simulate(spec).data;
}
inline IpdDataset gen_case3(SimSpec spec) {
  spec.sim_case = SimCase::kCrossover;
  return simulate(spec).data;
}

}  // namespace synthipd
