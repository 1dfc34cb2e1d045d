// Target contrasts, orthogonal pseudo-outcomes, overlap weights and the
// truncation policy shared by every estimator.
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace drl {

enum class TargetParameter { ATE, OR, LogOR, RR, LogRR };

inline constexpr std::array<TargetParameter, 5> kAllParameters = {
    TargetParameter::ATE, TargetParameter::OR, TargetParameter::LogOR,
    TargetParameter::RR, TargetParameter::LogRR};

inline std::string_view to_string(TargetParameter p) {
  switch (p) {
    case TargetParameter::ATE: return "ATE";
    case TargetParameter::OR: return "OR";
    case TargetParameter::LogOR: return "LogOR";
    case TargetParameter::RR: return "RR";
    case TargetParameter::LogRR: return "LogRR";
  }
  return "?";
}

inline std::optional<TargetParameter> parse_parameter(std::string_view s) {
  for (auto p : kAllParameters)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

/// True for OR/RR, whose comparison scale is the logarithm.
inline constexpr bool is_ratio_scale(TargetParameter p) {
  return p == TargetParameter::OR || p == TargetParameter::RR;
}

/// Parameter on which estimates and truth are compared (log for ratios).
inline constexpr TargetParameter comparison_parameter(TargetParameter p) {
  switch (p) {
    case TargetParameter::OR: return TargetParameter::LogOR;
    case TargetParameter::RR: return TargetParameter::LogRR;
    default: return p;
  }
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Clamp into [lo, hi]. Idempotent.
inline double truncate(double value, Interval iv) {
  if (value < iv.lo) return iv.lo;
  if (value > iv.hi) return iv.hi;
  return value;
}

struct NuisanceTriple {
  double q1 = 0.5;
  double q0 = 0.5;
  double pi = 0.5;
};

struct Observation {
  std::array<double, 6> x{};  // 5 binary indicators, then the numeric covariate
  int t = 0;
  int y = 0;
};

class TruncationPolicy {
 public:
  TruncationPolicy() = default;
  TruncationPolicy(Interval outcome, Interval propensity)
      : outcome_(outcome), propensity_(propensity) {
    check(outcome_, "outcome clamp");
    check(propensity_, "propensity clamp");
  }

  Interval outcome_clamp() const { return outcome_; }
  Interval propensity_clamp() const { return propensity_; }

  NuisanceTriple apply(NuisanceTriple eta) const {
    return {truncate(eta.q1, outcome_), truncate(eta.q0, outcome_),
            truncate(eta.pi, propensity_)};
  }

 private:
  static void check(Interval iv, const char* what) {
    if (!(iv.lo > 0.0 && iv.lo < iv.hi && iv.hi < 1.0))
      throw std::invalid_argument(std::string(what) +
                                  " must satisfy 0 < lo < hi < 1");
  }

  Interval outcome_{0.05, 0.95};
  Interval propensity_{0.01, 0.99};
};

inline double odds_ratio(double p1, double p0) {
  return p1 * (1.0 - p0) / (p0 * (1.0 - p1));
}

/// theta(p1, p0) on the requested scale. Requires p1, p0 in (0, 1).
inline double contrast(TargetParameter param, double p1, double p0) {
  switch (param) {
    case TargetParameter::ATE: return p1 - p0;
    case TargetParameter::OR: return odds_ratio(p1, p0);
    case TargetParameter::LogOR:
      return (std::log(p1) - std::log1p(-p1)) - (std::log(p0) - std::log1p(-p0));
    case TargetParameter::RR: return p1 / p0;
    case TargetParameter::LogRR: return std::log(p1) - std::log(p0);
  }
  return 0.0;
}

namespace detail {
inline bool open_unit(double v) { return v > 0.0 && v < 1.0; }

inline void require_interior(const NuisanceTriple& eta) {
  if (!open_unit(eta.q1) || !open_unit(eta.q0) || !open_unit(eta.pi))
    throw std::domain_error(
        "pseudo-outcome needs truncated nuisances strictly inside (0,1)");
}
}  // namespace detail

/// Arm-specific AIPW score: q_arm + 1{T=arm}/P(T=arm|x) * (Y - q_arm).
inline double arm_pseudo_outcome(int arm, const Observation& obs,
                                 const NuisanceTriple& eta) {
  detail::require_interior(eta);
  const double q = arm == 1 ? eta.q1 : eta.q0;
  if (obs.t != arm) return q;
  const double p_arm = arm == 1 ? eta.pi : 1.0 - eta.pi;
  return (obs.y - q) / p_arm + q;
}

/// Uncentered efficient-influence-function score whose conditional mean is
/// the target contrast up to a second-order remainder.
inline double pseudo_outcome(TargetParameter param, const Observation& obs,
                             const NuisanceTriple& eta) {
  detail::require_interior(eta);
  const double q1 = eta.q1, q0 = eta.q0;
  // IPW-weighted residuals; at most one is nonzero.
  const double r1 = obs.t == 1 ? (obs.y - q1) / eta.pi : 0.0;
  const double r0 = obs.t == 0 ? (obs.y - q0) / (1.0 - eta.pi) : 0.0;
  const double v1 = q1 * (1.0 - q1);
  const double v0 = q0 * (1.0 - q0);
  switch (param) {
    case TargetParameter::ATE:
      return (q1 + r1) - (q0 + r0);
    case TargetParameter::OR: {
      const double orr = odds_ratio(q1, q0);
      return orr + orr / v1 * r1 - orr / v0 * r0;
    }
    case TargetParameter::LogOR:
      return contrast(TargetParameter::LogOR, q1, q0) + r1 / v1 - r0 / v0;
    case TargetParameter::RR:
      return q1 / q0 + r1 / q0 - q1 / (q0 * q0) * r0;
    case TargetParameter::LogRR:
      return std::log(q1 / q0) + r1 / q1 - r0 / q0;
  }
  return 0.0;
}

/// Propensity-overlap weight pi(1 - pi) used by the R-learner second stage.
inline double rlearner_weight(double pi) { return pi * (1.0 - pi); }

/// Range of contrast(param, .) when both arm probabilities lie in the
/// outcome clamp.
inline Interval feasible_range(TargetParameter param,
                               const TruncationPolicy& policy) {
  const auto [a, b] = policy.outcome_clamp();
  switch (param) {
    case TargetParameter::ATE: return {a - b, b - a};
    case TargetParameter::RR: return {a / b, b / a};
    case TargetParameter::LogRR: return {std::log(a / b), std::log(b / a)};
    case TargetParameter::OR: {
      const double hi = (b * (1.0 - a)) / (a * (1.0 - b));
      return {1.0 / hi, hi};
    }
    case TargetParameter::LogOR: {
      const double hi = std::log((b * (1.0 - a)) / (a * (1.0 - b)));
      return {-hi, hi};
    }
  }
  return {};
}

/// Uniform bound on |pseudo_outcome(param, ., eta)| over all observations
/// and all nuisances inside the policy's clamps, with c_y the outcome clamp
/// distance from the boundary and c_e the propensity one.
inline double pseudo_outcome_bound(TargetParameter param,
                                   const TruncationPolicy& policy) {
  const double cy = std::min(policy.outcome_clamp().lo,
                             1.0 - policy.outcome_clamp().hi);
  const double ce = std::min(policy.propensity_clamp().lo,
                             1.0 - policy.propensity_clamp().hi);
  const double odds = (1.0 - cy) / cy;
  switch (param) {
    case TargetParameter::ATE:
      return (1.0 - 2.0 * cy) + 2.0 * (1.0 - cy) / ce;
    case TargetParameter::OR:
      return odds * odds + 2.0 * (1.0 - cy) / (cy * cy * cy * ce);
    case TargetParameter::LogOR:
      return 2.0 * std::log(odds) + 2.0 / (cy * (1.0 - cy) * ce);
    case TargetParameter::RR:
      return odds + 1.0 / (cy * ce) + (1.0 - cy) / (cy * cy * ce);
    case TargetParameter::LogRR:
      return std::log(odds) + 2.0 / (cy * ce);
  }
  return 0.0;
}

}  // namespace drl
