// Self-generating probe suite behind `drl verify`: fuzzed identity checks,
// second-order exponents, orthogonality ladders, pseudo-outcome bounds and
// the risk decomposition, each summarized as one row.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "drl/dgp.hpp"
#include "drl/effects.hpp"
#include "drl/oracle.hpp"
#include "drl/random.hpp"

namespace drl {

struct VerifyConfig {
  std::uint64_t seed = 1;
  int identity_points = 10000;
  int exponent_paths = 100;
  int ortho_distributions = 20;
  int ortho_directions = 10;
  int ortho_cells = 8;
  int bound_cases = 100000;
  int risk_distributions = 20;
  int risk_cells = 4;
  TruncationPolicy policy{};
};

struct ProbeRow {
  std::string check;
  std::string param;
  long cases = 0;
  double worst = 0.0;      // largest violation measure (or smallest slope)
  double threshold = 0.0;
  bool pass = false;
};

namespace detail {

inline double uniform_in(Engine& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline PointTruth random_truth(Engine& rng, double lo = 0.02, double hi = 0.98) {
  return {uniform_in(rng, lo, hi), uniform_in(rng, lo, hi), uniform_in(rng, lo, hi)};
}

/// Direction with every component bounded away from zero.
inline std::array<double, 3> generic_direction(Engine& rng) {
  std::array<double, 3> d{};
  for (auto& v : d) {
    v = uniform_in(rng, 0.02, 0.1);
    if (uniform_in(rng, 0.0, 1.0) < 0.5) v = -v;
  }
  return d;
}

inline std::uint64_t param_key(TargetParameter p) { return static_cast<std::uint64_t>(p) + 1; }

}  // namespace detail

/// |E[phi(eta0) | x] - theta(x)| with true nuisances.
inline ProbeRow probe_identity(TargetParameter p, const VerifyConfig& c) {
  Engine rng = make_engine(derive_seed(c.seed, {1, detail::param_key(p)}));
  ProbeRow row{"identity", std::string(to_string(p)), c.identity_points, 0.0, 1e-12, false};
  for (int i = 0; i < c.identity_points; ++i) {
    const auto t = detail::random_truth(rng);
    const double theta = contrast(p, t.p1, t.p0);
    const double err = std::abs(remainder(p, t, {t.p1, t.p0, t.e})) / std::max(1.0, std::abs(theta));
    row.worst = std::max(row.worst, err);
  }
  row.pass = row.worst <= row.threshold;
  return row;
}

/// Remainder with correct outcome regressions and an arbitrary propensity.
inline ProbeRow probe_propensity_only(TargetParameter p, const VerifyConfig& c) {
  Engine rng = make_engine(derive_seed(c.seed, {2, detail::param_key(p)}));
  ProbeRow row{"remainder_wrong_propensity", std::string(to_string(p)), c.identity_points, 0.0,
               1e-12, false};
  for (int i = 0; i < c.identity_points; ++i) {
    const auto t = detail::random_truth(rng);
    const double pi = detail::uniform_in(rng, 0.01, 0.99);
    const double theta = contrast(p, t.p1, t.p0);
    const double err = std::abs(remainder(p, t, {t.p1, t.p0, pi})) / std::max(1.0, std::abs(theta));
    row.worst = std::max(row.worst, err);
  }
  row.pass = row.worst <= row.threshold;
  return row;
}

/// Smallest log-log slope of |R| along random generic paths; worst = min slope.
/// Directions near the null cone of the remainder's Hessian are redrawn.
inline ProbeRow probe_exponent(TargetParameter p, const VerifyConfig& c) {
  Engine rng = make_engine(derive_seed(c.seed, {3, detail::param_key(p)}));
  ProbeRow row{"second_order_exponent", std::string(to_string(p)), 0,
               std::numeric_limits<double>::infinity(), 1.9, false};
  const auto grid = default_scale_grid();
  while (row.cases < c.exponent_paths) {
    NuisancePath path{detail::random_truth(rng, 0.15, 0.85), detail::generic_direction(rng), grid};
    if (!is_generic_direction(p, path.base, path.direction)) continue;
    try {
      row.worst = std::min(row.worst, second_order_exponent(p, path));
      ++row.cases;
    } catch (const DegenerateDirection&) {
    }
  }
  row.pass = row.worst >= row.threshold;
  return row;
}

/// Richardson-extrapolated mixed derivative of the (optionally overlap
/// weighted) risk at the truth.
inline ProbeRow probe_orthogonality(TargetParameter p, const VerifyConfig& c, bool weighted) {
  Engine rng = make_engine(derive_seed(c.seed, {4, detail::param_key(p), weighted ? 1u : 0u}));
  ProbeRow row{weighted ? "orthogonality_weighted" : "orthogonality", std::string(to_string(p)),
               0, 0.0, 1e-6, false};
  for (int d = 0; d < c.ortho_distributions; ++d) {
    const auto dist = random_distribution(rng, static_cast<std::size_t>(c.ortho_cells),
                                          {0.15, 0.85}, {0.15, 0.85});
    for (int k = 0; k < c.ortho_directions; ++k) {
      std::vector<double> h(dist.size());
      std::vector<std::array<double, 3>> dir(dist.size());
      for (std::size_t i = 0; i < dist.size(); ++i) {
        h[i] = detail::uniform_in(rng, -1.0, 1.0);
        for (auto& v : dir[i]) v = detail::uniform_in(rng, -1.0, 1.0);
      }
      const auto ladder = orthogonality_ladder(p, dist, h, dir, 1e-2, weighted);
      row.worst = std::max(row.worst, std::abs(ladder.extrapolated));
      ++row.cases;
    }
  }
  row.pass = row.worst < row.threshold;
  return row;
}

/// max |phi| / B_phi over fuzzed clamped nuisances; must stay <= 1.
inline ProbeRow probe_bounds(TargetParameter p, const VerifyConfig& c) {
  Engine rng = make_engine(derive_seed(c.seed, {5, detail::param_key(p)}));
  const auto oc = c.policy.outcome_clamp();
  const auto pc = c.policy.propensity_clamp();
  const double bound = pseudo_outcome_bound(p, c.policy);
  ProbeRow row{"pseudo_outcome_bound", std::string(to_string(p)), c.bound_cases, 0.0, 1.0, false};
  auto draw = [&](Interval iv) {
    // a quarter of the draws sit exactly on a clamp edge
    const double u = detail::uniform_in(rng, 0.0, 1.0);
    if (u < 0.125) return iv.lo;
    if (u < 0.25) return iv.hi;
    return detail::uniform_in(rng, iv.lo, iv.hi);
  };
  for (int i = 0; i < c.bound_cases; ++i) {
    const NuisanceTriple eta{draw(oc), draw(oc), draw(pc)};
    Observation obs;
    obs.t = i & 1;
    obs.y = (i >> 1) & 1;
    row.worst = std::max(row.worst, std::abs(pseudo_outcome(p, obs, eta)) / bound);
  }
  row.pass = row.worst <= row.threshold;
  return row;
}

/// |L(f, eta0) - L(theta, eta0) - sum P(x)(f - theta)^2| on small laws.
inline ProbeRow probe_risk_decomposition(TargetParameter p, const VerifyConfig& c) {
  Engine rng = make_engine(derive_seed(c.seed, {6, detail::param_key(p)}));
  ProbeRow row{"risk_decomposition", std::string(to_string(p)), c.risk_distributions, 0.0, 1e-12,
               false};
  for (int d = 0; d < c.risk_distributions; ++d) {
    const auto dist = random_distribution(rng, static_cast<std::size_t>(c.risk_cells));
    const auto eta0 = true_nuisances(dist);
    const auto theta = dist.true_effect(p);
    std::vector<double> f(theta);
    double expected = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] += detail::uniform_in(rng, -1.0, 1.0);
      expected += dist.cells[i].p_x * (f[i] - theta[i]) * (f[i] - theta[i]);
    }
    const double lf = population_risk(p, f, eta0, dist);
    const double lt = population_risk(p, theta, eta0, dist);
    const double err = std::abs((lf - lt) - expected) / std::max(1.0, lf);
    row.worst = std::max(row.worst, err);
  }
  row.pass = row.worst <= row.threshold;
  return row;
}

inline std::vector<ProbeRow> run_verify(const VerifyConfig& c) {
  std::vector<ProbeRow> rows;
  for (auto p : kAllParameters) {
    rows.push_back(probe_identity(p, c));
    rows.push_back(probe_propensity_only(p, c));
    rows.push_back(probe_exponent(p, c));
    rows.push_back(probe_orthogonality(p, c, false));
    rows.push_back(probe_orthogonality(p, c, true));
    rows.push_back(probe_bounds(p, c));
    rows.push_back(probe_risk_decomposition(p, c));
  }
  return rows;
}

inline void write_probe_csv(std::ostream& os, const std::vector<ProbeRow>& rows) {
  os << "check,param,cases,worst,threshold,pass\n";
  for (const auto& r : rows)
    os << r.check << ',' << r.param << ',' << r.cases << ',' << format_double(r.worst) << ','
       << format_double(r.threshold) << ',' << (r.pass ? "TRUE" : "FALSE") << '\n';
}

}  // namespace drl
