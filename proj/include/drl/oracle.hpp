// Exact-enumeration checks of the pseudo-outcome identities: conditional
// means, second-order remainders, population risks on tabulated laws, and
// finite-difference probes of the mixed derivative D_eta D_f L.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "drl/distribution.hpp"
#include "drl/effects.hpp"
#include "drl/random.hpp"

namespace drl {

/// True nuisances (p1, p0, e) at one covariate point.
struct PointTruth {
  double p1 = 0.5;
  double p0 = 0.5;
  double e = 0.5;
};

class DegenerateDirection : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// E[phi(Z; eta) | X = x] by summing over the four (t, y) outcomes.
inline double exact_conditional_mean(TargetParameter param, const PointTruth& truth,
                                     const NuisanceTriple& eta) {
  double mean = 0.0;
  for (int t = 0; t <= 1; ++t) {
    const double pt = t == 1 ? truth.e : 1.0 - truth.e;
    const double py1 = t == 1 ? truth.p1 : truth.p0;
    for (int y = 0; y <= 1; ++y) {
      const double prob = pt * (y == 1 ? py1 : 1.0 - py1);
      Observation obs;
      obs.t = t;
      obs.y = y;
      mean += prob * pseudo_outcome(param, obs, eta);
    }
  }
  return mean;
}

inline double remainder(TargetParameter param, const PointTruth& truth, const NuisanceTriple& eta) {
  return exact_conditional_mean(param, truth, eta) - contrast(param, truth.p1, truth.p0);
}

/// |e - pi| |p1 - q1| + |e - pi| |p0 - q0| + |p - q|^2, the shape that bounds
/// the remainder up to a parameter-specific constant.
inline double remainder_shape(const PointTruth& truth, const NuisanceTriple& eta) {
  const double de = std::abs(truth.e - eta.pi);
  const double d1 = truth.p1 - eta.q1;
  const double d0 = truth.p0 - eta.q0;
  return de * std::abs(d1) + de * std::abs(d0) + d1 * d1 + d0 * d0;
}

/// Ray eta(s) = truth + s * direction, probed at each scale s.
struct NuisancePath {
  PointTruth base;
  std::array<double, 3> direction{};  // (dq1, dq0, dpi)
  std::vector<double> scales;

  NuisanceTriple at(double s) const {
    return {base.p1 + s * direction[0], base.p0 + s * direction[1], base.e + s * direction[2]};
  }
};

/// 2^-3, 2^-4, ..., 2^-9.
inline std::vector<double> default_scale_grid() {
  std::vector<double> g;
  for (int k = 3; k <= 9; ++k) g.push_back(std::ldexp(1.0, -k));
  return g;
}

/// Least-squares slope of log y on log x.
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Order of |remainder(eta(s))| in s along the path. Throws
/// DegenerateDirection when the remainder is numerically zero at a grid
/// point (e.g. a path that moves only the propensity).
inline double second_order_exponent(TargetParameter param, const NuisancePath& path) {
  if (path.scales.size() < 2) throw std::invalid_argument("need at least two scales");
  const double floor =
      1e-12 * (1.0 + std::abs(contrast(param, path.base.p1, path.base.p0)));
  std::vector<double> mags;
  for (double s : path.scales) {
    const auto eta = path.at(s);
    if (!(eta.q1 > 0 && eta.q1 < 1 && eta.q0 > 0 && eta.q0 < 1 && eta.pi > 0 && eta.pi < 1))
      throw std::invalid_argument("path leaves (0,1)^3");
    const double r = std::abs(remainder(param, path.base, eta));
    if (!(r > floor)) throw DegenerateDirection("remainder vanishes along this direction");
    mags.push_back(r);
  }
  return log_log_slope(path.scales, mags);
}

/// Hessian of eta -> remainder(param, truth, eta) at eta = truth, by central
/// differences. Value and gradient vanish there, so the Hessian is the
/// leading term.
inline std::array<std::array<double, 3>, 3> remainder_hessian(TargetParameter param,
                                                              const PointTruth& truth,
                                                              double h = 1e-4) {
  auto r = [&](std::array<double, 3> d) {
    return remainder(param, truth, {truth.p1 + d[0], truth.p0 + d[1], truth.e + d[2]});
  };
  std::array<std::array<double, 3>, 3> H{};
  for (int i = 0; i < 3; ++i) {
    std::array<double, 3> ei{};
    ei[static_cast<std::size_t>(i)] = h;
    std::array<double, 3> mi{};
    mi[static_cast<std::size_t>(i)] = -h;
    H[i][i] = (r(ei) + r(mi)) / (h * h);
    for (int j = i + 1; j < 3; ++j) {
      auto pp = ei, pm = ei, mp = mi, mm = mi;
      pp[static_cast<std::size_t>(j)] = h;
      pm[static_cast<std::size_t>(j)] = -h;
      mp[static_cast<std::size_t>(j)] = h;
      mm[static_cast<std::size_t>(j)] = -h;
      H[i][j] = H[j][i] = (r(pp) - r(pm) - r(mp) + r(mm)) / (4.0 * h * h);
    }
  }
  return H;
}

/// A direction d is generic when its quadratic coefficient d'Hd is not
/// within kappa of the null cone: |d'Hd| >= kappa * ||H||_F * |d|^2.
inline bool is_generic_direction(TargetParameter param, const PointTruth& truth,
                                 const std::array<double, 3>& d, double kappa = 0.25) {
  const auto H = remainder_hessian(param, truth);
  double q = 0.0, frob = 0.0, norm2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    norm2 += d[i] * d[i];
    for (std::size_t j = 0; j < 3; ++j) {
      q += d[i] * H[i][j] * d[j];
      frob += H[i][j] * H[i][j];
    }
  }
  return std::abs(q) >= kappa * std::sqrt(frob) * norm2;
}

// ---------------------------------------------------------------------------
// Population risk on tabulated laws

inline PointTruth point_truth(const Cell& c) { return {c.p_y1_t1, c.p_y1_t0, c.p_t1}; }

inline std::vector<NuisanceTriple> true_nuisances(const SyntheticDistribution& d) {
  std::vector<NuisanceTriple> out;
  out.reserve(d.size());
  for (const auto& c : d.cells) out.push_back({c.p_y1_t1, c.p_y1_t0, c.p_t1});
  return out;
}

/// L(f, eta) = sum_x P(x) sum_{t,y} P(t|x) P(y|t,x) w(x) (phi - f(x))^2 with
/// w = 1, or w = pi(1 - pi) for the overlap-weighted variant.
inline double population_risk(TargetParameter param, std::span<const double> f,
                              std::span<const NuisanceTriple> eta,
                              const SyntheticDistribution& dist, bool weighted = false) {
  // extended accumulation: risk differences cancel heavily for ratio contrasts
  long double risk = 0.0L;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto& c = dist.cells[i];
    const double w = weighted ? rlearner_weight(eta[i].pi) : 1.0;
    long double inner = 0.0L;
    for (int t = 0; t <= 1; ++t) {
      const double pt = t == 1 ? c.p_t1 : 1.0 - c.p_t1;
      for (int y = 0; y <= 1; ++y) {
        const double py = y == 1 ? c.outcome(t) : 1.0 - c.outcome(t);
        Observation obs;
        obs.t = t;
        obs.y = y;
        const long double r = static_cast<long double>(pseudo_outcome(param, obs, eta[i])) - f[i];
        inner += pt * py * r * r;
      }
    }
    risk += c.p_x * w * inner;
  }
  return static_cast<double>(risk);
}

/// E[phi(Z; eta) | X = x] at every cell.
inline std::vector<double> conditional_mean_field(TargetParameter param,
                                                  const SyntheticDistribution& dist,
                                                  std::span<const NuisanceTriple> eta) {
  std::vector<double> m;
  m.reserve(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i)
    m.push_back(exact_conditional_mean(param, point_truth(dist.cells[i]), eta[i]));
  return m;
}

/// Directional derivative D_f L(f, eta)[h]. The risk is quadratic in f, so
/// this is exact: -2 sum_x P(x) w(x) h(x) (E[phi | x] - f(x)).
inline double risk_derivative_f(TargetParameter param, const SyntheticDistribution& dist,
                                std::span<const double> f, std::span<const double> h,
                                std::span<const NuisanceTriple> eta, bool weighted = false) {
  double d = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto& c = dist.cells[i];
    const double w = weighted ? rlearner_weight(eta[i].pi) : 1.0;
    const double m = exact_conditional_mean(param, point_truth(c), eta[i]);
    d += -2.0 * c.p_x * w * h[i] * (m - f[i]);
  }
  return d;
}

namespace detail {
inline std::vector<NuisanceTriple> shift(std::span<const NuisanceTriple> base,
                                         std::span<const std::array<double, 3>> k, double r) {
  std::vector<NuisanceTriple> out(base.begin(), base.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].q1 += r * k[i][0];
    out[i].q0 += r * k[i][1];
    out[i].pi += r * k[i][2];
    if (!(out[i].q1 > 0 && out[i].q1 < 1 && out[i].q0 > 0 && out[i].q0 < 1 &&
          out[i].pi > 0 && out[i].pi < 1))
      throw std::domain_error("orthogonality probe: perturbed nuisance leaves (0,1)");
  }
  return out;
}
}  // namespace detail

/// Central difference in r of D_f L(theta, eta0 + r k)[h] at r = 0, with
/// theta the true effect and eta0 the true nuisances. Vanishes as O(step^2)
/// when the loss is Neyman orthogonal.
inline double orthogonality_probe(TargetParameter param, const SyntheticDistribution& dist,
                                  std::span<const double> h,
                                  std::span<const std::array<double, 3>> k, double step,
                                  bool weighted = false) {
  if (!(step > 0.0)) throw std::invalid_argument("step must be positive");
  const auto theta = dist.true_effect(param);
  const auto eta0 = true_nuisances(dist);
  const auto up = detail::shift(eta0, k, step);
  const auto down = detail::shift(eta0, k, -step);
  return (risk_derivative_f(param, dist, theta, h, up, weighted) -
          risk_derivative_f(param, dist, theta, h, down, weighted)) /
         (2.0 * step);
}

struct OrthogonalityLadder {
  std::vector<double> steps;
  std::vector<double> values;
  double extrapolated = 0.0;  // Richardson limit as step -> 0
  double slope = 0.0;         // log-log slope of |value| against step
};

/// Probe at steps s, s/2, s/4 and eliminate the step^2 and step^4 terms.
inline OrthogonalityLadder orthogonality_ladder(TargetParameter param,
                                                const SyntheticDistribution& dist,
                                                std::span<const double> h,
                                                std::span<const std::array<double, 3>> k,
                                                double largest_step = 1e-2,
                                                bool weighted = false) {
  OrthogonalityLadder out;
  out.steps = {largest_step, largest_step / 2, largest_step / 4};
  for (double s : out.steps) out.values.push_back(orthogonality_probe(param, dist, h, k, s, weighted));
  const double r1 = (4.0 * out.values[1] - out.values[0]) / 3.0;
  const double r2 = (4.0 * out.values[2] - out.values[1]) / 3.0;
  out.extrapolated = (16.0 * r2 - r1) / 15.0;
  std::vector<double> mags;
  bool all_positive = true;
  for (double v : out.values) {
    mags.push_back(std::abs(v));
    all_positive = all_positive && std::abs(v) > 0.0;
  }
  out.slope = all_positive ? log_log_slope(out.steps, mags) : 0.0;
  return out;
}

/// Random tabulated law with probabilities drawn uniformly from the given
/// ranges; covariates are just the cell index.
inline SyntheticDistribution random_distribution(Engine& rng, std::size_t cells,
                                                 Interval outcome = {0.05, 0.95},
                                                 Interval propensity = {0.05, 0.95}) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SyntheticDistribution d;
  d.cells.resize(cells);
  double total = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    auto& c = d.cells[i];
    c.x[kNumBinary] = static_cast<double>(i);
    c.p_x = 0.05 + u01(rng);
    total += c.p_x;
    c.p_t1 = propensity.lo + (propensity.hi - propensity.lo) * u01(rng);
    c.p_y1_t1 = outcome.lo + (outcome.hi - outcome.lo) * u01(rng);
    c.p_y1_t0 = outcome.lo + (outcome.hi - outcome.lo) * u01(rng);
  }
  for (auto& c : d.cells) c.p_x /= total;
  return d;
}

}  // namespace drl
