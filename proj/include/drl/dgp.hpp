// Random nonparametric data-generating processes over {0,1}^5 x grid.
//
// A distribution is built in three stages: a flat Dirichlet law for the
// covariates, a propensity surface assembled from binary interaction terms
// with Gaussian-process coefficients in the numeric covariate, and an
// outcome surface of the same shape whose confounding bias is pinned to a
// sampled target. Each stage is a rejection sampler; if a stage runs out of
// iterations the generator restarts from fresh covariate draws.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "drl/distribution.hpp"
#include "drl/effects.hpp"
#include "drl/errors.hpp"
#include "drl/random.hpp"

namespace drl {

struct DGPConfig {
  int n_bin = kNumBinary;
  int n_num = 1;
  int npoints = 100;
  int inter_order = 1;
  bool tx_inter = true;
  Interval conf_bias_range{-0.5, 0.5};
  Interval eta_range{0.1, 30.0};
  Interval rho_range{0.1, 30.0};
  double pos_bound = 1000.0;
  double tol = 0.01;
  Interval outcome_clamp{0.05, 0.95};
  int max_rejection_iters = 1000;
  int max_restarts = 25;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_bin != kNumBinary || n_num != 1)
      throw std::invalid_argument("only 5 binary + 1 numeric covariates are supported");
    if (npoints < 2) throw std::invalid_argument("npoints must be >= 2");
    if (inter_order < 1 || inter_order > 3)
      throw std::invalid_argument("inter_order must be in {1,2,3}");
    if (!(eta_range.lo > 0.0 && eta_range.lo <= eta_range.hi) ||
        !(rho_range.lo > 0.0 && rho_range.lo <= rho_range.hi))
      throw std::invalid_argument("eta/rho ranges must be positive");
    if (!(pos_bound > 1.0) || !(tol > 0.0))
      throw std::invalid_argument("pos_bound must exceed 1 and tol be positive");
    if (!(outcome_clamp.lo > 0.0 && outcome_clamp.lo < outcome_clamp.hi &&
          outcome_clamp.hi < 1.0))
      throw std::invalid_argument("outcome clamp must satisfy 0 < lo < hi < 1");
    if (max_rejection_iters < 1 || max_restarts < 1)
      throw std::invalid_argument("iteration budgets must be positive");
  }

  std::size_t num_cells() const {
    return (std::size_t{1} << kNumBinary) * static_cast<std::size_t>(npoints);
  }
};

/// Equally spaced grid {0, 1/(n-1), ..., 1}.
inline std::vector<double> numeric_grid(int npoints) {
  std::vector<double> g(static_cast<std::size_t>(npoints));
  for (int i = 0; i < npoints; ++i)
    g[static_cast<std::size_t>(i)] = static_cast<double>(i) / (npoints - 1);
  return g;
}

/// Binary-interaction index set: every subset of the 5 indicators of size
/// at most `order`, as bitmasks ordered by size then value.
inline std::vector<unsigned> interaction_set(int order) {
  std::vector<unsigned> out;
  for (int k = 0; k <= order; ++k)
    for (unsigned m = 0; m < (1u << kNumBinary); ++m)
      if (std::popcount(m) == k) out.push_back(m);
  return out;
}

/// Cells are ordered pattern-major: index = pattern * npoints + grid index.
inline std::vector<Cell> covariate_cells(int npoints) {
  const auto grid = numeric_grid(npoints);
  std::vector<Cell> cells;
  cells.reserve((std::size_t{1} << kNumBinary) * grid.size());
  for (unsigned pattern = 0; pattern < (1u << kNumBinary); ++pattern) {
    for (double g : grid) {
      Cell c;
      for (int j = 0; j < kNumBinary; ++j)
        c.x[static_cast<std::size_t>(j)] = static_cast<double>((pattern >> j) & 1u);
      c.x[kNumBinary] = g;
      cells.push_back(c);
    }
  }
  return cells;
}

/// Symmetric Dirichlet(1) law over `num_cells` cells.
inline std::vector<double> sample_covariate_distribution(Engine& rng,
                                                         std::size_t num_cells) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> p(num_cells);
  double total = 0.0;
  for (auto& v : p) {
    do v = expo(rng);
    while (v <= 0.0);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

struct GPDraw {
  double eta = 1.0;
  double rho = 1.0;
  std::vector<double> values;
};

/// Zero-mean Gaussian process on `grid` with covariance
/// eta * exp(-rho * (xi - xj)^2), sampled through a Cholesky factor.
inline GPDraw sample_gp(Engine& rng, double eta, double rho,
                        std::span<const double> grid) {
  if (!(eta > 0.0) || !(rho > 0.0))
    throw std::invalid_argument("GP amplitude and length-scale must be positive");
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = grid[static_cast<std::size_t>(i)] - grid[static_cast<std::size_t>(j)];
      k(i, j) = eta * std::exp(-rho * d * d);
    }
  double jitter = 1e-8;
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 2.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) break;
    if (attempt == 3)
      throw std::runtime_error("GP covariance factorization failed after jitter escalation");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  const Eigen::VectorXd f = llt.matrixL() * z;
  return {eta, rho, std::vector<double>(f.data(), f.data() + n)};
}

/// C = sum_t (2t-1) sum_x P(x)/P(T=t) {P(T=t|x) - P(T=t)} P(Y=1|t,x).
inline double confounding_bias(std::span<const double> p_x, std::span<const double> p_t1,
                               std::span<const double> p_y1_t1,
                               std::span<const double> p_y1_t0) {
  double treated = 0.0;
  for (std::size_t i = 0; i < p_x.size(); ++i) treated += p_x[i] * p_t1[i];
  const double control = 1.0 - treated;
  if (!(treated > 0.0) || !(control > 0.0))
    throw std::domain_error("confounding bias undefined when P(T=t) = 0");
  double c = 0.0;
  for (std::size_t i = 0; i < p_x.size(); ++i) {
    const double dev = p_t1[i] - treated;
    c += p_x[i] / treated * dev * p_y1_t1[i];
    c -= p_x[i] / control * (-dev) * p_y1_t0[i];
  }
  return c;
}

inline double confounding_bias(const SyntheticDistribution& d) {
  std::vector<double> px, pt, p1, p0;
  for (const auto& c : d.cells) {
    px.push_back(c.p_x);
    pt.push_back(c.p_t1);
    p1.push_back(c.p_y1_t1);
    p0.push_back(c.p_y1_t0);
  }
  return confounding_bias(px, pt, p1, p0);
}

/// max over (t, x) of P(T=t) / P(T=t | x).
inline double positivity_ratio(std::span<const double> p_x, std::span<const double> p_t1) {
  double treated = 0.0;
  for (std::size_t i = 0; i < p_x.size(); ++i) treated += p_x[i] * p_t1[i];
  double worst = 0.0;
  for (double p : p_t1)
    worst = std::max({worst, treated / p, (1.0 - treated) / (1.0 - p)});
  return worst;
}

namespace detail {

inline double uniform(Engine& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m > 0.0 ? m : 1.0;
}

/// Linear surface sum_j coef_j * basis_j(cell) with a fixed basis.
struct LinearSurface {
  Eigen::MatrixXd basis;   // cells x terms
  Eigen::VectorXd center;  // box centre per coefficient
  Eigen::VectorXd half;    // box half-width per coefficient

  Eigen::VectorXd draw(Engine& rng, double shrink) const {
    Eigen::VectorXd c(center.size());
    for (Eigen::Index j = 0; j < c.size(); ++j)
      c(j) = center(j) + shrink * half(j) * uniform(rng, -1.0, 1.0);
    return c;
  }
};

inline double shrink_factor(int iteration) {
  return std::pow(0.9, iteration / 100);
}

/// Columns: alpha0_l * X_l then alpha1_l * f_l(x_num) * X_l for l in L.
inline LinearSurface build_interaction_surface(const std::vector<unsigned>& terms,
                                               const std::vector<GPDraw>& gps,
                                               int npoints, double intercept_center,
                                               double intercept_half, double term_half) {
  const auto nterms = static_cast<Eigen::Index>(terms.size());
  const auto ncells = static_cast<Eigen::Index>((1u << kNumBinary) * static_cast<unsigned>(npoints));
  LinearSurface s;
  s.basis = Eigen::MatrixXd::Zero(ncells, 2 * nterms);
  s.center = Eigen::VectorXd::Zero(2 * nterms);
  s.half = Eigen::VectorXd::Zero(2 * nterms);
  for (Eigen::Index l = 0; l < nterms; ++l) {
    const unsigned mask = terms[static_cast<std::size_t>(l)];
    const auto& f = gps[static_cast<std::size_t>(l)].values;
    s.half(l) = mask == 0 ? intercept_half : term_half;
    s.center(l) = mask == 0 ? intercept_center : 0.0;
    s.half(nterms + l) = term_half / sup_norm(f);
    for (unsigned pattern = 0; pattern < (1u << kNumBinary); ++pattern) {
      if ((pattern & mask) != mask) continue;
      for (int g = 0; g < npoints; ++g) {
        const auto row = static_cast<Eigen::Index>(pattern * static_cast<unsigned>(npoints) +
                                                   static_cast<unsigned>(g));
        s.basis(row, l) = 1.0;
        s.basis(row, nterms + l) = f[static_cast<std::size_t>(g)];
      }
    }
  }
  return s;
}

inline std::vector<GPDraw> draw_gps(Engine& rng, std::size_t count, double eta,
                                    double rho, std::span<const double> grid) {
  std::vector<GPDraw> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_gp(rng, eta, rho, grid));
  return out;
}

}  // namespace detail

struct TreatmentMechanism {
  std::vector<double> p_t1;
  int iterations = 0;
  double eta = 0.0;
  double rho = 0.0;
};

/// Propensity P(T=1|x) = sum_{l in L} (alpha0_l + alpha1_l f_l(x_num)) X_l.
/// Coefficients come from a centred box; draws violating 0 < P(T=1|x) < 1 or
/// the positivity bound are rejected, and the box shrinks by 0.9 every 100
/// rejections. Throws InfeasibleDraw once the iteration cap is reached.
inline TreatmentMechanism sample_treatment_mechanism(Engine& rng, const DGPConfig& config,
                                                     std::span<const double> p_x) {
  const auto terms = interaction_set(config.inter_order);
  const auto grid = numeric_grid(config.npoints);
  TreatmentMechanism out;
  out.eta = detail::uniform(rng, config.eta_range.lo, config.eta_range.hi);
  out.rho = detail::uniform(rng, config.rho_range.lo, config.rho_range.hi);
  const auto gps = detail::draw_gps(rng, terms.size(), out.eta, out.rho, grid);
  const double term_half = 1.0 / std::sqrt(static_cast<double>(terms.size()));
  const auto surface =
      detail::build_interaction_surface(terms, gps, config.npoints, 0.5, 0.45, term_half);

  std::vector<double> p(p_x.size());
  for (int it = 0; it < config.max_rejection_iters; ++it) {
    const Eigen::VectorXd coef = surface.draw(rng, detail::shrink_factor(it));
    const Eigen::VectorXd values = surface.basis * coef;
    bool inside = true;
    for (Eigen::Index i = 0; i < values.size() && inside; ++i) {
      p[static_cast<std::size_t>(i)] = values(i);
      inside = values(i) > 0.0 && values(i) < 1.0;
    }
    if (inside && positivity_ratio(p_x, p) <= config.pos_bound) {
      out.p_t1 = std::move(p);
      out.iterations = it + 1;
      return out;
    }
  }
  throw InfeasibleDraw("treatment mechanism: rejection cap reached");
}

inline constexpr int kBiasCorrectionSteps = 8;

struct OutcomeMechanism {
  std::vector<double> p_y1_t1;
  std::vector<double> p_y1_t0;
  int iterations = 0;
  double eta = 0.0;
  double rho = 0.0;
  double achieved_bias = 0.0;
};

/// P(Y=1|t,x) = t * sum_l (lambda0_l + lambda1_l h_l) X_l
///              + sum_l (beta0_l + beta1_l w_l) X_l,
/// with the treatment sum reduced to a constant lambda0 when tx_inter is off.
/// Each box draw is moved along the confounding-bias gradient toward
/// C = target (C is linear in the coefficients before clamping, piecewise
/// linear after), and accepted iff |C - target| <= tol after clamping.
inline OutcomeMechanism sample_outcome_mechanism(Engine& rng, const DGPConfig& config,
                                                 std::span<const double> p_x,
                                                 std::span<const double> p_t1,
                                                 double target_bias) {
  const auto terms = interaction_set(config.inter_order);
  const auto grid = numeric_grid(config.npoints);
  OutcomeMechanism out;
  out.eta = detail::uniform(rng, config.eta_range.lo, config.eta_range.hi);
  out.rho = detail::uniform(rng, config.rho_range.lo, config.rho_range.hi);
  const auto base_gps = detail::draw_gps(rng, terms.size(), out.eta, out.rho, grid);
  const double term_half = 0.5 / std::sqrt(static_cast<double>(terms.size()));
  const auto base =
      detail::build_interaction_surface(terms, base_gps, config.npoints, 0.5, 0.35, term_half);

  detail::LinearSurface effect;
  if (config.tx_inter) {
    const auto effect_gps = detail::draw_gps(rng, terms.size(), out.eta, out.rho, grid);
    effect = detail::build_interaction_surface(terms, effect_gps, config.npoints, 0.0, 0.25,
                                               term_half);
  } else {
    effect.basis = Eigen::MatrixXd::Ones(base.basis.rows(), 1);
    effect.center = Eigen::VectorXd::Zero(1);
    effect.half = Eigen::VectorXd::Constant(1, 0.25);
  }

  const auto ncells = base.basis.rows();
  const auto nb = base.basis.cols();
  const auto ne = effect.basis.cols();
  Eigen::VectorXd center(nb + ne), half(nb + ne);
  center << base.center, effect.center;
  half << base.half, effect.half;

  // Gradient of C in the coefficients: base terms enter both arms, effect
  // terms only the treated arm.
  double treated = 0.0;
  for (Eigen::Index i = 0; i < ncells; ++i)
    treated += p_x[static_cast<std::size_t>(i)] * p_t1[static_cast<std::size_t>(i)];
  const double control = 1.0 - treated;
  Eigen::VectorXd a1(ncells), a0(ncells);
  for (Eigen::Index i = 0; i < ncells; ++i) {
    const double dev = p_x[static_cast<std::size_t>(i)] *
                       (p_t1[static_cast<std::size_t>(i)] - treated);
    a1(i) = dev / treated;
    a0(i) = dev / control;
  }
  // Gradient of the clamped bias: cells pinned at a clamp bound drop out.
  auto bias_gradient = [&](const Eigen::VectorXd& y1, const Eigen::VectorXd& y0) {
    Eigen::VectorXd m1 = a1, m0 = a0;
    for (Eigen::Index i = 0; i < ncells; ++i) {
      if (!config.outcome_clamp.contains(y1(i))) m1(i) = 0.0;
      if (!config.outcome_clamp.contains(y0(i))) m0(i) = 0.0;
    }
    Eigen::VectorXd g(nb + ne);
    g << base.basis.transpose() * (m1 + m0), effect.basis.transpose() * m1;
    return g;
  };

  std::vector<double> p1(static_cast<std::size_t>(ncells)), p0(static_cast<std::size_t>(ncells));
  for (int it = 0; it < config.max_rejection_iters; ++it) {
    const double shrink = detail::shrink_factor(it);
    Eigen::VectorXd coef(nb + ne);
    coef << base.draw(rng, shrink), effect.draw(rng, shrink);
    double c = 0.0;
    for (int step = 0;; ++step) {
      const Eigen::VectorXd y0 = base.basis * coef.head(nb);
      const Eigen::VectorXd y1 = y0 + effect.basis * coef.tail(ne);
      for (Eigen::Index i = 0; i < ncells; ++i) {
        p1[static_cast<std::size_t>(i)] = truncate(y1(i), config.outcome_clamp);
        p0[static_cast<std::size_t>(i)] = truncate(y0(i), config.outcome_clamp);
      }
      c = confounding_bias(p_x, p_t1, p1, p0);
      if (std::abs(c - target_bias) <= config.tol || step == kBiasCorrectionSteps) break;
      // Newton step on the piecewise-linear clamped bias, scaled by the box.
      const Eigen::VectorXd grad = bias_gradient(y1, y0);
      const Eigen::VectorXd scaled = half.cwiseProduct(grad);
      const double norm2 = scaled.squaredNorm();
      if (!(norm2 > 0.0)) break;
      coef += (target_bias - c) / norm2 * half.cwiseProduct(scaled);
    }
    if (std::abs(c - target_bias) <= config.tol) {
      out.p_y1_t1 = p1;
      out.p_y1_t0 = p0;
      out.iterations = it + 1;
      out.achieved_bias = c;
      return out;
    }
  }
  throw InfeasibleDraw("outcome mechanism: confounding-bias target not reached");
}

/// Throws FormatError naming the first violated invariant. The bias check
/// runs only when the provenance carries a target.
inline void validate_distribution(const SyntheticDistribution& d, double pos_bound = 1000.0,
                                  Interval outcome_clamp = {0.05, 0.95}, double tol = 0.01) {
  if (d.cells.empty()) throw FormatError("distribution has no cells");
  double total = 0.0;
  std::vector<double> px, pt;
  for (const auto& c : d.cells) {
    if (!(c.p_x >= 0.0)) throw FormatError("negative P(X)");
    total += c.p_x;
    if (!(c.p_t1 > 0.0 && c.p_t1 < 1.0)) throw FormatError("P(T=1|x) outside (0,1)");
    if (!outcome_clamp.contains(c.p_y1_t1) || !outcome_clamp.contains(c.p_y1_t0))
      throw FormatError("P(Y=1|t,x) outside the outcome clamp");
    px.push_back(c.p_x);
    pt.push_back(c.p_t1);
  }
  if (std::abs(total - 1.0) > 1e-12) throw FormatError("P(X) does not sum to 1");
  if (positivity_ratio(px, pt) > pos_bound) throw FormatError("positivity bound violated");
  if (d.provenance.has_target &&
      std::abs(confounding_bias(d) - d.provenance.target_bias) > tol)
    throw FormatError("confounding bias outside tolerance of its target");
}

/// Full pipeline with outer restarts on infeasible draws.
inline SyntheticDistribution generate(const DGPConfig& config) {
  config.validate();
  Engine rng = make_engine(config.seed);
  auto cells = covariate_cells(config.npoints);
  for (int restart = 0; restart < config.max_restarts; ++restart) {
    const double target =
        detail::uniform(rng, config.conf_bias_range.lo, config.conf_bias_range.hi);
    const auto p_x = sample_covariate_distribution(rng, cells.size());
    try {
      const auto tm = sample_treatment_mechanism(rng, config, p_x);
      const auto om = sample_outcome_mechanism(rng, config, p_x, tm.p_t1, target);
      SyntheticDistribution d;
      d.cells = cells;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        d.cells[i].p_x = p_x[i];
        d.cells[i].p_t1 = tm.p_t1[i];
        d.cells[i].p_y1_t1 = om.p_y1_t1[i];
        d.cells[i].p_y1_t0 = om.p_y1_t0[i];
      }
      auto& pv = d.provenance;
      pv.inter_order = config.inter_order;
      pv.tx_inter = config.tx_inter;
      pv.seed = config.seed;
      pv.target_bias = target;
      pv.achieved_bias = om.achieved_bias;
      pv.has_target = true;
      pv.restarts = restart;
      pv.treatment_iterations = tm.iterations;
      pv.outcome_iterations = om.iterations;
      pv.eta_treatment = tm.eta;
      pv.rho_treatment = tm.rho;
      pv.eta_outcome = om.eta;
      pv.rho_outcome = om.rho;
      validate_distribution(d, config.pos_bound, config.outcome_clamp, config.tol);
      return d;
    } catch (const InfeasibleDraw&) {
    }
  }
  throw InfeasibleDraw("distribution generation: restart budget exhausted");
}

enum class HteLevel { Low, High };

inline std::string_view to_string(HteLevel h) { return h == HteLevel::High ? "High" : "Low"; }

struct HteResult {
  HteLevel label = HteLevel::Low;
  double cv = 0.0;
  bool near_zero_mean = false;
};

/// Coefficient of variation of theta(x) under P(X); High iff CV >= 0.2.
/// A weighted mean below 1e-10 in magnitude is labelled High and flagged.
inline HteResult hte_label(const SyntheticDistribution& d, TargetParameter param) {
  double mean = 0.0, total = 0.0;
  for (const auto& c : d.cells) {
    mean += c.p_x * c.truth(param);
    total += c.p_x;
  }
  mean /= total;
  double var = 0.0;
  for (const auto& c : d.cells) {
    const double dev = c.truth(param) - mean;
    var += c.p_x * dev * dev;
  }
  var /= total;
  HteResult r;
  if (std::abs(mean) < 1e-10) {
    r.label = HteLevel::High;
    r.cv = std::numeric_limits<double>::infinity();
    r.near_zero_mean = true;
    return r;
  }
  r.cv = std::sqrt(var) / std::abs(mean);
  r.label = r.cv >= 0.2 ? HteLevel::High : HteLevel::Low;
  return r;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr const char* kDistributionHeader =
    "x_bin1,x_bin2,x_bin3,x_bin4,x_bin5,x_num,p_x,p_t1,p_y1_t1,p_y1_t0,ate,or_,rr";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(const SyntheticDistribution& d, std::ostream& os) {
  os << kDistributionHeader << '\n';
  for (const auto& c : d.cells) {
    for (int j = 0; j < kNumBinary; ++j)
      os << static_cast<int>(c.x[static_cast<std::size_t>(j)]) << ',';
    os << format_double(c.x[kNumBinary]) << ',' << format_double(c.p_x) << ','
       << format_double(c.p_t1) << ',' << format_double(c.p_y1_t1) << ','
       << format_double(c.p_y1_t0) << ',' << format_double(c.truth(TargetParameter::ATE))
       << ',' << format_double(c.truth(TargetParameter::OR)) << ','
       << format_double(c.truth(TargetParameter::RR)) << '\n';
  }
}

inline void save_csv(const SyntheticDistribution& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_csv(d, os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

namespace detail {
inline double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw FormatError("line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool close_rel(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max(1.0, std::abs(b));
}
}  // namespace detail

/// Parses and validates a distribution table. Invariants that need a target
/// bias are checked only if `provenance` carries one.
inline SyntheticDistribution read_csv(std::istream& is, Provenance provenance = {}) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty distribution file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kDistributionHeader) throw FormatError("unexpected header: " + line);
  SyntheticDistribution d;
  d.provenance = provenance;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 13)
      throw FormatError("line " + std::to_string(lineno) + ": expected 13 fields");
    Cell c;
    for (int j = 0; j < kNumBinary; ++j) {
      const double b = detail::parse_double(f[static_cast<std::size_t>(j)], lineno);
      if (b != 0.0 && b != 1.0)
        throw FormatError("line " + std::to_string(lineno) + ": binary covariate not 0/1");
      c.x[static_cast<std::size_t>(j)] = b;
    }
    c.x[kNumBinary] = detail::parse_double(f[5], lineno);
    c.p_x = detail::parse_double(f[6], lineno);
    c.p_t1 = detail::parse_double(f[7], lineno);
    c.p_y1_t1 = detail::parse_double(f[8], lineno);
    c.p_y1_t0 = detail::parse_double(f[9], lineno);
    const double ate = detail::parse_double(f[10], lineno);
    const double orr = detail::parse_double(f[11], lineno);
    const double rr = detail::parse_double(f[12], lineno);
    if (!detail::close_rel(ate, c.truth(TargetParameter::ATE), 1e-12) ||
        !detail::close_rel(orr, c.truth(TargetParameter::OR), 1e-12) ||
        !detail::close_rel(rr, c.truth(TargetParameter::RR), 1e-12))
      throw FormatError("line " + std::to_string(lineno) +
                        ": derived effect columns disagree with probabilities");
    d.cells.push_back(c);
  }
  validate_distribution(d);
  return d;
}

// Sidecar JSON holding provenance, config and HTE labels.

inline nlohmann::json provenance_json(const Provenance& p) {
  return {{"inter_order", p.inter_order},
          {"tx_inter", p.tx_inter},
          {"seed", p.seed},
          {"target_bias", p.target_bias},
          {"achieved_bias", p.achieved_bias},
          {"restarts", p.restarts},
          {"treatment_iterations", p.treatment_iterations},
          {"outcome_iterations", p.outcome_iterations},
          {"eta_treatment", p.eta_treatment},
          {"rho_treatment", p.rho_treatment},
          {"eta_outcome", p.eta_outcome},
          {"rho_outcome", p.rho_outcome}};
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.inter_order = j.at("inter_order").get<int>();
  p.tx_inter = j.at("tx_inter").get<bool>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.target_bias = j.at("target_bias").get<double>();
  p.achieved_bias = j.value("achieved_bias", 0.0);
  p.restarts = j.value("restarts", 0);
  p.treatment_iterations = j.value("treatment_iterations", 0);
  p.outcome_iterations = j.value("outcome_iterations", 0);
  p.eta_treatment = j.value("eta_treatment", 0.0);
  p.rho_treatment = j.value("rho_treatment", 0.0);
  p.eta_outcome = j.value("eta_outcome", 0.0);
  p.rho_outcome = j.value("rho_outcome", 0.0);
  p.has_target = true;
  return p;
}

inline nlohmann::json sidecar_json(const SyntheticDistribution& d, const DGPConfig& config) {
  nlohmann::json labels = nlohmann::json::object();
  for (auto p : kAllParameters) {
    const auto h = hte_label(d, p);
    labels[std::string(to_string(p))] = {
        {"label", std::string(to_string(h.label))},
        {"cv", h.near_zero_mean ? nlohmann::json(nullptr) : nlohmann::json(h.cv)},
        {"near_zero_mean", h.near_zero_mean}};
  }
  return {{"provenance", provenance_json(d.provenance)},
          {"config",
           {{"n_bin", config.n_bin},
            {"n_num", config.n_num},
            {"npoints", config.npoints},
            {"inter_order", config.inter_order},
            {"tx_inter", config.tx_inter},
            {"pos_bound", config.pos_bound},
            {"tol", config.tol},
            {"max_rejection_iters", config.max_rejection_iters},
            {"max_restarts", config.max_restarts}}},
          {"hte", labels}};
}

inline std::string sidecar_path(const std::string& csv_path) {
  const auto dot = csv_path.rfind(".csv");
  return (dot == std::string::npos ? csv_path : csv_path.substr(0, dot)) + ".json";
}

/// Loads a distribution; a sidecar next to the CSV (same stem, .json) adds
/// provenance and enables the confounding-bias check.
inline SyntheticDistribution load_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  Provenance prov;
  if (std::ifstream side(sidecar_path(path)); side) {
    prov = provenance_from_json(nlohmann::json::parse(side).at("provenance"));
  }
  return read_csv(is, prov);
}

}  // namespace drl
