// Monte Carlo engine: weighted sampling from tabulated laws, repeated fits,
// integrated bias/variance/MSE, stratified summaries, reliability curves and
// exact evaluation of treatment rules.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "drl/dgp.hpp"
#include "drl/distribution.hpp"
#include "drl/effects.hpp"
#include "drl/errors.hpp"
#include "drl/metalearners.hpp"
#include "drl/parallel.hpp"
#include "drl/random.hpp"

namespace drl {

inline constexpr int kMaxDegenerateDraws = 100;

class PathologicalDistribution : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n draws with replacement: cell ~ P(X), T ~ Bern(P(T=1|x)), Y ~ Bern(P(Y=1|T,x)).
/// Datasets with a single observed level of T or Y are discarded and redrawn.
inline std::vector<Observation> sample_dataset(const SyntheticDistribution& dist, std::size_t n,
                                               Engine& rng) {
  if (n < 2) throw std::invalid_argument("sample_dataset: n must be >= 2");
  const auto w = dist.weights();
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Observation> out(n);
  for (int attempt = 0; attempt < kMaxDegenerateDraws; ++attempt) {
    int t1 = 0, y1 = 0;
    for (auto& o : out) {
      const auto& c = dist.cells[pick(rng)];
      o.x = c.x;
      o.t = u01(rng) < c.p_t1 ? 1 : 0;
      o.y = u01(rng) < c.outcome(o.t) ? 1 : 0;
      t1 += o.t;
      y1 += o.y;
    }
    const int ni = static_cast<int>(n);
    if (t1 > 0 && t1 < ni && y1 > 0 && y1 < ni) return out;
  }
  throw PathologicalDistribution("100 consecutive datasets had a constant T or Y");
}

// ---------------------------------------------------------------------------
// Metrics

struct IntegratedMetrics {
  double ibias2 = 0.0;
  double ivariance = 0.0;
  double imse = 0.0;
};

/// predictions[b] holds theta-hat_b at every cell, on the comparison scale.
inline IntegratedMetrics integrated_metrics(std::span<const double> p_x,
                                            std::span<const double> truth,
                                            const std::vector<std::vector<double>>& predictions) {
  if (predictions.empty()) throw std::invalid_argument("no replications to score");
  const double B = static_cast<double>(predictions.size());
  IntegratedMetrics m;
  for (std::size_t x = 0; x < p_x.size(); ++x) {
    double mean = 0.0;
    for (const auto& p : predictions) mean += p[x];
    mean /= B;
    double var = 0.0, mse = 0.0;
    for (const auto& p : predictions) {
      var += (p[x] - mean) * (p[x] - mean);
      mse += (p[x] - truth[x]) * (p[x] - truth[x]);
    }
    m.ibias2 += p_x[x] * (mean - truth[x]) * (mean - truth[x]);
    m.ivariance += p_x[x] * var / B;
    m.imse += p_x[x] * mse / B;
  }
  return m;
}

/// OR and RR metrics share the HTE label of their natural-scale surface.
inline TargetParameter hte_parameter(TargetParameter p) {
  switch (p) {
    case TargetParameter::LogOR: return TargetParameter::OR;
    case TargetParameter::LogRR: return TargetParameter::RR;
    default: return p;
  }
}

struct MetricsRecord {
  std::string distribution_id;
  int inter_order = 0;
  bool tx_inter = false;
  TargetParameter hte_param = TargetParameter::ATE;
  HteLevel hte_label = HteLevel::Low;
  std::string estimator;
  std::size_t n = 0;
  TargetParameter param = TargetParameter::ATE;  // comparison-scale parameter
  bool log_scale = false;                        // estimator output was logged
  double ibias2 = 0.0;
  double ivariance = 0.0;
  double imse = 0.0;
  int reps_used = 0;
  int reps_requested = 0;

  bool identity_holds(double rel = 1e-9) const {
    return std::abs(imse - (ibias2 + ivariance)) <= rel * std::max(1.0, imse);
  }
};

/// A distribution plus the labels carried into result rows.
struct DistributionRef {
  std::string id;
  std::size_t index = 0;  // seed key
  const SyntheticDistribution* dist = nullptr;
};

struct EvalOptions {
  MetaConfig meta{};
  std::uint64_t master_seed = 0;
  unsigned jobs = 1;
};

inline std::uint64_t name_key(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

inline std::uint64_t dataset_seed(std::uint64_t master, std::size_t dist_index, std::size_t n,
                                  int rep) {
  return derive_seed(master, {static_cast<std::uint64_t>(StreamRole::kDataset), dist_index, n,
                              static_cast<std::uint64_t>(rep)});
}

inline std::uint64_t fit_seed(std::uint64_t master, std::size_t dist_index,
                              std::string_view estimator, std::size_t n, int rep) {
  return derive_seed(master, {static_cast<std::uint64_t>(StreamRole::kFit), dist_index,
                              name_key(estimator), n, static_cast<std::uint64_t>(rep)});
}

/// Parameters reported for an estimator given the requested list: direct
/// learners report their own target only.
inline std::vector<TargetParameter> reported_parameters(const EstimatorSpec& spec,
                                                        std::span<const TargetParameter> wanted) {
  if (spec.param) return {*spec.param};
  return {wanted.begin(), wanted.end()};
}

/// B replications of one estimator at one sample size. Every estimator sees
/// the same datasets (the dataset stream ignores the estimator). Failed fits
/// are dropped and reported through reps_used.
inline std::vector<MetricsRecord> evaluate(const DistributionRef& ref, const EstimatorSpec& spec,
                                           std::span<const TargetParameter> params, std::size_t n,
                                           int B, const EvalOptions& options) {
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  const auto& dist = *ref.dist;
  const auto targets = reported_parameters(spec, params);
  const Eigen::MatrixXd X = dist.covariate_matrix();

  // preds[b][k] = comparison-scale predictions for targets[k]
  std::vector<std::vector<std::vector<double>>> preds(static_cast<std::size_t>(B));
  std::vector<char> ok(static_cast<std::size_t>(B), 0);
  parallel_for(static_cast<std::size_t>(B), options.jobs, [&](std::size_t b) {
    const int rep = static_cast<int>(b);
    Engine rng = make_engine(dataset_seed(options.master_seed, ref.index, n, rep));
    const auto data = sample_dataset(dist, n, rng);
    try {
      const auto fit = fit_estimator(spec, data, options.meta,
                                     fit_seed(options.master_seed, ref.index, spec.label, n, rep));
      auto& slot = preds[b];
      for (auto p : targets) {
        const Eigen::VectorXd v = fit.effect(p).predict_comparison(X);
        slot.emplace_back(v.data(), v.data() + v.size());
      }
      ok[b] = 1;
    } catch (const DegenerateSample&) {
    } catch (const std::domain_error&) {
    }
  });

  const auto w = dist.weights();
  std::vector<MetricsRecord> out;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const TargetParameter native = targets[k];
    const TargetParameter cmp = comparison_parameter(native);
    std::vector<std::vector<double>> kept;
    for (std::size_t b = 0; b < preds.size(); ++b)
      if (ok[b]) kept.push_back(std::move(preds[b][k]));
    MetricsRecord r;
    r.distribution_id = ref.id;
    r.inter_order = dist.provenance.inter_order;
    r.tx_inter = dist.provenance.tx_inter;
    r.hte_param = hte_parameter(cmp);
    r.hte_label = hte_label(dist, r.hte_param).label;
    r.estimator = spec.label;
    r.n = n;
    r.param = cmp;
    r.log_scale = is_ratio_scale(native);
    r.reps_requested = B;
    r.reps_used = static_cast<int>(kept.size());
    if (!kept.empty()) {
      const auto m = integrated_metrics(w, dist.true_effect(cmp), kept);
      r.ibias2 = m.ibias2;
      r.ivariance = m.ivariance;
      r.imse = m.imse;
    } else {
      r.ibias2 = r.ivariance = r.imse = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Long-format CSV

inline constexpr const char* kMetricsHeader =
    "distribution_id,inter_order,tx_inter,hte_param,hte_label,estimator,n,param,iBias2,"
    "iVariance,iMSE,reps_used";

inline void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
  os << r.distribution_id << ',' << r.inter_order << ',' << (r.tx_inter ? "TRUE" : "FALSE")
     << ',' << to_string(r.hte_param) << ',' << to_string(r.hte_label) << ',' << r.estimator
     << ',' << r.n << ',' << to_string(r.param) << ',' << format_double(r.ibias2) << ','
     << format_double(r.ivariance) << ',' << format_double(r.imse) << ',' << r.reps_used
     << '\n';
}

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> records) {
  os << kMetricsHeader << '\n';
  for (const auto& r : records) write_metrics_row(os, r);
}

inline std::vector<MetricsRecord> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw FormatError("metrics CSV: unexpected header");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 12) throw FormatError("metrics CSV line " + std::to_string(lineno) + ": expected 12 fields");
    MetricsRecord r;
    try {
      r.distribution_id = f[0];
      r.inter_order = std::stoi(f[1]);
      if (f[2] != "TRUE" && f[2] != "FALSE") throw FormatError("tx_inter must be TRUE/FALSE");
      r.tx_inter = f[2] == "TRUE";
      const auto hp = parse_parameter(f[3]);
      if (!hp) throw FormatError("unknown hte_param " + f[3]);
      r.hte_param = *hp;
      if (f[4] != "High" && f[4] != "Low") throw FormatError("hte_label must be High/Low");
      r.hte_label = f[4] == "High" ? HteLevel::High : HteLevel::Low;
      r.estimator = f[5];
      r.n = static_cast<std::size_t>(std::stoull(f[6]));
      const auto pp = parse_parameter(f[7]);
      if (!pp) throw FormatError("unknown param " + f[7]);
      r.param = *pp;
      r.ibias2 = detail::parse_double(f[8], lineno);
      r.ivariance = detail::parse_double(f[9], lineno);
      r.imse = detail::parse_double(f[10], lineno);
      r.reps_used = std::stoi(f[11]);
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError("metrics CSV line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Type-7 sample quantile (linear interpolation; the median of an even count
/// is the midpoint of the two central values).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Quartiles {
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
};

inline Quartiles quartiles(const std::vector<double>& v, double scale = 1.0) {
  return {scale * quantile(v, 0.25), scale * quantile(v, 0.5), scale * quantile(v, 0.75)};
}

struct SummaryKey {
  int inter_order = 0;
  std::size_t n = 0;
  HteLevel hte = HteLevel::Low;
  std::string estimator;
  TargetParameter param = TargetParameter::ATE;
  int tx_inter = -1;  // -1 when pooled

  auto tie() const { return std::tie(inter_order, n, hte, param, tx_inter, estimator); }
  bool operator<(const SummaryKey& o) const { return tie() < o.tie(); }
};

struct SummaryRow {
  SummaryKey key;
  std::size_t count = 0;
  Quartiles ibias2, ivariance, imse;  // all x1000
};

/// Median and IQR (x1000) of each metric across distributions per stratum.
/// Records without a usable replication are skipped.
inline std::vector<SummaryRow> aggregate(std::span<const MetricsRecord> records,
                                         bool split_tx_inter = false) {
  std::map<SummaryKey, std::array<std::vector<double>, 3>> groups;
  for (const auto& r : records) {
    if (r.reps_used < 1 || !std::isfinite(r.imse)) continue;
    SummaryKey k{r.inter_order, r.n, r.hte_label, r.estimator, r.param,
                 split_tx_inter ? int(r.tx_inter) : -1};
    auto& g = groups[k];
    g[0].push_back(r.ibias2);
    g[1].push_back(r.ivariance);
    g[2].push_back(r.imse);
  }
  std::vector<SummaryRow> out;
  for (const auto& [k, g] : groups) {
    SummaryRow row;
    row.key = k;
    row.count = g[0].size();
    row.ibias2 = quartiles(g[0], 1000.0);
    row.ivariance = quartiles(g[1], 1000.0);
    row.imse = quartiles(g[2], 1000.0);
    out.push_back(row);
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows) {
  os << "inter_order,tx_inter,n,hte_label,param,estimator,count";
  for (const char* m : {"iBias2", "iVariance", "iMSE"})
    os << ',' << m << "_median," << m << "_q25," << m << "_q75";
  os << '\n';
  for (const auto& r : rows) {
    os << r.key.inter_order << ','
       << (r.key.tx_inter < 0 ? "pooled" : (r.key.tx_inter ? "TRUE" : "FALSE")) << ','
       << r.key.n << ',' << to_string(r.key.hte) << ',' << to_string(r.key.param) << ','
       << r.key.estimator << ',' << r.count;
    for (const auto* q : {&r.ibias2, &r.ivariance, &r.imse})
      os << ',' << format_double(q->median) << ',' << format_double(q->q25) << ','
         << format_double(q->q75);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Reliability curves

/// Empirical survival function t -> P(metric > t), right-continuous.
struct ReliabilityCurve {
  std::vector<double> values;    // sorted input multiset
  std::vector<double> steps;     // distinct values
  std::vector<double> survival;  // P(metric > steps[k])

  double at(double t) const {
    const auto above = values.end() - std::upper_bound(values.begin(), values.end(), t);
    return static_cast<double>(above) / static_cast<double>(values.size());
  }
};

inline ReliabilityCurve reliability_curve(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("reliability curve of an empty set");
  ReliabilityCurve c;
  std::sort(values.begin(), values.end());
  c.values = std::move(values);
  for (std::size_t i = 0; i < c.values.size(); ++i)
    if (i + 1 == c.values.size() || c.values[i + 1] != c.values[i]) {
      c.steps.push_back(c.values[i]);
      c.survival.push_back(static_cast<double>(c.values.size() - i - 1) /
                           static_cast<double>(c.values.size()));
    }
  return c;
}

// ---------------------------------------------------------------------------
// Treatment rules

/// d(x) in {0,1} evaluated on a covariate matrix.
using DecisionRule = std::function<std::vector<int>(const Eigen::MatrixXd&)>;

/// Treat when the estimated log odds ratio is negative: the outcome is
/// undesirable, so lower odds under treatment favour treating.
inline DecisionRule induce_rule(const FittedEffectModel& model) {
  if (model.param() != TargetParameter::LogOR)
    throw std::invalid_argument("induce_rule needs a LogOR model");
  return [model](const Eigen::MatrixXd& x) {
    const Eigen::VectorXd v = model.predict(x);
    std::vector<int> d(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) d[static_cast<std::size_t>(i)] = v(i) < 0.0;
    return d;
  };
}

/// sum_x P(x) P(Y = 1 | T = d(x), x); lower is better.
inline double rule_value_exact(const SyntheticDistribution& dist, std::span<const int> decisions) {
  if (decisions.size() != dist.size()) throw std::invalid_argument("rule size mismatch");
  double v = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i)
    v += dist.cells[i].p_x * dist.cells[i].outcome(decisions[i] ? 1 : 0);
  return v;
}

inline double rule_value_exact(const SyntheticDistribution& dist, const DecisionRule& rule) {
  return rule_value_exact(dist, rule(dist.covariate_matrix()));
}

inline std::vector<int> oracle_rule(const SyntheticDistribution& dist) {
  std::vector<int> d;
  for (const auto& c : dist.cells) d.push_back(c.p_y1_t1 < c.p_y1_t0);
  return d;
}

inline std::vector<int> constant_rule(const SyntheticDistribution& dist, int treat) {
  return std::vector<int>(dist.size(), treat);
}

}  // namespace drl
