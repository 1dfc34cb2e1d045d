// Conditional-effect estimators: plug-in S/T learners, the DR plug-in that
// refines arm probabilities (DR-P), and the direct DR/R learners that
// regress orthogonal pseudo-outcomes on covariates with two-fold swapped
// cross-fitting.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "drl/distribution.hpp"
#include "drl/effects.hpp"
#include "drl/errors.hpp"
#include "drl/learners.hpp"
#include "drl/random.hpp"

namespace drl {

enum class Family { PluginLR, PluginLRT, PluginSL, PluginSLT, DRPlugin, DRDirect, RDirect };

struct EstimatorSpec {
  Family family = Family::PluginLR;
  std::optional<TargetParameter> param;  // fixed for the direct learners
  std::string label;

  bool supports(TargetParameter p) const { return !param || *param == p; }
  bool uses_propensity() const {
    return family == Family::DRPlugin || family == Family::DRDirect || family == Family::RDirect;
  }
};

/// Estimator labels as printed in result tables.
inline const std::vector<EstimatorSpec>& estimator_catalog() {
  using P = TargetParameter;
  static const std::vector<EstimatorSpec> catalog = {
      {Family::PluginLR, std::nullopt, "LR"},
      {Family::PluginLRT, std::nullopt, "LR-T"},
      {Family::PluginSL, std::nullopt, "SL"},
      {Family::PluginSLT, std::nullopt, "SL-T"},
      {Family::DRPlugin, std::nullopt, "DR-P"},
      {Family::DRDirect, P::ATE, "DR-CATE"},
      {Family::DRDirect, P::LogOR, "DR-LOR"},
      {Family::DRDirect, P::LogRR, "DR-LRR"},
      {Family::RDirect, P::ATE, "R-CATE"},
      {Family::RDirect, P::LogOR, "R-LOR"},
      {Family::RDirect, P::LogRR, "R-LRR"},
      {Family::DRDirect, P::OR, "DR-OR"},
      {Family::DRDirect, P::RR, "DR-RR"},
      {Family::RDirect, P::OR, "R-OR"},
      {Family::RDirect, P::RR, "R-RR"},
  };
  return catalog;
}

inline std::optional<EstimatorSpec> find_estimator(std::string_view label) {
  for (const auto& s : estimator_catalog())
    if (s.label == label) return s;
  return std::nullopt;
}

inline std::string estimator_names() {
  std::string out;
  for (const auto& s : estimator_catalog()) {
    if (!out.empty()) out += ", ";
    out += s.label;
  }
  return out;
}

struct MetaConfig {
  TruncationPolicy policy{};
  LearnerConfig super_learner{};  // SL, SL-T, nuisances and DR-P second stage
  LearnerConfig second_stage{};   // pseudo-outcome regressions of DR/R learners
  GlmParams glm{};                // LR, LR-T
  /// Test hook: when set, cross-fitting returns these nuisances (clamped)
  /// instead of fitting models.
  std::function<NuisanceTriple(const Covariates&)> nuisance_oracle;
};

struct CrossFitPlan {
  std::vector<Eigen::Index> first;
  std::vector<Eigen::Index> second;
  std::uint64_t seed = 0;

  const std::vector<Eigen::Index>& half(int h) const { return h == 0 ? first : second; }

  void validate(std::size_t n) const {
    if (first.empty() || second.empty()) throw std::invalid_argument("cross-fit half is empty");
    std::vector<int> seen(n, 0);
    for (const auto* part : {&first, &second})
      for (auto i : *part) {
        if (i < 0 || static_cast<std::size_t>(i) >= n)
          throw std::invalid_argument("cross-fit index out of range");
        ++seen[static_cast<std::size_t>(i)];
      }
    if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; }))
      throw std::invalid_argument("cross-fit halves must partition the sample");
  }
};

/// Seeded random split into halves of sizes floor(n/2) and ceil(n/2).
inline CrossFitPlan make_plan(std::size_t n, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Engine rng = make_engine(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  CrossFitPlan p;
  p.seed = seed;
  p.first.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n / 2));
  p.second.assign(idx.begin() + static_cast<std::ptrdiff_t>(n / 2), idx.end());
  std::sort(p.first.begin(), p.first.end());
  std::sort(p.second.begin(), p.second.end());
  return p;
}

// ---------------------------------------------------------------------------
// Fitted effect models

/// Vectorized predictor over a covariate matrix (one row per point).
using BatchPredictor = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

struct ArmProbabilities {
  Eigen::VectorXd p1;
  Eigen::VectorXd p0;
};
using ArmPredictor = std::function<ArmProbabilities(const Eigen::MatrixXd&)>;

/// theta-hat(x) for one parameter. Predictions are always inside
/// feasible_range(param, policy).
class FittedEffectModel {
 public:
  FittedEffectModel(TargetParameter param, BatchPredictor predictor, Interval range)
      : param_(param), predictor_(std::move(predictor)), range_(range) {}

  TargetParameter param() const { return param_; }
  Interval range() const { return range_; }

  Eigen::VectorXd predict(const Eigen::MatrixXd& covariates) const {
    if (covariates.cols() != kNumCovariates)
      throw std::invalid_argument("effect model expects 6 covariate columns");
    Eigen::VectorXd v = predictor_(covariates);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = truncate(v(i), range_);
    return v;
  }

  /// Log scale for OR/RR, identity otherwise. Truncation happens first, so
  /// the logarithm is always finite.
  Eigen::VectorXd predict_comparison(const Eigen::MatrixXd& covariates) const {
    Eigen::VectorXd v = predict(covariates);
    if (is_ratio_scale(param_)) v = v.array().log().matrix();
    return v;
  }

 private:
  TargetParameter param_;
  BatchPredictor predictor_;
  Interval range_;
};

/// Result of one estimator fit; plug-in style fits can emit any parameter.
class EffectFit {
 public:
  static EffectFit from_arms(ArmPredictor arms, const TruncationPolicy& policy) {
    EffectFit f;
    f.arms_ = std::make_shared<ArmPredictor>(std::move(arms));
    f.policy_ = policy;
    return f;
  }
  static EffectFit from_direct(FittedEffectModel m, const TruncationPolicy& policy) {
    EffectFit f;
    f.direct_ = std::make_shared<FittedEffectModel>(std::move(m));
    f.policy_ = policy;
    return f;
  }

  bool supports(TargetParameter p) const { return arms_ || direct_->param() == p; }

  FittedEffectModel effect(TargetParameter param) const {
    if (direct_) {
      if (direct_->param() != param)
        throw std::invalid_argument("this fit targets " + std::string(to_string(direct_->param())));
      return *direct_;
    }
    auto arms = arms_;
    const Interval clamp = policy_.outcome_clamp();
    return FittedEffectModel(
        param,
        [arms, clamp, param](const Eigen::MatrixXd& x) {
          const auto ap = (*arms)(x);
          Eigen::VectorXd v(x.rows());
          for (Eigen::Index i = 0; i < x.rows(); ++i)
            v(i) = contrast(param, truncate(ap.p1(i), clamp), truncate(ap.p0(i), clamp));
          return v;
        },
        feasible_range(param, policy_));
  }

  /// Truncated arm probabilities; only for plug-in style fits.
  ArmProbabilities arm_probabilities(const Eigen::MatrixXd& x) const {
    if (!arms_) throw std::logic_error("direct fits have no arm probabilities");
    auto ap = (*arms_)(x);
    const Interval clamp = policy_.outcome_clamp();
    ap.p1 = ap.p1.unaryExpr([clamp](double v) { return truncate(v, clamp); });
    ap.p0 = ap.p0.unaryExpr([clamp](double v) { return truncate(v, clamp); });
    return ap;
  }

 private:
  std::shared_ptr<ArmPredictor> arms_;
  std::shared_ptr<FittedEffectModel> direct_;
  TruncationPolicy policy_{};
};

// ---------------------------------------------------------------------------
// Design matrices

inline Eigen::MatrixXd covariate_matrix(std::span<const Observation> data,
                                        std::span<const Eigen::Index> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kNumCovariates);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < kNumCovariates; ++j)
      x(static_cast<Eigen::Index>(i), j) =
          data[static_cast<std::size_t>(rows[i])].x[static_cast<std::size_t>(j)];
  return x;
}

inline std::vector<Eigen::Index> all_rows(std::size_t n) {
  std::vector<Eigen::Index> r(n);
  std::iota(r.begin(), r.end(), Eigen::Index{0});
  return r;
}

/// Covariates with a constant treatment column appended.
inline Eigen::MatrixXd with_treatment(const Eigen::MatrixXd& x, double t) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setConstant(t);
  return out;
}

namespace detail {

inline void require_both_levels(std::span<const Observation> data,
                                std::span<const Eigen::Index> rows, bool check_y,
                                const char* what) {
  bool t0 = false, t1 = false, y0 = false, y1 = false;
  for (auto r : rows) {
    const auto& o = data[static_cast<std::size_t>(r)];
    (o.t == 1 ? t1 : t0) = true;
    (o.y == 1 ? y1 : y0) = true;
  }
  if (!t0 || !t1) throw DegenerateSample(std::string(what) + ": a treatment arm is absent");
  if (check_y && (!y0 || !y1))
    throw DegenerateSample(std::string(what) + ": outcome has a single level");
}

inline Dataset pooled_outcome_data(std::span<const Observation> data,
                                   std::span<const Eigen::Index> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kNumCovariates + 1);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& o = data[static_cast<std::size_t>(rows[i])];
    const auto r = static_cast<Eigen::Index>(i);
    for (int j = 0; j < kNumCovariates; ++j) x(r, j) = o.x[static_cast<std::size_t>(j)];
    x(r, kNumCovariates) = o.t;
    y(r) = o.y;
  }
  return Dataset(std::move(x), std::move(y));
}

inline Dataset arm_outcome_data(std::span<const Observation> data,
                                std::span<const Eigen::Index> rows, int arm) {
  std::vector<Eigen::Index> keep;
  for (auto r : rows)
    if (data[static_cast<std::size_t>(r)].t == arm) keep.push_back(r);
  Eigen::VectorXd y(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i)
    y(static_cast<Eigen::Index>(i)) = data[static_cast<std::size_t>(keep[i])].y;
  return Dataset(covariate_matrix(data, keep), std::move(y));
}

inline Dataset propensity_data(std::span<const Observation> data,
                               std::span<const Eigen::Index> rows) {
  Eigen::VectorXd t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    t(static_cast<Eigen::Index>(i)) = data[static_cast<std::size_t>(rows[i])].t;
  return Dataset(covariate_matrix(data, rows), std::move(t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plug-in estimators

/// S-learners fit one pooled model with the treatment as a feature; T-learners
/// one model per arm. LR variants use the main-effects logistic GLM, SL
/// variants the stacked ensemble.
inline EffectFit fit_plugin_arms(Family family, std::span<const Observation> data,
                                 const MetaConfig& config, std::uint64_t seed) {
  const auto rows = all_rows(data.size());
  detail::require_both_levels(data, rows, true, "plug-in");
  const bool stacked = family == Family::PluginSL || family == Family::PluginSLT;
  auto fit = [&](const Dataset& d, std::uint64_t s) -> Regressor {
    if (stacked) return config.super_learner.fit(d, Loss::Log, s);
    return fit_glm(d, Loss::Log, config.glm);
  };

  ArmPredictor arms;
  if (family == Family::PluginLR || family == Family::PluginSL) {
    auto model = std::make_shared<Regressor>(
        fit(detail::pooled_outcome_data(data, rows), derive_seed(seed, {0})));
    arms = [model](const Eigen::MatrixXd& x) {
      return ArmProbabilities{model->predict(with_treatment(x, 1.0)),
                              model->predict(with_treatment(x, 0.0))};
    };
  } else if (family == Family::PluginLRT || family == Family::PluginSLT) {
    auto m1 = std::make_shared<Regressor>(
        fit(detail::arm_outcome_data(data, rows, 1), derive_seed(seed, {1})));
    auto m0 = std::make_shared<Regressor>(
        fit(detail::arm_outcome_data(data, rows, 0), derive_seed(seed, {2})));
    arms = [m1, m0](const Eigen::MatrixXd& x) {
      return ArmProbabilities{m1->predict(x), m0->predict(x)};
    };
  } else {
    throw std::invalid_argument("fit_plugin_arms: not a plug-in family");
  }
  return EffectFit::from_arms(std::move(arms), config.policy);
}

inline FittedEffectModel fit_plugin(const EstimatorSpec& spec, TargetParameter param,
                                    std::span<const Observation> data, const MetaConfig& config,
                                    std::uint64_t seed) {
  return fit_plugin_arms(spec.family, data, config, seed).effect(param);
}

// ---------------------------------------------------------------------------
// Cross-fitting

/// Out-of-fold nuisances: each observation gets (q1, q0, pi) from models
/// trained on the opposite half, truncated by the policy. The outcome model
/// is a pooled (treatment-as-feature) super learner.
inline std::vector<NuisanceTriple> crossfit_nuisances(std::span<const Observation> data,
                                                      const CrossFitPlan& plan,
                                                      const MetaConfig& config,
                                                      std::uint64_t seed) {
  plan.validate(data.size());
  std::vector<NuisanceTriple> out(data.size());
  if (config.nuisance_oracle) {
    for (std::size_t i = 0; i < data.size(); ++i)
      out[i] = config.policy.apply(config.nuisance_oracle(data[i].x));
    return out;
  }
  for (int h = 0; h < 2; ++h) {
    const auto& train = plan.half(1 - h);
    const auto& target = plan.half(h);
    detail::require_both_levels(data, train, true, "cross-fit half");
    const auto outcome = config.super_learner.fit(detail::pooled_outcome_data(data, train),
                                                  Loss::Log, derive_seed(seed, {10, std::uint64_t(h)}));
    const auto propensity = config.super_learner.fit(detail::propensity_data(data, train),
                                                     Loss::Log, derive_seed(seed, {11, std::uint64_t(h)}));
    const Eigen::MatrixXd x = covariate_matrix(data, target);
    const Eigen::VectorXd q1 = outcome.predict(with_treatment(x, 1.0));
    const Eigen::VectorXd q0 = outcome.predict(with_treatment(x, 0.0));
    const Eigen::VectorXd pi = propensity.predict(x);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out[static_cast<std::size_t>(target[i])] = config.policy.apply({q1(k), q0(k), pi(k)});
    }
  }
  return out;
}

namespace detail {

/// Second-stage regressions of `response` on X, one per half, averaged.
inline BatchPredictor swapped_second_stage(std::span<const Observation> data,
                                           const CrossFitPlan& plan,
                                           const std::vector<double>& response,
                                           const std::vector<double>& weight,
                                           const LearnerConfig& learner, std::uint64_t seed) {
  std::array<std::shared_ptr<Regressor>, 2> models;
  for (int h = 0; h < 2; ++h) {
    const auto& rows = plan.half(h);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size())), w(y.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      y(static_cast<Eigen::Index>(i)) = response[static_cast<std::size_t>(rows[i])];
      w(static_cast<Eigen::Index>(i)) = weight[static_cast<std::size_t>(rows[i])];
    }
    // mean-one weights so learner regularization does not depend on their scale
    if (const double m = w.mean(); m > 0.0) w /= m;
    models[static_cast<std::size_t>(h)] = std::make_shared<Regressor>(learner.fit(
        Dataset(covariate_matrix(data, rows), std::move(y), std::move(w)), Loss::Squared,
        derive_seed(seed, {20, std::uint64_t(h)})));
  }
  return [models](const Eigen::MatrixXd& x) {
    return Eigen::VectorXd(0.5 * (models[0]->predict(x) + models[1]->predict(x)));
  };
}

}  // namespace detail

/// DR-P: regress each arm's AIPW pseudo-outcome on X, average the swapped
/// fits, re-truncate the refined probabilities and plug them in.
inline EffectFit fit_dr_plugin_arms(std::span<const Observation> data, const CrossFitPlan& plan,
                                    const MetaConfig& config, std::uint64_t seed) {
  const auto eta = crossfit_nuisances(data, plan, config, seed);
  std::vector<double> phi1(data.size()), phi0(data.size()), ones(data.size(), 1.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    phi1[i] = arm_pseudo_outcome(1, data[i], eta[i]);
    phi0[i] = arm_pseudo_outcome(0, data[i], eta[i]);
  }
  auto m1 = detail::swapped_second_stage(data, plan, phi1, ones, config.super_learner,
                                         derive_seed(seed, {30}));
  auto m0 = detail::swapped_second_stage(data, plan, phi0, ones, config.super_learner,
                                         derive_seed(seed, {31}));
  return EffectFit::from_arms(
      [m1, m0](const Eigen::MatrixXd& x) { return ArmProbabilities{m1(x), m0(x)}; },
      config.policy);
}

inline FittedEffectModel fit_dr_plugin(std::span<const Observation> data, const CrossFitPlan& plan,
                                       const MetaConfig& config, TargetParameter param,
                                       std::uint64_t seed) {
  return fit_dr_plugin_arms(data, plan, config, seed).effect(param);
}

/// Direct learner: regress phi_param(Z; eta-hat) on X with out-of-fold
/// nuisances. `weighted` selects the R-learner overlap weights pi(1 - pi).
inline FittedEffectModel fit_direct(std::span<const Observation> data, const CrossFitPlan& plan,
                                    const MetaConfig& config, TargetParameter param,
                                    bool weighted, std::uint64_t seed) {
  const auto eta = crossfit_nuisances(data, plan, config, seed);
  std::vector<double> phi(data.size()), w(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    phi[i] = pseudo_outcome(param, data[i], eta[i]);
    w[i] = weighted ? rlearner_weight(eta[i].pi) : 1.0;
  }
  return FittedEffectModel(
      param,
      detail::swapped_second_stage(data, plan, phi, w, config.second_stage,
                                   derive_seed(seed, {40})),
      feasible_range(param, config.policy));
}

inline FittedEffectModel fit_dr_direct(std::span<const Observation> data, const CrossFitPlan& plan,
                                       const MetaConfig& config, TargetParameter param,
                                       std::uint64_t seed) {
  return fit_direct(data, plan, config, param, false, seed);
}

inline FittedEffectModel fit_r_direct(std::span<const Observation> data, const CrossFitPlan& plan,
                                      const MetaConfig& config, TargetParameter param,
                                      std::uint64_t seed) {
  return fit_direct(data, plan, config, param, true, seed);
}

/// Fits `spec` once. `param` picks the target of direct learners; plug-in
/// style fits ignore it and serve every parameter.
inline EffectFit fit_estimator(const EstimatorSpec& spec, std::span<const Observation> data,
                               const MetaConfig& config, std::uint64_t seed) {
  switch (spec.family) {
    case Family::PluginLR:
    case Family::PluginLRT:
    case Family::PluginSL:
    case Family::PluginSLT:
      return fit_plugin_arms(spec.family, data, config, seed);
    case Family::DRPlugin:
      return fit_dr_plugin_arms(data, make_plan(data.size(), derive_seed(seed, {1})), config,
                                seed);
    case Family::DRDirect:
    case Family::RDirect:
      if (!spec.param) throw std::invalid_argument("direct learner needs a target parameter");
      return EffectFit::from_direct(
          fit_direct(data, make_plan(data.size(), derive_seed(seed, {1})), config, *spec.param,
                     spec.family == Family::RDirect, seed),
          config.policy);
  }
  throw std::invalid_argument("unknown estimator family");
}

}  // namespace drl
