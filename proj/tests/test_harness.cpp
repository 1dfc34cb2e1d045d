#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "drl/harness.hpp"
#include "fixtures.hpp"

using namespace drl;
using namespace drl::fixtures;
using P = TargetParameter;

namespace {

SyntheticDistribution four_cells(std::vector<double> px, std::vector<double> y1, std::vector<double> y0) {
  SyntheticDistribution d;
  for (std::size_t i = 0; i < px.size(); ++i) {
    Cell c;
    c.x[0] = static_cast<double>(i & 1);
    c.x[1] = static_cast<double>((i >> 1) & 1);
    c.p_x = px[i];
    c.p_t1 = 0.5;
    c.p_y1_t1 = y1[i];
    c.p_y1_t0 = y0[i];
    d.cells.push_back(c);
  }
  return d;
}

MetricsRecord record(std::string est, double imse, std::size_t n = 200) {
  MetricsRecord r;
  r.distribution_id = "o1_T_000";
  r.inter_order = 1;
  r.tx_inter = true;
  r.estimator = std::move(est);
  r.n = n;
  r.param = P::LogOR;
  r.hte_param = P::OR;
  r.ibias2 = imse / 4;
  r.ivariance = imse - imse / 4;
  r.imse = imse;
  r.reps_used = r.reps_requested = 2;
  return r;
}

}  // namespace

TEST(Sampling, CellFrequenciesMatchLaw) {
  const auto d = logistic_truth(0.5, 1);
  Engine rng = make_engine(2);
  const std::size_t n = 100000;
  const auto data = sample_dataset(d, n, rng);
  std::map<Covariates, double> count;
  for (const auto& o : data) count[o.x] += 1.0;
  int outside = 0;
  for (const auto& c : d.cells) {
    const double se = std::sqrt(n * c.p_x * (1 - c.p_x));
    outside += std::abs(count[c.x] - n * c.p_x) > 4 * se;
  }
  EXPECT_EQ(outside, 0);
  // treatment and outcome frequencies within cells
  double t1 = 0, expect_t1 = 0;
  for (const auto& o : data) t1 += o.t;
  for (const auto& c : d.cells) expect_t1 += n * c.p_x * c.p_t1;
  EXPECT_LT(std::abs(t1 - expect_t1), 4 * std::sqrt(n * 0.25));
}

TEST(Sampling, BothLevelsAlwaysPresentAndDeterministic) {
  // a law where a constant T is common at n = 5
  auto d = four_cells({0.25, 0.25, 0.25, 0.25}, {0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5});
  for (auto& c : d.cells) c.p_t1 = 0.9;
  for (int k = 0; k < 200; ++k) {
    Engine rng = make_engine(derive_seed(3, {std::uint64_t(k)}));
    const auto data = sample_dataset(d, 5, rng);
    int t = 0, y = 0;
    for (const auto& o : data) {
      t += o.t;
      y += o.y;
    }
    EXPECT_TRUE(t > 0 && t < 5);
    EXPECT_TRUE(y > 0 && y < 5);
  }
  Engine a = make_engine(dataset_seed(9, 1, 50, 3)), b = make_engine(dataset_seed(9, 1, 50, 3));
  const auto da = sample_dataset(d, 50, a), db = sample_dataset(d, 50, b);
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].x, db[i].x);
    EXPECT_EQ(da[i].t, db[i].t);
    EXPECT_EQ(da[i].y, db[i].y);
  }
}

TEST(Sampling, PathologicalLawIsReported) {
  auto d = four_cells({0.25, 0.25, 0.25, 0.25}, {0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5});
  for (auto& c : d.cells) c.p_t1 = 1e-12;
  Engine rng = make_engine(4);
  EXPECT_THROW(sample_dataset(d, 10, rng), PathologicalDistribution);
  EXPECT_THROW(sample_dataset(d, 1, rng), std::invalid_argument);
}

TEST(Metrics, PerfectEstimatorScoresZero) {
  const std::vector<double> px{0.2, 0.3, 0.5}, truth{1.0, -0.5, 0.25};
  const auto m = integrated_metrics(px, truth, {truth, truth, truth});
  EXPECT_EQ(m.ibias2, 0.0);
  EXPECT_EQ(m.ivariance, 0.0);
  EXPECT_EQ(m.imse, 0.0);
}

TEST(Metrics, AlternatingNoiseIsPureVariance) {
  const std::vector<double> px{0.2, 0.3, 0.5}, truth{1.0, -0.5, 0.25};
  const double delta = 0.3;
  std::vector<std::vector<double>> preds;
  for (int b = 0; b < 6; ++b) {
    auto p = truth;
    for (auto& v : p) v += (b % 2 ? delta : -delta);
    preds.push_back(p);
  }
  const auto m = integrated_metrics(px, truth, preds);
  EXPECT_NEAR(m.ibias2, 0.0, 1e-15);
  EXPECT_NEAR(m.ivariance, delta * delta, 1e-15);
  EXPECT_NEAR(m.imse, delta * delta, 1e-15);
}

TEST(Metrics, DecompositionHoldsOnRandomPredictions) {
  Engine rng = make_engine(5);
  std::normal_distribution<double> g(0, 1);
  for (int k = 0; k < 100; ++k) {
    auto px = sample_covariate_distribution(rng, 7);
    std::vector<double> truth(7);
    for (auto& v : truth) v = g(rng);
    std::vector<std::vector<double>> preds(5, std::vector<double>(7));
    for (auto& p : preds)
      for (auto& v : p) v = g(rng) + 0.5;
    const auto m = integrated_metrics(px, truth, preds);
    EXPECT_GE(m.ibias2, 0.0);
    EXPECT_GE(m.ivariance, 0.0);
    EXPECT_LE(std::abs(m.imse - m.ibias2 - m.ivariance), 1e-12 * std::max(1.0, m.imse));
  }
}

TEST(Evaluate, RecordsAreDeterministicAndConsistent) {
  const auto d = logistic_truth(0.8, 6);
  const DistributionRef ref{"toy", 3, &d};
  EvalOptions opt;
  opt.meta = fast_config();
  opt.master_seed = 11;
  const std::vector<P> params{P::ATE, P::OR, P::LogOR};
  const auto a = evaluate(ref, *find_estimator("LR"), params, 300, 3, opt);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[1].param, P::LogOR);  // ratio output compared on the log scale
  EXPECT_TRUE(a[1].log_scale);
  EXPECT_EQ(a[1].hte_param, P::OR);
  // OR and LogOR rows coincide because both are compared as log odds ratios
  EXPECT_DOUBLE_EQ(a[1].imse, a[2].imse);
  for (const auto& r : a) {
    EXPECT_EQ(r.reps_used, 3);
    EXPECT_TRUE(r.identity_holds());
  }
  opt.jobs = 2;
  const auto b = evaluate(ref, *find_estimator("LR"), params, 300, 3, opt);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].imse, b[k].imse);
  const auto direct = evaluate(ref, *find_estimator("DR-LOR"), params, 300, 2, opt);
  ASSERT_EQ(direct.size(), 1u);
  EXPECT_EQ(direct[0].param, P::LogOR);
}

TEST(Evaluate, WellSpecifiedFitImprovesWithSampleSize) {
  // constant-effect law where the main-effects logistic S-learner is well
  // specified; bias is small and shrinks with n
  const auto d = logistic_truth(0.6, 7);
  const DistributionRef ref{"toy", 0, &d};
  EvalOptions opt;
  opt.master_seed = 12;
  const std::vector<P> params{P::LogOR};
  const auto small = evaluate(ref, *find_estimator("LR"), params, 500, 8, opt)[0];
  const auto large = evaluate(ref, *find_estimator("LR"), params, 8000, 8, opt)[0];
  EXPECT_LT(large.imse, small.imse);
}

TEST(CsvIo, MetricsRoundTrip) {
  std::vector<MetricsRecord> rs{record("LR", 0.5), record("DR-LOR", 0.25, 500)};
  rs[1].hte_label = HteLevel::High;
  std::stringstream ss;
  write_metrics_csv(ss, rs);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kMetricsHeader);
  const auto back = read_metrics_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].estimator, "DR-LOR");
  EXPECT_EQ(back[1].n, 500u);
  EXPECT_EQ(back[1].hte_label, HteLevel::High);
  EXPECT_EQ(back[0].imse, 0.5);
  EXPECT_EQ(back[0].param, P::LogOR);
  std::istringstream bad(std::string(kMetricsHeader) + "\nx,1,TRUE,OR,High,LR,200,Bogus,0,0,0,1\n");
  EXPECT_THROW(read_metrics_csv(bad), FormatError);
}

TEST(Aggregate, QuantileConventions) {
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.75), 7.0);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Aggregate, SingleRecordAndMidpoint) {
  const std::vector<MetricsRecord> one{record("LR", 0.002)};
  const auto rows = aggregate(one);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].imse.median, 2.0);
  EXPECT_DOUBLE_EQ(rows[0].imse.q25, 2.0);
  EXPECT_DOUBLE_EQ(rows[0].imse.q75, 2.0);
  std::vector<MetricsRecord> two{record("LR", 0.001), record("LR", 0.003), record("SL", 0.001)};
  two[2].n = 500;
  const auto r2 = aggregate(two);
  ASSERT_EQ(r2.size(), 2u);
  EXPECT_DOUBLE_EQ(r2[0].imse.median, 2.0);
  EXPECT_EQ(r2[0].count, 2u);
  // NaN records (no usable reps) are skipped
  auto nan = record("LR", 0.001);
  nan.reps_used = 0;
  nan.imse = std::numeric_limits<double>::quiet_NaN();
  two.push_back(nan);
  EXPECT_EQ(aggregate(two)[0].count, 2u);
  // tx_inter split
  two[1].tx_inter = false;
  EXPECT_EQ(aggregate(two, true).size(), 3u);
}

TEST(Reliability, EmpiricalSurvival) {
  const auto c = reliability_curve({3, 1, 2});
  EXPECT_DOUBLE_EQ(c.at(0.5), 1.0);
  EXPECT_DOUBLE_EQ(c.at(1.5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.at(3.0), 0.0);
  EXPECT_EQ(c.values, (std::vector<double>{1, 2, 3}));
  for (std::size_t k = 1; k < c.survival.size(); ++k) EXPECT_LE(c.survival[k], c.survival[k - 1]);
  const auto flat = reliability_curve({4, 4, 4});
  EXPECT_EQ(flat.steps.size(), 1u);
  EXPECT_EQ(flat.survival[0], 0.0);
  // a uniformly smaller sample is dominated pointwise
  const auto worse = reliability_curve({2, 3, 4});
  for (double t : {0.0, 1.0, 1.5, 2.5, 3.5, 5.0}) EXPECT_LE(c.at(t), worse.at(t));
  EXPECT_THROW(reliability_curve({}), std::invalid_argument);
}

TEST(Rules, InducedRuleSignConvention) {
  const auto d = four_cells({0.1, 0.2, 0.3, 0.4}, {0.2, 0.6, 0.5, 0.3}, {0.4, 0.3, 0.5, 0.7});
  const FittedEffectModel zero(P::LogOR, [](const Eigen::MatrixXd& x) { return Eigen::VectorXd::Zero(x.rows()); },
                               {-6, 6});
  EXPECT_EQ(induce_rule(zero)(d.covariate_matrix()), std::vector<int>(4, 0));
  // oracle effect surface gives the pointwise oracle rule
  auto truth = d.true_effect(P::LogOR);
  const Eigen::MatrixXd x = d.covariate_matrix();
  const FittedEffectModel oracle(
      P::LogOR, [truth](const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(truth.data(), m.rows()).eval(); },
      {-6, 6});
  const auto rule = induce_rule(oracle)(x);
  EXPECT_EQ(rule, oracle_rule(d));
  // a sign-preserving increasing transform induces the same rule
  const FittedEffectModel cubed(
      P::LogOR,
      [truth](const Eigen::MatrixXd& m) {
        return Eigen::Map<const Eigen::VectorXd>(truth.data(), m.rows()).array().cube().matrix().eval();
      },
      {-6, 6});
  EXPECT_EQ(induce_rule(cubed)(x), rule);
  const FittedEffectModel ate(P::ATE, [](const Eigen::MatrixXd& m) { return Eigen::VectorXd::Zero(m.rows()); },
                              {-1, 1});
  EXPECT_THROW(induce_rule(ate), std::invalid_argument);
}

TEST(Rules, ExactValueAndOracleOptimality) {
  const auto d = four_cells({0.1, 0.2, 0.3, 0.4}, {0.2, 0.6, 0.5, 0.3}, {0.4, 0.3, 0.55, 0.7});
  double treat_all = 0;
  for (const auto& c : d.cells) treat_all += c.p_x * c.p_y1_t1;
  EXPECT_DOUBLE_EQ(rule_value_exact(d, constant_rule(d, 1)), treat_all);
  // brute force over all 16 rules
  double best = 1e9;
  for (int mask = 0; mask < 16; ++mask) {
    std::vector<int> r(4);
    for (int i = 0; i < 4; ++i) r[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    best = std::min(best, rule_value_exact(d, r));
  }
  EXPECT_DOUBLE_EQ(rule_value_exact(d, oracle_rule(d)), best);
  EXPECT_THROW(rule_value_exact(d, std::vector<int>(3, 0)), std::invalid_argument);
}
