#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "drl/learners.hpp"

using namespace drl;

namespace {

const GlmModel& glm_of(const Model& m) { return std::get<GlmModel>(m.impl()); }

// 5 binary columns plus a numeric grid column, as in the simulation schema.
Eigen::MatrixXd schema_features(std::mt19937_64& rng, Eigen::Index n) {
  std::bernoulli_distribution b(0.5);
  std::uniform_int_distribution<int> g(0, 99);
  Eigen::MatrixXd x(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < 5; ++j) x(i, j) = b(rng);
    x(i, 5) = g(rng) / 99.0;
  }
  return x;
}

Dataset logistic_draw(std::mt19937_64& rng, Eigen::Index n, const Eigen::VectorXd& beta) {
  Eigen::MatrixXd x = schema_features(rng, n);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = u(rng) < sigmoid(beta(0) + x.row(i).dot(beta.tail(6)));
  return Dataset(x, y);
}

}  // namespace

TEST(Dataset, RejectsBadWeightsAndLengths) {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  EXPECT_THROW(Dataset(x, Eigen::VectorXd::Zero(2)), std::invalid_argument);
  EXPECT_THROW(Dataset(x, Eigen::VectorXd::Zero(3), Eigen::Vector3d(1, -1, 1)), std::invalid_argument);
  EXPECT_THROW(Dataset(x, Eigen::VectorXd::Zero(3), Eigen::Vector3d(1, NAN, 1)), std::invalid_argument);
}

TEST(Logistic, NullModelPredictsMean) {
  Eigen::MatrixXd x(8, 1);
  x << 0, 0, 0, 0, 1, 1, 1, 1;
  Eigen::VectorXd y(8);
  y << 0, 1, 0, 1, 0, 1, 1, 0;
  const auto m = fit_logistic(Dataset(x, y));
  EXPECT_TRUE(glm_of(m).converged);
  EXPECT_NEAR(glm_of(m).coef(1), 0.0, 1e-6);
  const auto p = m.predict(x);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p(i), 0.5, 1e-8);
}

TEST(Logistic, RecoversTreatmentCoefficient) {
  // y ~ logistic(-0.4 + 0.7 t + main effects); t in the last column
  std::mt19937_64 rng(7);
  const Eigen::Index n = 100000;
  Eigen::MatrixXd x = schema_features(rng, n);
  Eigen::MatrixXd xt(n, 7);
  xt.leftCols(6) = x;
  std::bernoulli_distribution t(0.5);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::VectorXd y(n);
  const double beta[7] = {0.3, -0.2, 0.1, 0.0, 0.4, -0.5, 0.7};
  for (Eigen::Index i = 0; i < n; ++i) {
    xt(i, 6) = t(rng);
    double z = -0.4;
    for (int j = 0; j < 7; ++j) z += beta[j] * xt(i, j);
    y(i) = u(rng) < sigmoid(z);
  }
  const auto m = fit_logistic(Dataset(xt, y));
  EXPECT_NEAR(glm_of(m).coef(7), 0.7, 0.05);
}

TEST(Logistic, SeparableDataStaysFinite) {
  Eigen::MatrixXd x(4, 1);
  x << -2, -1, 1, 2;
  Eigen::VectorXd y(4);
  y << 0, 0, 1, 1;
  const auto m = fit_logistic(Dataset(x, y));
  EXPECT_TRUE(glm_of(m).coef.allFinite());
  const auto p = m.predict(x);
  EXPECT_LT(p(0), 0.5);
  EXPECT_GT(p(3), 0.5);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_GT(p(i), 0.0);
    EXPECT_LT(p(i), 1.0);
  }
}

TEST(Logistic, NonConvergenceIsFlagged) {
  std::mt19937_64 rng(9);
  Eigen::VectorXd beta(7);
  beta << 0.1, 1, -1, 0.5, 0.2, 0, 2;
  const auto data = logistic_draw(rng, 500, beta);
  GlmParams p;
  p.max_iterations = 1;
  EXPECT_FALSE(glm_of(fit_logistic(data, p)).converged);
  EXPECT_TRUE(glm_of(fit_logistic(data)).converged);
}

TEST(Logistic, IntegerWeightsEqualDuplication) {
  std::mt19937_64 rng(12);
  Eigen::VectorXd beta(7);
  beta << -0.3, 0.5, 0, -0.5, 0.3, 0.2, 1.0;
  const auto data = logistic_draw(rng, 300, beta);
  std::uniform_int_distribution<int> k(0, 3);
  Eigen::VectorXd w(data.rows());
  std::vector<Eigen::Index> dup;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    w(i) = k(rng);
    for (int r = 0; r < w(i); ++r) dup.push_back(i);
  }
  const auto a = fit_logistic(data.with_weight(w));
  const auto b = fit_logistic(data.subset(dup));
  EXPECT_LT((glm_of(a).coef - glm_of(b).coef).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Glm, SquaredLossIsLeastSquares) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> e(0, 0.1);
  Eigen::MatrixXd x = schema_features(rng, 400);
  Eigen::VectorXd y(400);
  for (Eigen::Index i = 0; i < 400; ++i) y(i) = 1.0 + 2.0 * x(i, 5) - x(i, 0) + e(rng);
  const auto m = fit_glm(Dataset(x, y), Loss::Squared);
  Eigen::MatrixXd d(400, 7);
  d.col(0).setOnes();
  d.rightCols(6) = x;
  const Eigen::VectorXd ols = d.colPivHouseholderQr().solve(y);
  EXPECT_LT((glm_of(m).coef - ols).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Boosting, ConstantResponse) {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd x = schema_features(rng, 50);
  for (double c : {0.3, -2.0}) {
    const auto m = fit_boosted_stumps(Dataset(x, Eigen::VectorXd::Constant(50, c)), Loss::Squared);
    const auto p = m.predict(x);
    for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p(i), c, 1e-12);
  }
  const auto m = fit_boosted_stumps(Dataset(x, Eigen::VectorXd::Ones(50)), Loss::Log);
  const auto p = m.predict(x);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    EXPECT_GT(p(i), 0.99);
    EXPECT_LT(p(i), 1.0);
  }
}

TEST(Boosting, FitsStepFunction) {
  std::mt19937_64 rng(2);
  Eigen::MatrixXd x = schema_features(rng, 1000);
  Eigen::VectorXd y(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) y(i) = x(i, 5) > 0.4 ? 1.0 : -1.0;
  const double var = (y.array() - y.mean()).square().mean();
  const auto m = fit_boosted_stumps(Dataset(x, y), Loss::Squared);
  const double mse = (m.predict(x) - y).squaredNorm() / 1000.0;
  EXPECT_LT(mse, 0.1 * var);
}

TEST(Boosting, ZeroWeightRowsAreIgnored) {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd x = schema_features(rng, 300);
  std::normal_distribution<double> e(0, 1);
  Eigen::VectorXd y(300), w = Eigen::VectorXd::Ones(300);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < 300; ++i) {
    y(i) = x(i, 5) + x(i, 1) + e(rng);
    if (i % 4 == 0) w(i) = 0.0;
    else keep.push_back(i);
  }
  const Dataset full(x, y, w);
  for (auto loss : {Loss::Squared}) {
    const auto a = fit_boosted_stumps(full, loss);
    const auto b = fit_boosted_stumps(full.subset(keep), loss);
    EXPECT_LT((a.predict(x) - b.predict(x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Boosting, IntegerWeightsEqualDuplication) {
  std::mt19937_64 rng(13);
  Eigen::VectorXd beta(7);
  beta << -0.3, 0.5, 0, -0.5, 0.3, 0.2, 1.0;
  const auto data = logistic_draw(rng, 300, beta);
  std::uniform_int_distribution<int> k(0, 3);
  Eigen::VectorXd w(data.rows());
  std::vector<Eigen::Index> dup;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    w(i) = k(rng);
    for (int r = 0; r < w(i); ++r) dup.push_back(i);
  }
  for (auto loss : {Loss::Squared, Loss::Log}) {
    const auto a = fit_boosted_stumps(data.with_weight(w), loss);
    const auto b = fit_boosted_stumps(data.subset(dup), loss);
    EXPECT_LT((a.predict(data.features()) - b.predict(data.features())).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Boosting, LogLossPredictionsInUnitInterval) {
  std::mt19937_64 rng(14);
  Eigen::VectorXd beta(7);
  beta << 0, 3, -3, 2, 0, 0, 4;
  const auto data = logistic_draw(rng, 500, beta);
  const auto p = fit_boosted_stumps(data, Loss::Log).predict(data.features());
  EXPECT_GT(p.minCoeff(), 0.0);
  EXPECT_LT(p.maxCoeff(), 1.0);
}

TEST(Boosting, RejectsTinyDataAndBadParams) {
  std::mt19937_64 rng(15);
  Eigen::MatrixXd x = schema_features(rng, 9);
  EXPECT_THROW(fit_boosted_stumps(Dataset(x, Eigen::VectorXd::Zero(9)), Loss::Squared), DegenerateSample);
  BoostingParams bad;
  bad.depth = 3;
  EXPECT_THROW(fit_boosted_stumps(Dataset(schema_features(rng, 20), Eigen::VectorXd::Zero(20)),
                                  Loss::Squared, bad),
               std::invalid_argument);
}

TEST(Kernel, TinyBandwidthInterpolates) {
  std::mt19937_64 rng(5);
  Eigen::MatrixXd x = schema_features(rng, 40);
  std::normal_distribution<double> e(0, 1);
  Eigen::VectorXd y(40);
  for (auto& v : y) v = e(rng);
  KernelParams kp;
  kp.bandwidth = 1e-4;
  kp.hamming_weight = 50.0;
  const auto m = fit_kernel_smoother(Dataset(x, y), Loss::Squared, kp);
  // rows that share all features with another row average with it
  for (Eigen::Index i = 0; i < 40; ++i) {
    double s = 0;
    int c = 0;
    for (Eigen::Index j = 0; j < 40; ++j)
      if (x.row(j) == x.row(i)) {
        s += y(j);
        ++c;
      }
    EXPECT_NEAR(m.predict(x.row(i))(0), s / c, 1e-8);
  }
}

TEST(Kernel, BeatsConstantOnLinearTarget) {
  std::mt19937_64 rng(6);
  Eigen::MatrixXd x = schema_features(rng, 800);
  std::normal_distribution<double> e(0, 0.2);
  Eigen::VectorXd y(800);
  for (Eigen::Index i = 0; i < 800; ++i) y(i) = 2.0 * x(i, 5) + 0.5 * x(i, 0) + e(rng);
  const auto m = fit_kernel_smoother(Dataset(x, y), Loss::Squared);
  const double mse = (m.predict(x) - y).squaredNorm() / 800.0;
  const double var = (y.array() - y.mean()).square().mean();
  EXPECT_LT(mse, var);
}

TEST(Kernel, EqualFeaturesGiveWeightedMean) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 6);
  x.col(5).setConstant(0.3);
  Eigen::VectorXd y(6), w(6);
  y << 1, 2, 3, 4, 5, 6;
  w << 1, 0, 2, 1, 0, 1;
  const auto m = fit_kernel_smoother(Dataset(x, y, w), Loss::Squared);
  EXPECT_NEAR(m.predict(x.row(0))(0), (1 + 6 + 4 + 6) / 5.0, 1e-12);
}

TEST(Kernel, RejectsNonPositiveBandwidth) {
  KernelParams kp;
  kp.bandwidth = 0.0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 6);
  EXPECT_THROW(fit_kernel_smoother(Dataset(x, Eigen::VectorXd::Zero(6)), Loss::Squared, kp),
               std::invalid_argument);
}

TEST(Model, SchemaMismatchThrows) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 3);
  const auto m = fit_glm(Dataset(x, Eigen::VectorXd::Random(20)), Loss::Squared);
  EXPECT_THROW(m.predict(Eigen::MatrixXd::Zero(2, 4)), std::invalid_argument);
}

TEST(Simplex, ProjectionProperties) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 2);
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd v(5);
    for (auto& e : v) e = n(rng);
    const auto p = project_to_simplex(v);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
  EXPECT_TRUE(project_to_simplex(Eigen::Vector3d(0.2, 0.3, 0.5)).isApprox(Eigen::Vector3d(0.2, 0.3, 0.5)));
}

TEST(Stack, SingleLearnerGetsFullWeight) {
  std::mt19937_64 rng(10);
  Eigen::VectorXd beta(7);
  beta << 0, 1, 0, 0, 0, 0, 1;
  const auto data = logistic_draw(rng, 200, beta);
  const std::vector<LearnerSpec> lib{{LearnerKind::LogisticMainEffects}};
  const auto s = fit_stack(data, lib, Loss::Log, 5, 1);
  ASSERT_EQ(s.weights.size(), 1);
  EXPECT_DOUBLE_EQ(s.weights(0), 1.0);
}

TEST(Stack, DuplicateMembersMatchSingleRisk) {
  std::mt19937_64 rng(11);
  Eigen::VectorXd beta(7);
  beta << 0, 1, 0, -1, 0, 0, 1;
  const auto data = logistic_draw(rng, 300, beta);
  const std::vector<LearnerSpec> one{{LearnerKind::LogisticMainEffects}};
  const std::vector<LearnerSpec> two{{LearnerKind::LogisticMainEffects}, {LearnerKind::LogisticMainEffects}};
  const auto a = fit_stack(data, one, Loss::Log, 5, 3);
  const auto b = fit_stack(data, two, Loss::Log, 5, 3);
  EXPECT_NEAR(b.weights.sum(), 1.0, 1e-12);
  EXPECT_NEAR(a.ensemble_cv_risk, b.ensemble_cv_risk, 1e-12);
}

TEST(Stack, CorrectModelClassDominates) {
  std::mt19937_64 rng(12);
  Eigen::VectorXd beta(7);
  beta << -0.5, 1.0, -0.8, 0.6, 0.0, 0.3, 2.0;
  const auto data = logistic_draw(rng, 20000, beta);
  const std::vector<LearnerSpec> lib{{LearnerKind::LogisticMainEffects}, {LearnerKind::KernelSmoother}};
  const auto s = fit_stack(data, lib, Loss::Log, 5, 4);
  EXPECT_GE(s.weights(0), 0.9);
}

TEST(Stack, EnsembleNeverWorseThanBestMember) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> e(0, 0.5);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::MatrixXd x = schema_features(rng, 400);
    Eigen::VectorXd y(400);
    for (Eigen::Index i = 0; i < 400; ++i) y(i) = std::sin(6 * x(i, 5)) + x(i, 0) * x(i, 1) + e(rng);
    const auto s = fit_stack(Dataset(x, y), default_library(), Loss::Squared, 5, rep);
    EXPECT_LE(s.ensemble_cv_risk, s.cv_risks.minCoeff() + 1e-9);
    EXPECT_NEAR(s.weights.sum(), 1.0, 1e-9);
    EXPECT_GE(s.weights.minCoeff(), 0.0);
    // prediction is the convex combination of members
    Eigen::VectorXd manual = Eigen::VectorXd::Zero(400);
    for (std::size_t j = 0; j < s.members.size(); ++j) manual += s.weights(Eigen::Index(j)) * s.members[j].predict(x);
    EXPECT_LT((s.predict(x) - manual).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Stack, DeterministicAndRowOrderInvariantFolds) {
  std::mt19937_64 rng(14);
  Eigen::VectorXd beta(7);
  beta << 0, 1, 0, -1, 0, 0, 1;
  const auto data = logistic_draw(rng, 200, beta);
  const auto a = fit_stack(data, default_library(), Loss::Log, 5, 9);
  const auto b = fit_stack(data, default_library(), Loss::Log, 5, 9);
  EXPECT_EQ(a.predict(data.features()), b.predict(data.features()));
  std::vector<Eigen::Index> rev(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) rev[static_cast<std::size_t>(i)] = data.rows() - 1 - i;
  const auto c = fit_stack(data.subset(rev), default_library(), Loss::Log, 5, 9);
  EXPECT_LT((a.predict(data.features()) - c.predict(data.features())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Stack, StratifiedFoldsBalanceClasses) {
  std::mt19937_64 rng(15);
  Eigen::MatrixXd x = schema_features(rng, 103);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(103);
  for (Eigen::Index i = 0; i < 21; ++i) y(i) = 1;
  const auto folds = assign_folds(Dataset(x, y), 5, true, 1);
  std::vector<int> pos(5, 0);
  for (Eigen::Index i = 0; i < 103; ++i) pos[static_cast<std::size_t>(folds[static_cast<std::size_t>(i)])] += y(i) > 0;
  for (int c : pos) EXPECT_TRUE(c == 4 || c == 5);
}

TEST(Stack, TooFewRowsThrows) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(9, 2);
  EXPECT_THROW(fit_stack(Dataset(x, Eigen::VectorXd::Random(9)), default_library(), Loss::Squared, 5, 0),
               DegenerateSample);
}
