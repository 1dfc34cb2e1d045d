#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "drl/dgp.hpp"

using namespace drl;
using P = TargetParameter;

namespace {

std::string csv_text(const SyntheticDistribution& d) {
  std::ostringstream os;
  write_csv(d, os);
  return os.str();
}

// naive contrast minus marginal ATE, by enumeration
double naive_minus_ate(const std::vector<double>& px, const std::vector<double>& pt,
                       const std::vector<double>& y1, const std::vector<double>& y0) {
  double pt1 = 0, ey_t1 = 0, ey_t0 = 0, ate = 0;
  for (std::size_t i = 0; i < px.size(); ++i) pt1 += px[i] * pt[i];
  for (std::size_t i = 0; i < px.size(); ++i) {
    ey_t1 += px[i] * pt[i] * y1[i] / pt1;
    ey_t0 += px[i] * (1 - pt[i]) * y0[i] / (1 - pt1);
    ate += px[i] * (y1[i] - y0[i]);
  }
  return (ey_t1 - ey_t0) - ate;
}

SyntheticDistribution two_cells(double t1, double t2) {
  SyntheticDistribution d;
  d.cells.resize(2);
  d.cells[0] = {{0, 0, 0, 0, 0, 0.0}, 0.5, 0.5, t1, 0.2};
  d.cells[1] = {{1, 0, 0, 0, 0, 0.0}, 0.5, 0.5, t2, 0.2};
  return d;
}

}  // namespace

TEST(Grid, InteractionSetSizes) {
  EXPECT_EQ(interaction_set(1).size(), 6u);
  EXPECT_EQ(interaction_set(2).size(), 16u);
  EXPECT_EQ(interaction_set(3).size(), 26u);
  EXPECT_EQ(interaction_set(1).front(), 0u);
}

TEST(Grid, CellsAndNumericGrid) {
  const auto g = numeric_grid(100);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_NEAR(g[1], 1.0 / 99.0, 1e-15);
  EXPECT_EQ(covariate_cells(100).size(), 3200u);
}

TEST(Dirichlet, SumsToOneAndPositive) {
  Engine a = make_engine(1), b = make_engine(2);
  const auto p = sample_covariate_distribution(a, 3200);
  const auto q = sample_covariate_distribution(b, 3200);
  double s = 0;
  for (double v : p) {
    EXPECT_GT(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_NE(p, q);
}

TEST(Dirichlet, MeanIsUniform) {
  // each coordinate of a flat Dirichlet over K cells has mean 1/K and
  // variance (K-1)/(K^2 (K+1))
  const std::size_t k = 3200;
  const int draws = 10000;
  Engine rng = make_engine(3);
  std::vector<double> mean(k, 0.0);
  for (int r = 0; r < draws; ++r) {
    const auto p = sample_covariate_distribution(rng, k);
    for (std::size_t i = 0; i < k; ++i) mean[i] += p[i] / draws;
  }
  const double kk = static_cast<double>(k);
  const double se = std::sqrt((kk - 1) / (kk * kk * (kk + 1)) / draws);
  int within3 = 0;
  for (double m : mean) {
    const double z = std::abs(m - 1.0 / kk) / se;
    within3 += z <= 3.0;
    EXPECT_LT(z, 5.0);
  }
  EXPECT_GE(within3, static_cast<int>(0.99 * kk));
}

TEST(GaussianProcess, MarginalVarianceMatchesAmplitude) {
  Engine rng = make_engine(4);
  const auto grid = numeric_grid(100);
  const int draws = 1000;
  double sum = 0, sq = 0;
  for (int r = 0; r < draws; ++r) {
    const auto g = sample_gp(rng, 2.5, 5.0, grid);
    sum += g.values[50];
    sq += g.values[50] * g.values[50];
  }
  const double var = sq / draws - (sum / draws) * (sum / draws);
  EXPECT_NEAR(var, 2.5, 0.35);  // about 3 standard errors of a variance estimate
}

TEST(GaussianProcess, LengthScaleExtremes) {
  Engine rng = make_engine(5);
  const auto grid = numeric_grid(100);
  // huge rho: neighbours decorrelate
  double num = 0, den = 0;
  for (int r = 0; r < 1000; ++r) {
    const auto g = sample_gp(rng, 1.0, 1e6, grid);
    for (std::size_t i = 0; i + 1 < g.values.size(); ++i) num += g.values[i] * g.values[i + 1];
    for (double v : g.values) den += v * v;
  }
  EXPECT_NEAR(num / den, 0.0, 0.02);
  // tiny rho: nearly constant over the grid
  const auto flat = sample_gp(rng, 1.0, 1e-6, grid);
  double m = 0;
  for (double v : flat.values) m += v / 100.0;
  double spread = 0;
  for (double v : flat.values) spread += (v - m) * (v - m) / 100.0;
  EXPECT_LT(spread, 1e-4);
  EXPECT_THROW(sample_gp(rng, 0.0, 1.0, grid), std::invalid_argument);
}

TEST(ConfoundingBias, ZeroWhenTreatmentRandomized) {
  Engine rng = make_engine(6);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 8;
    auto px = sample_covariate_distribution(rng, n);
    const double t = u(rng);
    std::vector<double> pt(n, t), y1(n), y0(n);
    for (std::size_t i = 0; i < n; ++i) {
      y1[i] = u(rng);
      y0[i] = u(rng);
    }
    EXPECT_NEAR(confounding_bias(px, pt, y1, y0), 0.0, 1e-12);
  }
}

TEST(ConfoundingBias, ZeroWhenOutcomeIgnoresTreatmentAndCovariates) {
  Engine rng = make_engine(7);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int k = 0; k < 100; ++k) {
    auto px = sample_covariate_distribution(rng, 6);
    std::vector<double> pt(6), y(6, u(rng));
    for (auto& v : pt) v = u(rng);
    EXPECT_NEAR(confounding_bias(px, pt, y, y), 0.0, 1e-12);
  }
}

TEST(ConfoundingBias, MatchesEnumeration) {
  EXPECT_NEAR(confounding_bias(std::vector{0.5, 0.5}, std::vector{0.8, 0.2}, std::vector{0.9, 0.9},
                               std::vector{0.1, 0.1}),
              0.0, 1e-15);
  // hand enumeration: naive 0.272/0.38 - 0.092/0.62, minus ATE 0.3
  const std::vector<double> px{0.3, 0.7}, pt{0.8, 0.2}, y1{0.9, 0.4}, y0{0.6, 0.1};
  EXPECT_NEAR(confounding_bias(px, pt, y1, y0), naive_minus_ate(px, pt, y1, y0), 1e-14);
  EXPECT_NEAR(confounding_bias(px, pt, y1, y0), 0.272 / 0.38 - 0.092 / 0.62 - 0.3, 1e-14);
  Engine rng = make_engine(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int k = 0; k < 200; ++k) {
    auto p = sample_covariate_distribution(rng, 10);
    std::vector<double> t(10), a(10), b(10);
    for (std::size_t i = 0; i < 10; ++i) {
      t[i] = u(rng);
      a[i] = u(rng);
      b[i] = u(rng);
    }
    EXPECT_NEAR(confounding_bias(p, t, a, b), naive_minus_ate(p, t, a, b), 1e-12);
  }
  EXPECT_THROW(confounding_bias(std::vector{1.0}, std::vector{0.0}, std::vector{0.5}, std::vector{0.5}),
               std::domain_error);
}

TEST(Mechanisms, TreatmentDrawIsAccepted) {
  DGPConfig c;
  c.inter_order = 2;
  Engine rng = make_engine(9);
  const auto px = sample_covariate_distribution(rng, c.num_cells());
  const auto tm = sample_treatment_mechanism(rng, c, px);
  double treated = 0;
  for (std::size_t i = 0; i < px.size(); ++i) treated += px[i] * tm.p_t1[i];
  for (double p : tm.p_t1) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
    // positivity bound restated as a range
    EXPECT_GE(p, treated / c.pos_bound * (1 - 1e-12));
    EXPECT_LE(p, 1.0 - (1.0 - treated) / c.pos_bound * (1 - 1e-12));
  }
  EXPECT_LE(positivity_ratio(px, tm.p_t1), c.pos_bound);
}

TEST(Mechanisms, OutcomeDrawMeetsBiasTargetAndClamp) {
  DGPConfig c;
  Engine rng = make_engine(10);
  const auto px = sample_covariate_distribution(rng, c.num_cells());
  const auto tm = sample_treatment_mechanism(rng, c, px);
  const auto om = sample_outcome_mechanism(rng, c, px, tm.p_t1, 0.05);
  EXPECT_LE(std::abs(confounding_bias(px, tm.p_t1, om.p_y1_t1, om.p_y1_t0) - 0.05), c.tol);
  for (std::size_t i = 0; i < px.size(); ++i) {
    EXPECT_TRUE(c.outcome_clamp.contains(om.p_y1_t1[i]));
    EXPECT_TRUE(c.outcome_clamp.contains(om.p_y1_t0[i]));
  }
}

TEST(Generate, InvariantsAndDeterminism) {
  for (int order : {1, 2, 3})
    for (bool tx : {false, true}) {
      DGPConfig c;
      c.inter_order = order;
      c.tx_inter = tx;
      c.seed = 100 + static_cast<std::uint64_t>(order) * 2 + tx;
      const auto d = generate(c);
      EXPECT_NO_THROW(validate_distribution(d, c.pos_bound, c.outcome_clamp, c.tol));
      double s = 0;
      for (const auto& cell : d.cells) s += cell.p_x;
      EXPECT_NEAR(s, 1.0, 1e-12);
      EXPECT_LE(std::abs(confounding_bias(d) - d.provenance.target_bias), c.tol);
      EXPECT_EQ(d.provenance.inter_order, order);
      if (order == 1) {
        EXPECT_EQ(csv_text(d), csv_text(generate(c)));
      }
    }
}

TEST(Generate, NoTreatmentInteractionGivesConstantUnclampedEffect) {
  DGPConfig c;
  c.tx_inter = false;
  c.inter_order = 2;
  c.seed = 77;
  const auto d = generate(c);
  std::optional<double> effect;
  for (const auto& cell : d.cells) {
    const bool clamped = cell.p_y1_t1 <= 0.05 || cell.p_y1_t1 >= 0.95 || cell.p_y1_t0 <= 0.05 ||
                         cell.p_y1_t0 >= 0.95;
    if (clamped) continue;
    const double ate = cell.p_y1_t1 - cell.p_y1_t0;
    if (!effect) effect = ate;
    EXPECT_NEAR(ate, *effect, 1e-12);
  }
  EXPECT_TRUE(effect.has_value());
}

TEST(Generate, HigherOrderBatchHasHeterogeneousLogOddsRatio) {
  int varied = 0;
  const int total = 20;
  for (int k = 0; k < total; ++k) {
    DGPConfig c;
    c.inter_order = 3;
    c.tx_inter = true;
    c.seed = derive_seed(55, {static_cast<std::uint64_t>(k)});
    const auto d = generate(c);
    double lo = 1e300, hi = -1e300;
    for (const auto& cell : d.cells) {
      lo = std::min(lo, cell.truth(P::LogOR));
      hi = std::max(hi, cell.truth(P::LogOR));
    }
    varied += hi - lo > 1e-9;
  }
  EXPECT_GE(varied, 19);
}

TEST(Generate, RejectsBadConfig) {
  DGPConfig c;
  c.inter_order = 4;
  EXPECT_THROW(generate(c), std::invalid_argument);
  c.inter_order = 1;
  c.max_rejection_iters = 1;
  c.max_restarts = 1;
  c.tol = 1e-9;
  EXPECT_THROW(generate(c), InfeasibleDraw);
}

TEST(Hte, Labels) {
  auto d = two_cells(0.5, 0.5);
  EXPECT_EQ(hte_label(d, P::RR).label, HteLevel::Low);
  EXPECT_EQ(hte_label(d, P::RR).cv, 0.0);
  // theta = (1, 2) under RR with p0 = 0.2
  d = two_cells(0.2, 0.4);
  const auto h = hte_label(d, P::RR);
  EXPECT_NEAR(h.cv, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(h.label, HteLevel::High);
  // scale invariance: doubling both p1 doubles RR
  EXPECT_NEAR(hte_label(two_cells(0.4, 0.8), P::RR).cv, h.cv, 1e-12);
  // zero mean is flagged
  auto z = two_cells(0.3, 0.1);
  const auto hz = hte_label(z, P::ATE);
  EXPECT_TRUE(hz.near_zero_mean);
  EXPECT_EQ(hz.label, HteLevel::High);
}

TEST(Csv, RoundTripIsByteIdentical) {
  DGPConfig c;
  c.seed = 5;
  const auto d = generate(c);
  const auto dir = std::filesystem::temp_directory_path() / "drl_test_dgp";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "d.csv").string();
  save_csv(d, path);
  {
    std::ofstream side(sidecar_path(path));
    side << sidecar_json(d, c).dump(2);
  }
  const auto back = load_csv(path);
  EXPECT_EQ(csv_text(back), csv_text(d));
  EXPECT_TRUE(back.provenance.has_target);
  EXPECT_EQ(back.provenance.seed, d.provenance.seed);
  for (const auto& cell : back.cells)
    EXPECT_DOUBLE_EQ(cell.truth(P::OR), contrast(P::OR, cell.p_y1_t1, cell.p_y1_t0));
  std::filesystem::remove_all(dir);
}

TEST(Csv, RejectsBrokenInvariants) {
  auto d = two_cells(0.3, 0.6);
  std::istringstream ok(csv_text(d));
  EXPECT_NO_THROW(read_csv(ok));
  d.cells[1].p_x = 0.48;  // total 0.98
  std::istringstream bad(csv_text(d));
  EXPECT_THROW(read_csv(bad), FormatError);
  std::string text = csv_text(two_cells(0.3, 0.6));
  text.replace(text.rfind(','), 1, ",9");  // corrupt the last rr field
  std::istringstream corrupt(text);
  EXPECT_THROW(read_csv(corrupt), FormatError);
  std::istringstream header("a,b\n");
  EXPECT_THROW(read_csv(header), FormatError);
}
