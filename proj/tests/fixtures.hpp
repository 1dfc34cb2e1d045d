// Small tabulated laws and fast learner settings shared by the test suites.
#pragma once

#include <map>
#include <memory>

#include "drl/dgp.hpp"
#include "drl/harness.hpp"
#include "drl/metalearners.hpp"

namespace drl::fixtures {

inline double logistic_index(const Covariates& x, double t, double bt) {
  return -0.3 + 0.6 * x[0] - 0.5 * x[1] + 0.4 * x[2] + 0.3 * x[3] - 0.2 * x[4] + 0.8 * x[5] + bt * t;
}

// 32 binary patterns x 4 grid points. Outcomes follow a main-effects
// logistic model with treatment coefficient `bt`, so the log odds ratio is bt
// everywhere while the risk difference varies with x.
inline SyntheticDistribution logistic_truth(double bt, std::uint64_t seed, double propensity_slope = 1.0) {
  Engine rng = make_engine(seed);
  SyntheticDistribution d;
  d.cells = covariate_cells(4);
  const auto px = sample_covariate_distribution(rng, d.cells.size());
  for (std::size_t i = 0; i < d.cells.size(); ++i) {
    auto& c = d.cells[i];
    c.p_x = 0.5 / d.cells.size() + 0.5 * px[i];
    c.p_t1 = sigmoid(propensity_slope * (0.4 * c.x[0] - 0.6 * c.x[2] + c.x[5] - 0.4));
    c.p_y1_t1 = sigmoid(logistic_index(c.x, 1.0, bt));
    c.p_y1_t0 = sigmoid(logistic_index(c.x, 0.0, bt));
  }
  return d;
}

inline std::vector<Observation> draw(const SyntheticDistribution& d, std::size_t n, std::uint64_t seed) {
  Engine rng = make_engine(seed);
  return sample_dataset(d, n, rng);
}

// Oracle nuisances looked up by covariate vector.
inline std::function<NuisanceTriple(const Covariates&)> oracle_of(const SyntheticDistribution& d) {
  auto table = std::make_shared<std::map<Covariates, NuisanceTriple>>();
  for (const auto& c : d.cells) (*table)[c.x] = {c.p_y1_t1, c.p_y1_t0, c.p_t1};
  return [table](const Covariates& x) { return table->at(x); };
}

inline MetaConfig fast_config() {
  MetaConfig c;
  c.super_learner.library = {LearnerSpec{LearnerKind::LogisticMainEffects},
                             LearnerSpec{LearnerKind::BoostedStumps}};
  c.super_learner.folds = 3;
  c.second_stage = c.super_learner;
  return c;
}

}  // namespace drl::fixtures
