// Fully tabulated joint law of (X, T, Y) over a finite covariate grid.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "drl/effects.hpp"

namespace drl {

inline constexpr int kNumBinary = 5;
inline constexpr int kNumCovariates = kNumBinary + 1;

using Covariates = std::array<double, kNumCovariates>;

struct Cell {
  Covariates x{};
  double p_x = 0.0;
  double p_t1 = 0.5;
  double p_y1_t1 = 0.5;
  double p_y1_t0 = 0.5;

  double truth(TargetParameter param) const {
    return contrast(param, p_y1_t1, p_y1_t0);
  }
  double outcome(int arm) const { return arm == 1 ? p_y1_t1 : p_y1_t0; }
};

/// How a distribution was produced; filled in by the generator.
struct Provenance {
  int inter_order = 0;
  bool tx_inter = false;
  std::uint64_t seed = 0;
  double target_bias = 0.0;
  double achieved_bias = 0.0;
  int restarts = 0;
  int treatment_iterations = 0;
  int outcome_iterations = 0;
  double eta_treatment = 0.0;
  double rho_treatment = 0.0;
  double eta_outcome = 0.0;
  double rho_outcome = 0.0;
  bool has_target = false;
};

struct SyntheticDistribution {
  std::vector<Cell> cells;
  Provenance provenance;

  std::size_t size() const { return cells.size(); }

  std::vector<double> true_effect(TargetParameter param) const {
    std::vector<double> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(c.truth(param));
    return out;
  }

  std::vector<double> weights() const {
    std::vector<double> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(c.p_x);
    return out;
  }

  double marginal_treated() const {
    double p = 0.0;
    for (const auto& c : cells) p += c.p_x * c.p_t1;
    return p;
  }

  /// Covariate matrix, one row per cell.
  Eigen::MatrixXd covariate_matrix() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(cells.size()), kNumCovariates);
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (int j = 0; j < kNumCovariates; ++j)
        m(static_cast<Eigen::Index>(i), j) = cells[i].x[static_cast<std::size_t>(j)];
    return m;
  }
};

}  // namespace drl
