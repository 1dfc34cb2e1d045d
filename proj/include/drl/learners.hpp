// Supervised learners and a cross-validated stacking ensemble.
//
// The library has three members: a main-effects GLM (logistic link for the
// log loss, identity for the squared loss) fit by IRLS, gradient-boosted
// trees of depth <= 2, and a Nadaraya-Watson smoother with a product kernel.
// Every fit honours observation weights and is deterministic in (data, seed).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "drl/errors.hpp"
#include "drl/random.hpp"

namespace drl {

enum class Loss { Squared, Log };

/// Rows of (features, response, weight). Weights default to 1.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Eigen::MatrixXd features, Eigen::VectorXd response)
      : Dataset(features, std::move(response), Eigen::VectorXd::Ones(features.rows())) {}
  Dataset(Eigen::MatrixXd features, Eigen::VectorXd response, Eigen::VectorXd weight)
      : x_(std::move(features)), y_(std::move(response)), w_(std::move(weight)) {
    if (y_.size() != x_.rows() || w_.size() != x_.rows())
      throw std::invalid_argument("dataset: features, response and weights disagree in length");
    for (Eigen::Index i = 0; i < w_.size(); ++i)
      if (!std::isfinite(w_(i)) || w_(i) < 0.0)
        throw std::invalid_argument("dataset: weights must be finite and nonnegative");
    for (Eigen::Index i = 0; i < y_.size(); ++i)
      if (!std::isfinite(y_(i))) throw std::invalid_argument("dataset: non-finite response");
  }

  Eigen::Index rows() const { return x_.rows(); }
  Eigen::Index cols() const { return x_.cols(); }
  const Eigen::MatrixXd& features() const { return x_; }
  const Eigen::VectorXd& response() const { return y_; }
  const Eigen::VectorXd& weight() const { return w_; }

  Dataset subset(std::span<const Eigen::Index> idx) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd x(n, cols());
    Eigen::VectorXd y(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto r = idx[static_cast<std::size_t>(i)];
      x.row(i) = x_.row(r);
      y(i) = y_(r);
      w(i) = w_(r);
    }
    return Dataset(std::move(x), std::move(y), std::move(w));
  }

  Dataset with_weight(Eigen::VectorXd w) const { return Dataset(x_, y_, std::move(w)); }

  double weighted_mean() const {
    const double total = w_.sum();
    return total > 0.0 ? w_.dot(y_) / total : y_.mean();
  }

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd w_;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Hyperparameters

struct GlmParams {
  double ridge = 1e-6;
  int max_iterations = 100;
  double tolerance = 1e-10;
};

struct BoostingParams {
  int trees = 100;
  int depth = 2;
  double learning_rate = 0.1;
  double subsample = 1.0;
  double min_child_weight = 1.0;
  double leaf_ridge = 1.0;  // log loss only

  void validate() const {
    if (trees < 1 || depth < 1 || depth > 2 || !(learning_rate > 0.0) ||
        !(subsample > 0.0 && subsample <= 1.0) || !(min_child_weight >= 0.0) ||
        !(leaf_ridge >= 0.0))
      throw std::invalid_argument("boosting hyperparameters out of range");
  }
};

struct KernelParams {
  double bandwidth = 0.1;       // RBF scale on numeric columns
  double hamming_weight = 1.0;  // penalty per mismatched binary column

  void validate() const {
    if (!(bandwidth > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
    if (!(hamming_weight >= 0.0))
      throw std::invalid_argument("Hamming weight must be nonnegative");
  }
};

enum class LearnerKind { LogisticMainEffects, BoostedStumps, KernelSmoother };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::LogisticMainEffects;
  GlmParams glm{};
  BoostingParams boosting{};
  KernelParams kernel{};

  std::string name() const {
    switch (kind) {
      case LearnerKind::LogisticMainEffects: return "glm";
      case LearnerKind::BoostedStumps: return "boosted_stumps";
      case LearnerKind::KernelSmoother: return "kernel_smoother";
    }
    return "?";
  }
};

inline std::vector<LearnerSpec> default_library() {
  return {LearnerSpec{LearnerKind::LogisticMainEffects},
          LearnerSpec{LearnerKind::BoostedStumps},
          LearnerSpec{LearnerKind::KernelSmoother}};
}

// ---------------------------------------------------------------------------
// Fitted models

struct GlmModel {
  Eigen::VectorXd coef;  // intercept first
  Loss loss = Loss::Log;
  bool converged = true;
  int iterations = 0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd eta = (x * coef.tail(coef.size() - 1)).array() + coef(0);
    if (loss == Loss::Log) eta = eta.unaryExpr([](double z) { return sigmoid(z); });
    return eta;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct BoostedModel {
  double init = 0.0;
  double learning_rate = 0.1;
  std::vector<std::vector<TreeNode>> trees;
  Loss loss = Loss::Squared;

  double raw_score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double f = init;
    for (const auto& tree : trees) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& n = tree[static_cast<std::size_t>(node)];
        node = row(n.feature) <= n.threshold ? n.left : n.right;
      }
      f += learning_rate * tree[static_cast<std::size_t>(node)].value;
    }
    return f;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double f = raw_score(x.row(i));
      out(i) = loss == Loss::Log ? sigmoid(std::clamp(f, -30.0, 30.0)) : f;
    }
    return out;
  }
};

struct KernelModel {
  Eigen::MatrixXd support;        // distinct training feature rows
  Eigen::VectorXd weight_sum;     // total weight per support row
  Eigen::VectorXd response_sum;   // weighted response total per support row
  std::vector<bool> binary;       // per column: Hamming (true) or RBF (false)
  KernelParams params{};
  Loss loss = Loss::Squared;

  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& q) const {
    const double inv2h2 = 1.0 / (2.0 * params.bandwidth * params.bandwidth);
    thread_local std::vector<double> logk;
    logk.resize(static_cast<std::size_t>(support.rows()));
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index u = 0; u < support.rows(); ++u) {
      double l = 0.0;
      for (Eigen::Index j = 0; j < support.cols(); ++j) {
        const double d = q(j) - support(u, j);
        if (binary[static_cast<std::size_t>(j)])
          l -= d != 0.0 ? params.hamming_weight : 0.0;
        else
          l -= d * d * inv2h2;
      }
      logk[static_cast<std::size_t>(u)] = l;
      if (weight_sum(u) > 0.0) top = std::max(top, l);
    }
    // Log-sum-exp shift keeps the nearest support row from underflowing.
    double num = 0.0, den = 0.0;
    for (Eigen::Index u = 0; u < support.rows(); ++u) {
      if (!(weight_sum(u) > 0.0)) continue;
      const double k = std::exp(logk[static_cast<std::size_t>(u)] - top);
      num += k * response_sum(u);
      den += k * weight_sum(u);
    }
    const double v = num / den;
    return loss == Loss::Log ? std::clamp(v, 1e-6, 1.0 - 1e-6) : v;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_one(x.row(i));
    return out;
  }
};

/// A fitted member of the library.
class Model {
 public:
  using Variant = std::variant<GlmModel, BoostedModel, KernelModel>;

  Model(Variant v, Eigen::Index cols) : impl_(std::move(v)), cols_(cols) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (x.cols() != cols_)
      throw std::invalid_argument("predict: expected " + std::to_string(cols_) +
                                  " feature columns, got " + std::to_string(x.cols()));
    return std::visit([&](const auto& m) { return m.predict(x); }, impl_);
  }

  Eigen::Index cols() const { return cols_; }
  const Variant& impl() const { return impl_; }

 private:
  Variant impl_;
  Eigen::Index cols_;
};

// ---------------------------------------------------------------------------
// GLM via IRLS

namespace detail {

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

inline double penalized_log_loss(const Eigen::MatrixXd& d, const Dataset& data,
                                 const Eigen::VectorXd& beta, double ridge) {
  const Eigen::VectorXd eta = d * beta;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double w = data.weight()(i);
    if (w == 0.0) continue;
    // log(1 + e^z) - y z, computed stably
    const double z = eta(i);
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += w * (softplus - data.response()(i) * z);
  }
  return loss + 0.5 * ridge * beta.tail(beta.size() - 1).squaredNorm();
}

}  // namespace detail

/// Main-effects GLM. Logistic link with damped Newton (IRLS) for the log
/// loss; weighted ridge least squares for the squared loss. A fit that hits
/// the iteration cap is returned with `converged == false`.
inline Model fit_glm(const Dataset& data, Loss loss, const GlmParams& params = {}) {
  if (data.rows() < 1) throw DegenerateSample("glm: empty dataset");
  const Eigen::MatrixXd d = detail::with_intercept(data.features());
  const auto p = d.cols();
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Identity(p, p) * params.ridge;
  penalty(0, 0) = 0.0;
  const Eigen::VectorXd& w = data.weight();
  const Eigen::VectorXd& y = data.response();

  GlmModel m;
  m.loss = loss;
  if (loss == Loss::Squared) {
    const Eigen::MatrixXd h = d.transpose() * w.asDiagonal() * d + penalty;
    m.coef = h.ldlt().solve(d.transpose() * w.cwiseProduct(y));
    m.iterations = 1;
    return Model(std::move(m), data.cols());
  }

  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y(i) < 0.0 || y(i) > 1.0) throw std::invalid_argument("logistic: response outside [0,1]");
  const double ybar = std::clamp(data.weighted_mean(), 1e-6, 1.0 - 1e-6);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta(0) = logit(ybar);
  double obj = detail::penalized_log_loss(d, data, beta, params.ridge);
  m.converged = false;
  for (int it = 1; it <= params.max_iterations; ++it) {
    const Eigen::VectorXd eta = d * beta;
    Eigen::VectorXd mu(eta.size()), curv(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu(i) = sigmoid(eta(i));
      curv(i) = w(i) * std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const Eigen::VectorXd grad =
        d.transpose() * w.cwiseProduct(y - mu) - penalty * beta;
    const Eigen::MatrixXd hess = d.transpose() * curv.asDiagonal() * d + penalty;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_obj = detail::penalized_log_loss(d, data, next, params.ridge);
    while (next_obj > obj && scale > 1e-8) {
      scale *= 0.5;
      next = beta + scale * step;
      next_obj = detail::penalized_log_loss(d, data, next, params.ridge);
    }
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    const double prev = obj;
    obj = next_obj;
    m.iterations = it;
    if (change <= params.tolerance * (1.0 + beta.cwiseAbs().maxCoeff()) ||
        std::abs(prev - obj) <= params.tolerance * (std::abs(obj) + params.tolerance)) {
      m.converged = true;
      break;
    }
  }
  m.coef = beta;
  return Model(std::move(m), data.cols());
}

inline Model fit_logistic(const Dataset& data, const GlmParams& params = {}) {
  return fit_glm(data, Loss::Log, params);
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees of depth <= 2

namespace detail {

struct Binning {
  std::vector<std::vector<double>> thresholds;  // per feature, split points
  std::vector<std::vector<int>> bin;            // per feature, per row

  explicit Binning(const Dataset& data) {
    const auto n = data.rows();
    thresholds.resize(static_cast<std::size_t>(data.cols()));
    bin.resize(static_cast<std::size_t>(data.cols()));
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      std::vector<double> vals;
      for (Eigen::Index i = 0; i < n; ++i)
        if (data.weight()(i) > 0.0) vals.push_back(data.features()(i, j));
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      auto& th = thresholds[static_cast<std::size_t>(j)];
      for (std::size_t k = 0; k + 1 < vals.size(); ++k) th.push_back(0.5 * (vals[k] + vals[k + 1]));
      auto& b = bin[static_cast<std::size_t>(j)];
      b.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i)
        b[static_cast<std::size_t>(i)] = static_cast<int>(
            std::lower_bound(th.begin(), th.end(), data.features()(i, j)) - th.begin());
    }
  }
};

struct SplitChoice {
  int feature = -1;
  int bin = -1;  // rows with bin <= this go left
  double gain = 0.0;
};

inline double leaf_score(double g, double h, double ridge) { return g * g / (h + ridge); }

inline SplitChoice best_split(const Binning& bins, const std::vector<Eigen::Index>& rows,
                              const std::vector<double>& g, const std::vector<double>& h,
                              double min_child, double ridge) {
  double gsum = 0.0, hsum = 0.0;
  for (auto r : rows) {
    gsum += g[static_cast<std::size_t>(r)];
    hsum += h[static_cast<std::size_t>(r)];
  }
  const double parent = leaf_score(gsum, hsum, ridge);
  SplitChoice best;
  std::vector<double> gh, hh;
  for (std::size_t j = 0; j < bins.thresholds.size(); ++j) {
    const auto nb = bins.thresholds[j].size() + 1;
    if (nb < 2) continue;
    gh.assign(nb, 0.0);
    hh.assign(nb, 0.0);
    for (auto r : rows) {
      const auto b = static_cast<std::size_t>(bins.bin[j][static_cast<std::size_t>(r)]);
      gh[b] += g[static_cast<std::size_t>(r)];
      hh[b] += h[static_cast<std::size_t>(r)];
    }
    double gl = 0.0, hl = 0.0;
    for (std::size_t b = 0; b + 1 < nb; ++b) {
      gl += gh[b];
      hl += hh[b];
      const double hr = hsum - hl;
      if (hl < min_child || hr < min_child || hl <= 0.0 || hr <= 0.0) continue;
      const double gain =
          leaf_score(gl, hl, ridge) + leaf_score(gsum - gl, hr, ridge) - parent;
      if (gain > best.gain + 1e-12 * std::abs(parent)) {
        best = {static_cast<int>(j), static_cast<int>(b), gain};
      }
    }
  }
  return best;
}

inline double leaf_value(const std::vector<Eigen::Index>& rows, const std::vector<double>& g,
                         const std::vector<double>& h, double ridge) {
  double gs = 0.0, hs = 0.0;
  for (auto r : rows) {
    gs += g[static_cast<std::size_t>(r)];
    hs += h[static_cast<std::size_t>(r)];
  }
  return hs + ridge > 0.0 ? gs / (hs + ridge) : 0.0;
}

}  // namespace detail

/// Gradient boosting with Newton leaves. Squared loss boosts the raw score;
/// log loss boosts log-odds and predicts through the logistic function.
/// Split candidates come only from rows with positive weight, so zero-weight
/// rows have no influence on the fit.
inline Model fit_boosted_stumps(const Dataset& data, Loss loss, const BoostingParams& params = {},
                                std::uint64_t seed = 0) {
  params.validate();
  if (data.rows() < 10) throw DegenerateSample("boosting needs at least 10 rows");
  const auto n = data.rows();
  const auto& y = data.response();
  const auto& w = data.weight();
  const double ridge = loss == Loss::Log ? params.leaf_ridge : 0.0;

  BoostedModel m;
  m.loss = loss;
  m.learning_rate = params.learning_rate;
  const double ybar = data.weighted_mean();
  m.init = loss == Loss::Log ? logit(std::clamp(ybar, 1e-6, 1.0 - 1e-6)) : ybar;

  const detail::Binning bins(data);
  std::vector<double> score(static_cast<std::size_t>(n), m.init);
  std::vector<double> g(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));
  Engine rng = make_engine(seed);
  std::bernoulli_distribution keep(params.subsample);

  for (int t = 0; t < params.trees; ++t) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (loss == Loss::Log) {
        const double p = sigmoid(score[k]);
        g[k] = w(i) * (y(i) - p);
        h[k] = w(i) * p * (1.0 - p);
      } else {
        g[k] = w(i) * (y(i) - score[k]);
        h[k] = w(i);
      }
      if (w(i) > 0.0 && (params.subsample >= 1.0 || keep(rng))) rows.push_back(i);
    }
    if (rows.empty()) continue;

    // Grow: node 0 is the root; children appended breadth-first.
    std::vector<TreeNode> tree(1);
    std::vector<std::vector<Eigen::Index>> members{rows};
    std::vector<int> depth{0};
    for (std::size_t node = 0; node < tree.size(); ++node) {
      const auto& mem = members[node];
      detail::SplitChoice s;
      if (depth[node] < params.depth)
        s = detail::best_split(bins, mem, g, h, params.min_child_weight, ridge);
      if (s.feature < 0) {
        tree[node].value = detail::leaf_value(mem, g, h, ridge);
        continue;
      }
      const auto f = static_cast<std::size_t>(s.feature);
      std::vector<Eigen::Index> left, right;
      for (auto r : mem)
        (bins.bin[f][static_cast<std::size_t>(r)] <= s.bin ? left : right).push_back(r);
      tree[node].feature = s.feature;
      tree[node].threshold = bins.thresholds[f][static_cast<std::size_t>(s.bin)];
      tree[node].left = static_cast<int>(tree.size());
      tree[node].right = static_cast<int>(tree.size() + 1);
      const int child_depth = depth[node] + 1;
      tree.emplace_back();
      tree.emplace_back();
      members.push_back(std::move(left));
      members.push_back(std::move(right));
      depth.push_back(child_depth);
      depth.push_back(child_depth);
    }
    // Update scores on every row, including those left out of the subsample.
    for (Eigen::Index i = 0; i < n; ++i) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& nd = tree[static_cast<std::size_t>(node)];
        node = data.features()(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      score[static_cast<std::size_t>(i)] +=
          params.learning_rate * tree[static_cast<std::size_t>(node)].value;
    }
    m.trees.push_back(std::move(tree));
  }
  return Model(std::move(m), data.cols());
}

// ---------------------------------------------------------------------------
// Kernel smoother

/// Nadaraya-Watson estimate with kernel
///   exp(-sum_numeric (x - x')^2 / (2 h^2) - hamming_weight * #binary mismatches).
/// A column is treated as binary when every training value is 0 or 1.
inline Model fit_kernel_smoother(const Dataset& data, Loss loss, const KernelParams& params = {}) {
  params.validate();
  if (data.rows() < 5) throw DegenerateSample("kernel smoother needs at least 5 rows");
  const auto n = data.rows();
  const auto p = data.cols();
  KernelModel m;
  m.loss = loss;
  m.params = params;
  m.binary.assign(static_cast<std::size_t>(p), true);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = data.features()(i, j);
      if (v != 0.0 && v != 1.0) {
        m.binary[static_cast<std::size_t>(j)] = false;
        break;
      }
    }

  // Collapse identical feature rows.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto& x = data.features();
  auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < p; ++j)
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    return false;
  };
  std::stable_sort(order.begin(), order.end(), row_less);
  std::vector<Eigen::Index> heads;
  std::vector<double> ws, wys;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto r = order[k];
    if (k == 0 || row_less(order[k - 1], r)) {
      heads.push_back(r);
      ws.push_back(0.0);
      wys.push_back(0.0);
    }
    ws.back() += data.weight()(r);
    wys.back() += data.weight()(r) * data.response()(r);
  }
  const auto u = static_cast<Eigen::Index>(heads.size());
  m.support.resize(u, p);
  m.weight_sum.resize(u);
  m.response_sum.resize(u);
  for (Eigen::Index k = 0; k < u; ++k) {
    m.support.row(k) = x.row(heads[static_cast<std::size_t>(k)]);
    m.weight_sum(k) = ws[static_cast<std::size_t>(k)];
    m.response_sum(k) = wys[static_cast<std::size_t>(k)];
  }
  if (!(m.weight_sum.sum() > 0.0)) throw DegenerateSample("kernel smoother: all weights zero");
  return Model(std::move(m), p);
}

inline Model fit_learner(const LearnerSpec& spec, const Dataset& data, Loss loss,
                         std::uint64_t seed = 0) {
  switch (spec.kind) {
    case LearnerKind::LogisticMainEffects: return fit_glm(data, loss, spec.glm);
    case LearnerKind::BoostedStumps: return fit_boosted_stumps(data, loss, spec.boosting, seed);
    case LearnerKind::KernelSmoother: return fit_kernel_smoother(data, loss, spec.kernel);
  }
  throw std::invalid_argument("unknown learner kind");
}

// ---------------------------------------------------------------------------
// Stacking

/// Weighted mean loss of `pred` against the dataset's response.
inline double empirical_risk(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& pred, Loss loss) {
  double total = 0.0, wsum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w(i) == 0.0) continue;
    double l;
    if (loss == Loss::Squared) {
      const double r = y(i) - pred(i);
      l = r * r;
    } else {
      const double p = std::clamp(pred(i), 1e-12, 1.0 - 1e-12);
      l = -(y(i) * std::log(p) + (1.0 - y(i)) * std::log1p(-p));
    }
    total += w(i) * l;
    wsum += w(i);
  }
  return total / wsum;
}

/// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cum += u[k];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) tau = t;
  }
  return (v.array() - tau).max(0.0).matrix();
}

/// Minimizes the risk of Z w over the simplex by projected gradient descent
/// with backtracking, starting at the best single column. Monotone, so the
/// result is never worse than the best column.
inline Eigen::VectorXd simplex_weights(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& w, Loss loss,
                                       const std::vector<bool>& usable, int max_iter = 500,
                                       double rel_tol = 1e-8) {
  const auto m = z.cols();
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(m);
  double best = std::numeric_limits<double>::infinity();
  Eigen::Index best_j = -1;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!usable[static_cast<std::size_t>(j)]) continue;
    const double r = empirical_risk(y, w, z.col(j), loss);
    if (r < best) {
      best = r;
      best_j = j;
    }
  }
  if (best_j < 0) throw std::runtime_error("stack: no usable member");
  weights(best_j) = 1.0;
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < m; ++j)
    if (usable[static_cast<std::size_t>(j)]) cols.push_back(j);
  if (cols.size() == 1) return weights;

  const auto k = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd zs(z.rows(), k);
  Eigen::VectorXd ws(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    zs.col(c) = z.col(cols[static_cast<std::size_t>(c)]);
    ws(c) = weights(cols[static_cast<std::size_t>(c)]);
  }
  const double wsum = w.sum();
  auto risk = [&](const Eigen::VectorXd& a) { return empirical_risk(y, w, zs * a, loss); };
  auto gradient = [&](const Eigen::VectorXd& a) {
    const Eigen::VectorXd pred = zs * a;
    Eigen::VectorXd d(pred.size());
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      if (loss == Loss::Squared) {
        d(i) = 2.0 * (pred(i) - y(i));
      } else {
        const double p = std::clamp(pred(i), 1e-12, 1.0 - 1e-12);
        d(i) = (p - y(i)) / (p * (1.0 - p));
      }
    }
    return Eigen::VectorXd(zs.transpose() * w.cwiseProduct(d) / wsum);
  };
  double current = risk(ws);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd grad = gradient(ws);
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = project_to_simplex(ws - step * grad);
      const double r = risk(cand);
      if (r < current) {
        const double prev = current;
        ws = cand;
        current = r;
        moved = true;
        step *= 2.0;
        if (prev - r <= rel_tol * std::abs(prev)) it = max_iter;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  weights.setZero();
  for (Eigen::Index c = 0; c < k; ++c) weights(cols[static_cast<std::size_t>(c)]) = ws(c);
  return weights;
}

/// Fold labels in [0, folds). Rows are put in a canonical order first, so
/// the assignment does not depend on input row order; classification data
/// is stratified on the response.
inline std::vector<int> assign_folds(const Dataset& data, int folds, bool stratify,
                                     std::uint64_t seed) {
  const auto n = data.rows();
  const auto& x = data.features();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (stratify && data.response()(a) != data.response()(b))
      return data.response()(a) < data.response()(b);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    if (data.response()(a) != data.response()(b)) return data.response()(a) < data.response()(b);
    return data.weight()(a) < data.weight()(b);
  });
  Engine rng = make_engine(seed);
  std::vector<int> fold(static_cast<std::size_t>(n));
  std::size_t start = 0;
  int next = 0;
  while (start < order.size()) {
    std::size_t end = order.size();
    if (stratify) {
      end = start;
      while (end < order.size() &&
             data.response()(order[end]) == data.response()(order[start]))
        ++end;
    }
    std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(end), rng);
    for (std::size_t k = start; k < end; ++k) {
      fold[static_cast<std::size_t>(order[k])] = next;
      next = (next + 1) % folds;
    }
    start = end;
  }
  return fold;
}

struct StackedEnsemble {
  std::vector<std::string> names;
  std::vector<Model> members;        // refit on the full data
  std::vector<bool> usable;
  Eigen::VectorXd weights;           // on the simplex
  Eigen::VectorXd cv_risks;          // +inf for members that failed
  double ensemble_cv_risk = 0.0;
  Loss loss = Loss::Squared;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
    for (std::size_t j = 0; j < members.size(); ++j) {
      const double wj = weights(static_cast<Eigen::Index>(j));
      if (wj > 0.0) out += wj * members[j].predict(x);
    }
    return out;
  }
};

/// V-fold super learner: out-of-fold predictions per member, simplex weights
/// minimizing held-out loss, members refit on all rows. Members that throw
/// during cross-validation get weight zero.
inline StackedEnsemble fit_stack(const Dataset& data, std::span<const LearnerSpec> library,
                                 Loss loss, int folds = 5, std::uint64_t seed = 0) {
  if (library.empty()) throw std::invalid_argument("stack: empty library");
  if (folds < 2 || data.rows() < 2 * folds)
    throw DegenerateSample("stack: need at least 2 rows per fold");
  const auto n = data.rows();
  const auto m = static_cast<Eigen::Index>(library.size());
  const auto fold = assign_folds(data, folds, loss == Loss::Log, derive_seed(seed, {0}));

  StackedEnsemble s;
  s.loss = loss;
  s.usable.assign(library.size(), true);
  s.cv_risks = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  Eigen::MatrixXd z(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& spec = library[static_cast<std::size_t>(j)];
    s.names.push_back(spec.name());
    try {
      for (int k = 0; k < folds; ++k) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i)
          (fold[static_cast<std::size_t>(i)] == k ? test : train).push_back(i);
        const auto model = fit_learner(spec, data.subset(train), loss,
                                       derive_seed(seed, {1, static_cast<std::uint64_t>(j),
                                                          static_cast<std::uint64_t>(k)}));
        const Eigen::VectorXd pred = model.predict(data.subset(test).features());
        for (std::size_t t = 0; t < test.size(); ++t) z(test[t], j) = pred(static_cast<Eigen::Index>(t));
      }
      s.cv_risks(j) = empirical_risk(data.response(), data.weight(), z.col(j), loss);
      if (!std::isfinite(s.cv_risks(j))) s.usable[static_cast<std::size_t>(j)] = false;
    } catch (const std::exception&) {
      s.usable[static_cast<std::size_t>(j)] = false;
    }
  }
  if (std::none_of(s.usable.begin(), s.usable.end(), [](bool b) { return b; }))
    throw std::runtime_error("stack: every library member failed");
  for (Eigen::Index j = 0; j < m; ++j)
    if (!s.usable[static_cast<std::size_t>(j)]) z.col(j).setZero();
  s.weights = simplex_weights(z, data.response(), data.weight(), loss, s.usable);
  s.ensemble_cv_risk = empirical_risk(data.response(), data.weight(), z * s.weights, loss);

  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& spec = library[static_cast<std::size_t>(j)];
    const auto fit_seed = derive_seed(seed, {2, static_cast<std::uint64_t>(j)});
    if (s.usable[static_cast<std::size_t>(j)]) {
      s.members.push_back(fit_learner(spec, data, loss, fit_seed));
    } else {
      // Placeholder that is never evaluated (weight zero).
      GlmModel dummy;
      dummy.coef = Eigen::VectorXd::Zero(data.cols() + 1);
      dummy.loss = loss;
      s.members.emplace_back(std::move(dummy), data.cols());
    }
  }
  return s;
}

/// Either a single fitted learner or a stacked ensemble.
class Regressor {
 public:
  Regressor(Model m) : impl_(std::move(m)) {}
  Regressor(StackedEnsemble s) : impl_(std::move(s)) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return std::visit([&](const auto& m) { return m.predict(x); }, impl_);
  }

 private:
  std::variant<Model, StackedEnsemble> impl_;
};

/// Learner used for one regression task: a stack over `library`, or a single
/// learner when the library has one member and `stack_single` is off.
struct LearnerConfig {
  std::vector<LearnerSpec> library = default_library();
  int folds = 5;
  bool stack_single = false;

  Regressor fit(const Dataset& data, Loss loss, std::uint64_t seed) const {
    if (library.size() == 1 && !stack_single) return fit_learner(library.front(), data, loss, seed);
    return fit_stack(data, library, loss, folds, seed);
  }
};

}  // namespace drl
