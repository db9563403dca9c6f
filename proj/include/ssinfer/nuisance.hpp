#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssinfer/data.hpp"

namespace ssinfer {

enum class LearnerKind { lasso, sqrt_lasso, ridge, ols, zero };

enum class LambdaRule {
  fixed,         // use LearnerSpec::lambda
  cv,            // 10-fold CV over a log-spaced grid
  auto_formula,  // sqrt(log(p) / rows), p = design column count
};

struct LearnerSpec {
  LearnerKind variant = LearnerKind::sqrt_lasso;
  LambdaRule lambda_rule = LambdaRule::auto_formula;
  double lambda = 0.0;  // only read when lambda_rule == fixed
  int cv_folds = 10;
  double tolerance = 1e-7;  // max coordinate change per sweep
  int max_iters = 10000;    // coordinate-descent sweep budget

  void validate() const {
    if (!(tolerance > 0.0)) throw std::invalid_argument("LearnerSpec: tolerance must be > 0");
    if (max_iters < 1) throw std::invalid_argument("LearnerSpec: max_iters must be >= 1");
    if (cv_folds < 2) throw std::invalid_argument("LearnerSpec: cv_folds must be >= 2");
    if (lambda_rule == LambdaRule::fixed && !(lambda >= 0.0))
      throw std::invalid_argument("LearnerSpec: lambda must be >= 0");
  }
};

inline const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::lasso: return "lasso";
    case LearnerKind::sqrt_lasso: return "sqrt_lasso";
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::ols: return "ols";
    case LearnerKind::zero: return "zero";
  }
  return "?";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
  if (s == "lasso") return LearnerKind::lasso;
  if (s == "sqrt_lasso") return LearnerKind::sqrt_lasso;
  if (s == "ridge") return LearnerKind::ridge;
  if (s == "ols") return LearnerKind::ols;
  if (s == "zero") return LearnerKind::zero;
  throw std::invalid_argument("unknown learner variant: " + s);
}

// Tuning level of the universal-threshold rule with a design of p columns
// (intercept included) fitted on r rows.
inline double auto_lambda(Index design_cols, Index rows) {
  return std::sqrt(std::log(static_cast<double>(design_cols)) /
                   static_cast<double>(rows));
}

struct SlopeFit {
  VectorXd coefficients;  // length p, intercept at index 0
  std::string solver;
  double lambda = 0.0;
  int iterations = 0;  // coordinate-descent sweeps spent in total
  bool converged = true;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return coefficients[0] + x.dot(coefficients.tail(coefficients.size() - 1));
  }
};

namespace detail {

struct CdStatus {
  int sweeps = 0;
  bool converged = false;
};

// Cyclic coordinate descent for
//   (2r)^-1 sum_i w_i (y_i - m_i^T beta)^2 + lambda sum_j pen_j |beta_j|
// over the raw design M. pen_j = 0 leaves coordinate j unpenalized;
// pen_j = +inf (or a zero column) pins it at 0. beta is the warm start and
// the result. Each coordinate update is an exact minimization, so the
// objective is non-increasing within and across sweeps.
inline CdStatus lasso_cd(const MatrixXd& M, const VectorXd& y,
                         const VectorXd* obs_w, double lambda,
                         const VectorXd& pen, VectorXd& beta, double tol,
                         int max_sweeps) {
  const Index r = M.rows();
  const Index q = M.cols();
  const double inv_r = 1.0 / static_cast<double>(r);

  VectorXd col_sq(q);
  for (Index j = 0; j < q; ++j) {
    col_sq[j] = obs_w ? inv_r * M.col(j).cwiseAbs2().dot(*obs_w)
                      : inv_r * M.col(j).squaredNorm();
  }

  VectorXd resid = y - M * beta;
  const auto update = [&](Index j) -> double {
    if (col_sq[j] <= 0.0) return 0.0;
    const double old = beta[j];
    const double grad = obs_w ? inv_r * M.col(j).dot(resid.cwiseProduct(*obs_w))
                              : inv_r * M.col(j).dot(resid);
    const double c = grad + col_sq[j] * old;
    const double thr = lambda * pen[j];
    double next;
    if (!std::isfinite(thr)) {
      next = 0.0;
    } else if (thr <= 0.0) {
      next = c / col_sq[j];
    } else if (c > thr) {
      next = (c - thr) / col_sq[j];
    } else if (c < -thr) {
      next = (c + thr) / col_sq[j];
    } else {
      next = 0.0;
    }
    if (next != old) {
      beta[j] = next;
      resid -= M.col(j) * (next - old);
      return std::abs(next - old);
    }
    return 0.0;
  };

  CdStatus st;
  std::vector<Index> active;
  while (st.sweeps < max_sweeps) {
    ++st.sweeps;
    double max_delta = 0.0;
    active.clear();
    for (Index j = 0; j < q; ++j) {
      max_delta = std::max(max_delta, update(j));
      if (beta[j] != 0.0 || pen[j] <= 0.0) active.push_back(j);
    }
    if (max_delta < tol) {
      st.converged = true;
      break;
    }
    // Iterate the current active set; the next full sweep both checks
    // convergence and re-admits coordinates.
    while (st.sweeps < max_sweeps) {
      ++st.sweeps;
      double inner_delta = 0.0;
      for (Index j : active) inner_delta = std::max(inner_delta, update(j));
      if (inner_delta < tol) break;
    }
  }
  return st;
}

// Objective of lasso_cd; used by tests and the CV path.
inline double lasso_objective(const MatrixXd& M, const VectorXd& y,
                              double lambda, const VectorXd& pen,
                              const VectorXd& beta) {
  const double rss = (y - M * beta).squaredNorm();
  double l1 = 0.0;
  for (Index j = 0; j < M.cols(); ++j)
    if (pen[j] > 0.0 && std::isfinite(pen[j])) l1 += pen[j] * std::abs(beta[j]);
  return rss / (2.0 * static_cast<double>(M.rows())) + lambda * l1;
}

// Column standardization that keeps the raw-scale objective intact:
// solving on columns (X_j - mean_j)/sd_j with penalty factors 1/sd_j is
// exactly the raw problem after the coefficient map below.
struct Standardized {
  MatrixXd design;   // r x (q+1), intercept column first
  VectorXd penalty;  // 0 for the intercept, 1/sd_j else (inf for dead columns)
  VectorXd mean;
  VectorXd sd;

  VectorXd to_raw(const VectorXd& beta_std) const {
    const Index q = sd.size();
    VectorXd raw(q + 1);
    raw[0] = beta_std[0];
    for (Index j = 0; j < q; ++j) {
      if (sd[j] > 0.0) {
        raw[j + 1] = beta_std[j + 1] / sd[j];
        raw[0] -= raw[j + 1] * mean[j];
      } else {
        raw[j + 1] = 0.0;
      }
    }
    return raw;
  }
};

inline Standardized standardize(const MatrixXd& X) {
  const Index r = X.rows();
  const Index q = X.cols();
  Standardized s;
  s.mean = X.colwise().mean();
  s.sd.resize(q);
  s.design.resize(r, q + 1);
  s.design.col(0).setOnes();
  s.penalty.resize(q + 1);
  s.penalty[0] = 0.0;
  for (Index j = 0; j < q; ++j) {
    const double var = (X.col(j).array() - s.mean[j]).square().sum() /
                       static_cast<double>(r);
    s.sd[j] = std::sqrt(var);
    if (s.sd[j] > 0.0) {
      s.design.col(j + 1) = (X.col(j).array() - s.mean[j]) / s.sd[j];
      s.penalty[j + 1] = 1.0 / s.sd[j];
    } else {
      s.design.col(j + 1).setZero();
      s.penalty[j + 1] = std::numeric_limits<double>::infinity();
    }
  }
  return s;
}

}  // namespace detail

// Lasso with unpenalized intercept:
//   (2r)^-1 ||y - b0 - X b||^2 + lambda ||b||_1.
inline SlopeFit fit_lasso(const MatrixXd& X, const VectorXd& y, double lambda,
                          const LearnerSpec& spec = {}) {
  spec.validate();
  if (X.rows() < 1) throw std::invalid_argument("fit_lasso: empty sample");
  if (X.rows() != y.size()) throw std::invalid_argument("fit_lasso: X/y row mismatch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("fit_lasso: lambda must be >= 0");

  auto s = detail::standardize(X);
  VectorXd beta = VectorXd::Zero(X.cols() + 1);
  auto st = detail::lasso_cd(s.design, y, nullptr, lambda, s.penalty, beta,
                             spec.tolerance, spec.max_iters);
  SlopeFit fit;
  fit.coefficients = s.to_raw(beta);
  fit.solver = "lasso";
  fit.lambda = lambda;
  fit.iterations = st.sweeps;
  fit.converged = st.converged;
  return fit;
}

// Lasso on an explicit design (no implicit intercept, no standardization);
// penalty factors select which coordinates carry the l1 term.
inline SlopeFit fit_lasso_design(const MatrixXd& M, const VectorXd& y,
                                 double lambda, const VectorXd& penalty,
                                 const LearnerSpec& spec = {}) {
  spec.validate();
  if (M.rows() < 1) throw std::invalid_argument("fit_lasso_design: empty sample");
  if (penalty.size() != M.cols())
    throw std::invalid_argument("fit_lasso_design: penalty size mismatch");
  VectorXd beta = VectorXd::Zero(M.cols());
  auto st = detail::lasso_cd(M, y, nullptr, lambda, penalty, beta,
                             spec.tolerance, spec.max_iters);
  SlopeFit fit;
  fit.coefficients = std::move(beta);
  fit.solver = "lasso";
  fit.lambda = lambda;
  fit.iterations = st.sweeps;
  fit.converged = st.converged;
  return fit;
}

namespace detail {

// Scaled-lasso iteration on a prepared design: alternate the noise-scale
// estimate sigma = ||resid||/sqrt(r) with a lasso at penalty lambda*sigma.
// Solves min ||y - M beta||_2 / sqrt(r) + lambda sum_j pen_j |beta_j|.
inline SlopeFit sqrt_lasso_on_design(const MatrixXd& M, const VectorXd& y,
                                     double lambda, const VectorXd& pen,
                                     const LearnerSpec& spec) {
  const Index r = M.rows();
  const double sqrt_r = std::sqrt(static_cast<double>(r));

  SlopeFit fit;
  fit.solver = "sqrt_lasso";
  fit.lambda = lambda;

  VectorXd beta = VectorXd::Zero(M.cols());
  double sigma = (y - M * beta).norm() / sqrt_r;
  int sweeps = 0;
  bool converged = false;
  if (sigma == 0.0) {
    // Response identically representable by the zero vector.
    fit.coefficients = std::move(beta);
    fit.iterations = 0;
    fit.converged = true;
    return fit;
  }

  constexpr int kMaxOuter = 200;
  for (int outer = 0; outer < kMaxOuter; ++outer) {
    auto st = lasso_cd(M, y, nullptr, lambda * sigma, pen, beta, spec.tolerance,
                       spec.max_iters);
    sweeps += st.sweeps;
    const double next_sigma = (y - M * beta).norm() / sqrt_r;
    if (next_sigma == 0.0) {
      // Interpolating fit: fall back to the lambda -> 0 lasso solution.
      auto st0 = lasso_cd(M, y, nullptr, 0.0, pen, beta, spec.tolerance,
                          spec.max_iters);
      sweeps += st0.sweeps;
      converged = st0.converged;
      break;
    }
    if (std::abs(next_sigma - sigma) < 1e-8) {
      sigma = next_sigma;
      converged = st.converged;
      break;
    }
    sigma = next_sigma;
  }
  fit.coefficients = std::move(beta);
  fit.iterations = sweeps;
  fit.converged = converged;
  return fit;
}

}  // namespace detail

// Square-root lasso with unpenalized intercept:
//   ||y - b0 - X b||_2 / sqrt(r) + lambda ||b||_1.
inline SlopeFit fit_sqrt_lasso(const MatrixXd& X, const VectorXd& y,
                               double lambda, const LearnerSpec& spec = {}) {
  spec.validate();
  if (X.rows() < 1) throw std::invalid_argument("fit_sqrt_lasso: empty sample");
  if (X.rows() != y.size())
    throw std::invalid_argument("fit_sqrt_lasso: X/y row mismatch");
  if (!(lambda >= 0.0))
    throw std::invalid_argument("fit_sqrt_lasso: lambda must be >= 0");

  auto s = detail::standardize(X);
  SlopeFit fit = detail::sqrt_lasso_on_design(s.design, y, lambda, s.penalty, spec);
  fit.coefficients = s.to_raw(fit.coefficients);
  return fit;
}

inline SlopeFit fit_sqrt_lasso_design(const MatrixXd& M, const VectorXd& y,
                                      double lambda, const VectorXd& penalty,
                                      const LearnerSpec& spec = {}) {
  spec.validate();
  if (M.rows() < 1)
    throw std::invalid_argument("fit_sqrt_lasso_design: empty sample");
  if (penalty.size() != M.cols())
    throw std::invalid_argument("fit_sqrt_lasso_design: penalty size mismatch");
  return detail::sqrt_lasso_on_design(M, y, lambda, penalty, spec);
}

// Lasso with lambda chosen by cv_folds-fold cross-validation over a
// 100-point log grid from the kill threshold down to threshold * 1e-3.
// Fold assignment is round-robin (row j -> fold j mod cv_folds); among
// tied lambdas the smallest wins; the final fit uses all rows.
inline SlopeFit fit_lasso_cv(const MatrixXd& X, const VectorXd& y,
                             const LearnerSpec& spec = {}) {
  spec.validate();
  const Index r = X.rows();
  if (r != y.size()) throw std::invalid_argument("fit_lasso_cv: X/y row mismatch");
  if (r < spec.cv_folds)
    throw std::invalid_argument("fit_lasso_cv: fewer rows than cv folds");

  const double y_bar = y.mean();
  double lambda_max = 0.0;
  {
    const VectorXd yc = y.array() - y_bar;
    for (Index j = 0; j < X.cols(); ++j) {
      const double g =
          std::abs((X.col(j).array() - X.col(j).mean()).matrix().dot(yc)) /
          static_cast<double>(r);
      lambda_max = std::max(lambda_max, g);
    }
  }
  if (!(lambda_max > 0.0) || !std::isfinite(lambda_max)) {
    SlopeFit fit;
    fit.coefficients = VectorXd::Zero(X.cols() + 1);
    fit.coefficients[0] = y_bar;
    fit.solver = "lasso_cv";
    fit.lambda = 0.0;
    fit.converged = true;
    return fit;
  }

  constexpr int kGrid = 100;
  std::vector<double> grid(kGrid);
  for (int g = 0; g < kGrid; ++g)
    grid[static_cast<std::size_t>(g)] =
        lambda_max * std::pow(10.0, -3.0 * g / (kGrid - 1));

  std::vector<double> sse(kGrid, 0.0);
  int sweeps = 0;
  for (int f = 0; f < spec.cv_folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < r; ++i)
      (static_cast<int>(i % spec.cv_folds) == f ? test : train).push_back(i);
    const MatrixXd Xtr = take_rows(X, train);
    const VectorXd ytr = take(y, train);
    const MatrixXd Xte = take_rows(X, test);
    const VectorXd yte = take(y, test);

    auto s = detail::standardize(Xtr);
    VectorXd beta = VectorXd::Zero(Xtr.cols() + 1);
    // Path points are warm-started; a capped sweep budget per point is
    // plenty for out-of-fold scoring, and the chosen lambda is refit below
    // with the full budget.
    const int path_sweeps = std::min(spec.max_iters, 500);
    for (int g = 0; g < kGrid; ++g) {
      auto st = detail::lasso_cd(s.design, ytr, nullptr,
                                 grid[static_cast<std::size_t>(g)], s.penalty,
                                 beta, spec.tolerance, path_sweeps);
      sweeps += st.sweeps;
      const VectorXd raw = s.to_raw(beta);
      const VectorXd pred =
          (Xte * raw.tail(raw.size() - 1)).array() + raw[0];
      sse[static_cast<std::size_t>(g)] += (yte - pred).squaredNorm();
    }
  }

  int best = 0;
  for (int g = 1; g < kGrid; ++g)
    if (sse[static_cast<std::size_t>(g)] <= sse[static_cast<std::size_t>(best)])
      best = g;  // <= prefers the smaller lambda on exact ties

  SlopeFit fit = fit_lasso(X, y, grid[static_cast<std::size_t>(best)], spec);
  fit.solver = "lasso_cv";
  fit.iterations += sweeps;
  return fit;
}

// Ordinary least squares on [1 | X] via column-pivoted QR.
inline SlopeFit fit_ols(const MatrixXd& X, const VectorXd& y,
                        const LearnerSpec& spec = {}) {
  spec.validate();
  if (X.rows() < 1) throw std::invalid_argument("fit_ols: empty sample");
  MatrixXd M(X.rows(), X.cols() + 1);
  M.col(0).setOnes();
  M.rightCols(X.cols()) = X;
  SlopeFit fit;
  fit.coefficients = M.colPivHouseholderQr().solve(y);
  fit.solver = "ols";
  fit.lambda = 0.0;
  fit.converged = true;
  return fit;
}

// Ridge with unpenalized intercept:
//   (2r)^-1 ||y - b0 - X b||^2 + (lambda/2) ||b||_2^2.
inline SlopeFit fit_ridge(const MatrixXd& X, const VectorXd& y, double lambda,
                          const LearnerSpec& spec = {}) {
  spec.validate();
  if (X.rows() < 1) throw std::invalid_argument("fit_ridge: empty sample");
  if (!(lambda >= 0.0)) throw std::invalid_argument("fit_ridge: lambda must be >= 0");
  const Index r = X.rows();
  MatrixXd M(r, X.cols() + 1);
  M.col(0).setOnes();
  M.rightCols(X.cols()) = X;
  MatrixXd gram = M.transpose() * M / static_cast<double>(r);
  for (Index j = 1; j < gram.rows(); ++j) gram(j, j) += lambda;
  SlopeFit fit;
  fit.coefficients = gram.ldlt().solve(M.transpose() * y / static_cast<double>(r));
  fit.solver = "ridge";
  fit.lambda = lambda;
  fit.converged = true;
  return fit;
}

// Degenerate learner: all-zero coefficient vector of length q + 1.
inline SlopeFit fit_zero(Index q) {
  SlopeFit fit;
  fit.coefficients = VectorXd::Zero(q + 1);
  fit.solver = "zero";
  fit.converged = true;
  return fit;
}

// Dispatch on LearnerSpec for the standard raw-covariate path.
inline SlopeFit fit_slope(const MatrixXd& X, const VectorXd& y,
                          const LearnerSpec& spec) {
  spec.validate();
  const auto lam = [&]() -> double {
    switch (spec.lambda_rule) {
      case LambdaRule::fixed: return spec.lambda;
      case LambdaRule::auto_formula: return auto_lambda(X.cols() + 1, X.rows());
      case LambdaRule::cv:
        throw std::invalid_argument("fit_slope: cv handled per variant");
    }
    return 0.0;
  };
  switch (spec.variant) {
    case LearnerKind::lasso:
      if (spec.lambda_rule == LambdaRule::cv) return fit_lasso_cv(X, y, spec);
      return fit_lasso(X, y, lam(), spec);
    case LearnerKind::sqrt_lasso:
      if (spec.lambda_rule == LambdaRule::cv)
        throw std::invalid_argument("fit_slope: cv is not supported for sqrt_lasso");
      return fit_sqrt_lasso(X, y, lam(), spec);
    case LearnerKind::ridge:
      if (spec.lambda_rule == LambdaRule::cv)
        throw std::invalid_argument("fit_slope: cv is not supported for ridge");
      return fit_ridge(X, y, lam(), spec);
    case LearnerKind::ols: return fit_ols(X, y, spec);
    case LearnerKind::zero: return fit_zero(X.cols());
  }
  throw std::logic_error("fit_slope: unreachable");
}

// Dispatch for an explicit design with explicit penalty factors (used by
// the stacked-covariate pipeline, where two arm-indicator columns play the
// intercept role and stay unpenalized).
inline SlopeFit fit_slope_design(const MatrixXd& M, const VectorXd& y,
                                 const LearnerSpec& spec,
                                 const VectorXd& penalty) {
  spec.validate();
  const auto lam = [&]() -> double {
    if (spec.lambda_rule == LambdaRule::fixed) return spec.lambda;
    return auto_lambda(M.cols(), M.rows());
  };
  switch (spec.variant) {
    case LearnerKind::lasso:
      if (spec.lambda_rule == LambdaRule::cv)
        throw std::invalid_argument("fit_slope_design: cv unsupported on designs");
      return fit_lasso_design(M, y, lam(), penalty, spec);
    case LearnerKind::sqrt_lasso:
      if (spec.lambda_rule == LambdaRule::cv)
        throw std::invalid_argument("fit_slope_design: cv unsupported on designs");
      return fit_sqrt_lasso_design(M, y, lam(), penalty, spec);
    case LearnerKind::ridge: {
      const Index r = M.rows();
      MatrixXd gram = M.transpose() * M / static_cast<double>(r);
      for (Index j = 0; j < gram.rows(); ++j)
        if (penalty[j] > 0.0) gram(j, j) += lam() * penalty[j];
      SlopeFit fit;
      fit.coefficients = gram.ldlt().solve(M.transpose() * y / static_cast<double>(r));
      fit.solver = "ridge";
      fit.lambda = lam();
      fit.converged = true;
      return fit;
    }
    case LearnerKind::ols: {
      SlopeFit fit;
      fit.coefficients = M.colPivHouseholderQr().solve(y);
      fit.solver = "ols";
      fit.converged = true;
      return fit;
    }
    case LearnerKind::zero: {
      SlopeFit fit;
      fit.coefficients = VectorXd::Zero(M.cols());
      fit.solver = "zero";
      fit.converged = true;
      return fit;
    }
  }
  throw std::logic_error("fit_slope_design: unreachable");
}

// ---------------------------------------------------------------------------
// L1-penalized logistic regression for propensity scores.

struct PropensityFit {
  VectorXd coefficients;  // length p, intercept at index 0
  TrimBounds trim;
  std::string solver;
  double lambda = 0.0;
  int iterations = 0;
  bool converged = true;

  double logit(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return coefficients[0] + x.dot(coefficients.tail(coefficients.size() - 1));
  }

  // Trimmed propensity in [trim.lo, trim.hi].
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    const double e = 1.0 / (1.0 + std::exp(-logit(x)));
    return std::clamp(e, trim.lo, trim.hi);
  }

  // (e, 1-e) with 1-e evaluated as sigmoid(-logit) and mirrored trim
  // bounds, so relabeling the arms swaps the pair exactly.
  std::pair<double, double> predict_pair(
      const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    const double eta = logit(x);
    const double e = 1.0 / (1.0 + std::exp(-eta));
    const double ome = 1.0 / (1.0 + std::exp(eta));
    return {std::clamp(e, trim.lo, trim.hi),
            std::clamp(ome, 1.0 - trim.hi, 1.0 - trim.lo)};
  }
};

namespace detail {

// Average negative log-likelihood plus penalty, for tests and CV.
inline double logistic_objective(const MatrixXd& M, const VectorXd& d,
                                 double lambda, const VectorXd& pen,
                                 const VectorXd& beta) {
  const VectorXd eta = M * beta;
  double nll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) - d*eta, evaluated stably
    const double e = eta[i];
    nll += (e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) -
           d[i] * e;
  }
  nll /= static_cast<double>(M.rows());
  double l1 = 0.0;
  for (Index j = 0; j < M.cols(); ++j)
    if (pen[j] > 0.0 && std::isfinite(pen[j])) l1 += pen[j] * std::abs(beta[j]);
  return nll + lambda * l1;
}

// Proximal-Newton coordinate descent: quadratic expansion refreshed in an
// outer loop, penalized weighted least squares solved by lasso_cd inside.
// Residual d - p and curvature p(1-p) are evaluated through expressions
// that are exactly antisymmetric under d -> 1-d so that relabeled fits are
// bitwise negations of each other (beta starts at 0, which is symmetric).
inline CdStatus logistic_cd(const MatrixXd& M, const VectorXd& d, double lambda,
                            const VectorXd& pen, VectorXd& beta, double tol,
                            int max_sweeps) {
  const Index r = M.rows();
  constexpr double kMinCurv = 1e-6;
  CdStatus st;
  constexpr int kMaxOuter = 100;
  for (int outer = 0; outer < kMaxOuter && st.sweeps < max_sweeps; ++outer) {
    const VectorXd eta = M * beta;
    VectorXd w(r), z(r);
    for (Index i = 0; i < r; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-eta[i]));
      const double q = 1.0 / (1.0 + std::exp(eta[i]));
      const double sign = 2.0 * d[i] - 1.0;  // exact for d in {0,1}
      const double resid = sign / (1.0 + std::exp(sign * eta[i]));  // d - p
      const double curv = std::max(p * q, kMinCurv);
      w[i] = curv;
      z[i] = eta[i] + resid / curv;
    }
    const VectorXd before = beta;
    auto inner = lasso_cd(M, z, &w, lambda, pen, beta, tol,
                          std::min(10, max_sweeps - st.sweeps));
    st.sweeps += inner.sweeps;
    if ((beta - before).cwiseAbs().maxCoeff() < tol) {
      st.converged = true;
      break;
    }
  }
  return st;
}

}  // namespace detail

// L1-penalized logistic regression of a binary d on [1 | X]; predictions
// are trimmed to the given bounds.
inline PropensityFit fit_logistic_lasso(const MatrixXd& X, const VectorXd& d,
                                        const LearnerSpec& spec = {},
                                        const TrimBounds& trim = {}) {
  spec.validate();
  trim.validate();
  if (X.rows() != d.size())
    throw std::invalid_argument("fit_logistic_lasso: X/d row mismatch");
  require_binary(d, "fit_logistic_lasso");

  const Index r = X.rows();
  auto s = detail::standardize(X);

  const auto solve_at = [&](double lambda) {
    VectorXd beta = VectorXd::Zero(X.cols() + 1);
    auto st = detail::logistic_cd(s.design, d, lambda, s.penalty, beta,
                                  spec.tolerance, spec.max_iters);
    return std::make_pair(std::move(beta), st);
  };

  double lambda = 0.0;
  int cv_sweeps = 0;
  switch (spec.lambda_rule) {
    case LambdaRule::fixed: lambda = spec.lambda; break;
    case LambdaRule::auto_formula: lambda = auto_lambda(X.cols() + 1, r); break;
    case LambdaRule::cv: {
      if (r < spec.cv_folds)
        throw std::invalid_argument("fit_logistic_lasso: fewer rows than cv folds");
      const double d_bar = d.mean();
      double lambda_max = 0.0;
      for (Index j = 0; j < X.cols(); ++j) {
        const double g = std::abs((X.col(j).array() - X.col(j).mean())
                                      .matrix()
                                      .dot((d.array() - d_bar).matrix())) /
                         static_cast<double>(r);
        lambda_max = std::max(lambda_max, g);
      }
      if (!(lambda_max > 0.0)) {
        lambda = 0.0;
        break;
      }
      constexpr int kGrid = 100;
      std::vector<double> dev(kGrid, 0.0);
      for (int f = 0; f < spec.cv_folds; ++f) {
        std::vector<Index> train, test;
        for (Index i = 0; i < r; ++i)
          (static_cast<int>(i % spec.cv_folds) == f ? test : train).push_back(i);
        const MatrixXd Xtr = take_rows(X, train);
        const VectorXd dtr = take(d, train);
        const MatrixXd Xte = take_rows(X, test);
        const VectorXd dte = take(d, test);
        bool any0 = (dtr.array() == 0.0).any(), any1 = (dtr.array() == 1.0).any();
        if (!any0 || !any1) continue;  // degenerate CV fold, skip
        auto str = detail::standardize(Xtr);
        VectorXd beta = VectorXd::Zero(Xtr.cols() + 1);
        for (int g = 0; g < kGrid; ++g) {
          const double lam = lambda_max * std::pow(10.0, -3.0 * g / (kGrid - 1));
          auto st = detail::logistic_cd(str.design, dtr, lam, str.penalty, beta,
                                        spec.tolerance, spec.max_iters);
          cv_sweeps += st.sweeps;
          const VectorXd raw = str.to_raw(beta);
          const VectorXd eta =
              (Xte * raw.tail(raw.size() - 1)).array() + raw[0];
          double nll = 0.0;
          for (Index i = 0; i < eta.size(); ++i) {
            const double e = eta[i];
            nll += (e > 0.0 ? e + std::log1p(std::exp(-e))
                            : std::log1p(std::exp(e))) -
                   dte[i] * e;
          }
          dev[static_cast<std::size_t>(g)] += nll;
        }
      }
      int best = 0;
      for (int g = 1; g < kGrid; ++g)
        if (dev[static_cast<std::size_t>(g)] <= dev[static_cast<std::size_t>(best)])
          best = g;
      lambda = lambda_max * std::pow(10.0, -3.0 * best / (kGrid - 1));
      break;
    }
  }

  auto [beta, st] = solve_at(lambda);
  PropensityFit fit;
  fit.coefficients = s.to_raw(beta);
  fit.trim = trim;
  fit.solver = spec.lambda_rule == LambdaRule::cv ? "logistic_lasso_cv"
                                                  : "logistic_lasso";
  fit.lambda = lambda;
  fit.iterations = st.sweeps + cv_sweeps;
  fit.converged = st.converged;
  return fit;
}

}  // namespace ssinfer
