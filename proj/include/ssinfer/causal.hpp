#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssinfer/data.hpp"
#include "ssinfer/mean_variance.hpp"
#include "ssinfer/nuisance.hpp"
#include "ssinfer/stats.hpp"

namespace ssinfer {

// Pluggable propensity contract: a fitter maps complement rows (X, d) to a
// predictor of trimmed pairs (e, 1-e). Only L1-penalized logistic
// regression ships.
using PropensityPredictor = std::function<std::pair<double, double>(
    const Eigen::Ref<const Eigen::RowVectorXd>&)>;
using PropensityFitter =
    std::function<PropensityPredictor(const MatrixXd&, const VectorXd&)>;

inline PropensityFitter logistic_lasso_propensity(const LearnerSpec& spec,
                                                  const TrimBounds& trim) {
  return [spec, trim](const MatrixXd& x, const VectorXd& d) -> PropensityPredictor {
    PropensityFit fit = fit_logistic_lasso(x, d, spec, trim);
    return [fit = std::move(fit)](
               const Eigen::Ref<const Eigen::RowVectorXd>& row) {
      return fit.predict_pair(row);
    };
  };
}

// Fold-complement nuisances for the weighted estimators. propensity_pairs
// row i holds the trimmed (e, 1-e) evaluated at labeled row i by the fit
// that excluded i's fold.
struct AteNuisances {
  std::vector<VectorXd> beta1;  // per fold, length p
  std::vector<VectorXd> beta0;
  MatrixXd propensity_pairs;  // n x 2
};

struct AteInference {
  double delta_hat = 0.0;
  double tau1_hat = 0.0;
  double tau0_hat = 0.0;
  VectorXd per_fold;  // delta_hat^(k)
  double v1 = 0.0;
  double v2 = 0.0;
  double v_delta = 0.0;
  ConfidenceInterval ci;
  Index n = 0, m = 0;
  int k = 0;
  double alpha = 0.0;
};

namespace detail {

// Per-observation terms retained for the effect-size estimator.
struct AteTerms {
  AteInference inference;
  VectorXd nu_delta;  // per labeled row
  VectorXd xi_delta;
};

inline AteTerms ate_core(const MatrixXd& xt, const VectorXd& y,
                         const VectorXd& d, const VectorXd& mu_hat, Index m,
                         const FoldPartition& partition,
                         const AteNuisances& nuis, double alpha) {
  const Index n = xt.rows();
  const int K = partition.k();
  if (static_cast<int>(nuis.beta1.size()) != K ||
      static_cast<int>(nuis.beta0.size()) != K ||
      nuis.propensity_pairs.rows() != n)
    throw std::invalid_argument("estimate_ate: nuisance shapes do not match");
  for (const auto& b : nuis.beta1)
    if (b.size() != xt.cols())
      throw std::invalid_argument("estimate_ate: slope length mismatch");
  AteTerms out;
  out.nu_delta.resize(n);
  out.xi_delta.resize(n);

  VectorXd tau1(K), tau0(K);
  for (int k = 0; k < K; ++k) {
    const auto rows = partition.fold_rows(k);
    const VectorXd& b1 = nuis.beta1[static_cast<std::size_t>(k)];
    const VectorXd& b0 = nuis.beta0[static_cast<std::size_t>(k)];
    double acc1 = 0.0, acc0 = 0.0;
    for (Index i : rows) {
      const double r_i = d[i] / nuis.propensity_pairs(i, 0);
      const double rho_i = (1.0 - d[i]) / nuis.propensity_pairs(i, 1);
      acc1 += r_i * (y[i] - xt.row(i).dot(b1));
      acc0 += rho_i * (y[i] - xt.row(i).dot(b0));
    }
    const double nk = static_cast<double>(rows.size());
    tau1[k] = b1.dot(mu_hat) + acc1 / nk;
    tau0[k] = b0.dot(mu_hat) + acc0 / nk;
  }

  AteInference& inf = out.inference;
  inf.tau1_hat = tau1.mean();
  inf.tau0_hat = tau0.mean();
  inf.delta_hat = inf.tau1_hat - inf.tau0_hat;
  inf.per_fold = tau1 - tau0;

  double v1_sum = 0.0, v2_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto rows = partition.fold_rows(k);
    const VectorXd& b1 = nuis.beta1[static_cast<std::size_t>(k)];
    const VectorXd& b0 = nuis.beta0[static_cast<std::size_t>(k)];
    const VectorXd diff = b1 - b0;
    const double mu_diff = diff.dot(mu_hat);
    const double e_delta = inf.delta_hat - mu_diff;
    double nu_sq = 0.0, xi_sq = 0.0;
    for (Index i : rows) {
      const double r_i = d[i] / nuis.propensity_pairs(i, 0);
      const double rho_i = (1.0 - d[i]) / nuis.propensity_pairs(i, 1);
      const double nu = r_i * (y[i] - xt.row(i).dot(b1)) -
                        rho_i * (y[i] - xt.row(i).dot(b0)) - e_delta;
      const double xi = xt.row(i).dot(diff) - mu_diff;
      out.nu_delta[i] = nu;
      out.xi_delta[i] = xi;
      nu_sq += nu * nu;
      xi_sq += xi * xi;
    }
    const double nk = static_cast<double>(rows.size());
    v1_sum += nu_sq / nk;
    v2_sum += xi_sq / nk;
  }
  inf.v1 = v1_sum / K;
  inf.v2 = v2_sum / K;
  const double tau = static_cast<double>(n) / static_cast<double>(m);
  inf.v_delta = inf.v1 + tau * inf.v2;
  const double half =
      z_two_sided(alpha) * std::sqrt(inf.v_delta / static_cast<double>(n));
  inf.ci = {inf.delta_hat - half, inf.delta_hat + half};
  inf.n = n;
  inf.m = m;
  inf.k = K;
  inf.alpha = alpha;
  return out;
}

// Fits the per-fold outcome slopes (one per arm, on that arm's complement
// rows) and the complement propensity, evaluating trimmed pairs on the
// held-out fold.
inline AteNuisances fit_ate_nuisances(const CausalLabeledSet& labeled,
                                      const FoldPartition& partition,
                                      const LearnerSpec& outcome_learner,
                                      const PropensityFitter& propensity) {
  const Index n = labeled.n();
  const int K = partition.k();
  AteNuisances nuis;
  nuis.propensity_pairs.resize(n, 2);

  for (int k = 0; k < K; ++k) {
    const auto comp = partition.complement_rows(k);
    std::vector<Index> treated, control;
    for (Index i : comp)
      (labeled.treatments[i] == 1.0 ? treated : control).push_back(i);
    if (treated.empty() || control.empty())
      throw std::runtime_error(
          "estimate_ate: fold " + std::to_string(k) + ": " +
          (treated.empty() ? "treated" : "control") +
          " arm absent from the fold complement");
    try {
      nuis.beta1.push_back(fit_slope(take_rows(labeled.covariates, treated),
                                     take(labeled.responses, treated),
                                     outcome_learner)
                               .coefficients);
      nuis.beta0.push_back(fit_slope(take_rows(labeled.covariates, control),
                                     take(labeled.responses, control),
                                     outcome_learner)
                               .coefficients);
      const auto predictor = propensity(take_rows(labeled.covariates, comp),
                                        take(labeled.treatments, comp));
      for (Index i : partition.fold_rows(k)) {
        const auto pair = predictor(labeled.covariates.row(i));
        nuis.propensity_pairs(i, 0) = pair.first;
        nuis.propensity_pairs(i, 1) = pair.second;
      }
    } catch (const std::runtime_error&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error("estimate_ate: fold " + std::to_string(k) +
                               ": " + e.what());
    }
  }
  return nuis;
}

}  // namespace detail

// Inverse-propensity-weighted semi-supervised ATE with explicit nuisances.
inline AteInference estimate_ate(const CausalLabeledSet& labeled,
                                 const CausalUnlabeledSet& unlabeled,
                                 const FoldPartition& partition,
                                 const AteNuisances& nuisances, double alpha) {
  if (labeled.dim() != unlabeled.dim())
    throw std::invalid_argument("estimate_ate: labeled/unlabeled column mismatch");
  if (partition.n() != labeled.n())
    throw std::invalid_argument("estimate_ate: partition size mismatch");
  const MatrixXd xt = augment(labeled.covariates);
  const VectorXd mu_hat =
      augment(unlabeled.covariates).colwise().mean().transpose();
  return detail::ate_core(xt, labeled.responses, labeled.treatments, mu_hat,
                          unlabeled.m(), partition, nuisances, alpha)
      .inference;
}

inline AteInference estimate_ate(const CausalLabeledSet& labeled,
                                 const CausalUnlabeledSet& unlabeled,
                                 const FoldPartition& partition,
                                 const LearnerSpec& outcome_learner,
                                 const PropensityFitter& propensity,
                                 double alpha) {
  return estimate_ate(
      labeled, unlabeled, partition,
      detail::fit_ate_nuisances(labeled, partition, outcome_learner, propensity),
      alpha);
}

inline AteInference estimate_ate(const CausalLabeledSet& labeled,
                                 const CausalUnlabeledSet& unlabeled,
                                 const FoldPartition& partition,
                                 const LearnerSpec& outcome_learner,
                                 const LearnerSpec& propensity_learner,
                                 double alpha, const TrimBounds& trim = {}) {
  return estimate_ate(labeled, unlabeled, partition, outcome_learner,
                      logistic_lasso_propensity(propensity_learner, trim),
                      alpha);
}

// ---------------------------------------------------------------------------
// Treatment effect size d = delta / sigma.

struct TesInference {
  double d_hat = 0.0;
  double sigma_hat = 0.0;  // semi-supervised sd of Y from the stacked pipeline
  double delta_hat = 0.0;
  double v3 = 0.0;
  double v4 = 0.0;
  double v_d = 0.0;
  ConfidenceInterval ci;
  bool degenerate = false;  // sigma_hat clipped to 0; d_hat forced to 0
  Index n = 0, m = 0;
  int k = 0;
  double alpha = 0.0;
};

// Stacks (d * x~, (1-d) * x~) into rows of length 2p.
inline MatrixXd stack_treatment_covariates(const VectorXd& d,
                                           const MatrixXd& covariates) {
  const MatrixXd xt = augment(covariates);
  const Index p = xt.cols();
  MatrixXd w(xt.rows(), 2 * p);
  for (Index i = 0; i < xt.rows(); ++i) {
    w.row(i).head(p) = d[i] * xt.row(i);
    w.row(i).tail(p) = (1.0 - d[i]) * xt.row(i);
  }
  return w;
}

// Effect size from explicit weighted-estimator nuisances; the
// stacked-covariate slopes are still fit here with `outcome_learner`.
inline TesInference estimate_tes(const CausalLabeledSet& labeled,
                                 const CausalUnlabeledSet& unlabeled,
                                 const FoldPartition& partition,
                                 const LearnerSpec& outcome_learner,
                                 const AteNuisances& nuis, double alpha) {
  if (labeled.dim() != unlabeled.dim())
    throw std::invalid_argument("estimate_tes: labeled/unlabeled column mismatch");
  if (partition.n() != labeled.n())
    throw std::invalid_argument("estimate_tes: partition size mismatch");

  const Index n = labeled.n();
  const Index m = unlabeled.m();
  const int K = partition.k();

  const MatrixXd xt = augment(labeled.covariates);
  const VectorXd mu_hat =
      augment(unlabeled.covariates).colwise().mean().transpose();
  const auto ate = detail::ate_core(xt, labeled.responses, labeled.treatments,
                                    mu_hat, m, partition, nuis, alpha);

  // Variance of Y through the stacked-covariate pipeline; the two
  // arm-indicator columns play the intercept role and are unpenalized.
  const MatrixXd wl = stack_treatment_covariates(labeled.treatments,
                                                 labeled.covariates);
  const MatrixXd wu = stack_treatment_covariates(unlabeled.treatments,
                                                 unlabeled.covariates);
  const MomentCache cache_w = moment_cache_rows(wu);
  const Index p = xt.cols();
  VectorXd penalty = VectorXd::Ones(2 * p);
  penalty[0] = 0.0;
  penalty[p] = 0.0;

  std::vector<VectorXd> slopes_w;
  slopes_w.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const auto comp = partition.complement_rows(k);
    try {
      slopes_w.push_back(fit_slope_design(take_rows(wl, comp),
                                          take(labeled.responses, comp),
                                          outcome_learner, penalty)
                             .coefficients);
    } catch (const std::exception& e) {
      throw std::runtime_error("estimate_tes: fold " + std::to_string(k) +
                               ": " + e.what());
    }
  }

  const auto mean_w = detail::mean_core(wl, labeled.responses, cache_w,
                                        partition, slopes_w);
  const auto var_w = detail::variance_core(wl, labeled.responses, cache_w,
                                           partition, slopes_w, mean_w.theta);

  TesInference inf;
  inf.delta_hat = ate.inference.delta_hat;
  inf.n = n;
  inf.m = m;
  inf.k = K;
  inf.alpha = alpha;

  if (!(var_w.sigma_y_sq > 0.0)) {
    // Degenerate scale: d is 0 by the indicator; no usable interval.
    inf.sigma_hat = 0.0;
    inf.d_hat = 0.0;
    inf.degenerate = true;
    inf.ci = {0.0, 0.0};
    return inf;
  }

  const double sigma = std::sqrt(var_w.sigma_y_sq);
  inf.sigma_hat = sigma;
  inf.d_hat = ate.inference.delta_hat / sigma;

  const double cube = 2.0 * sigma * sigma * sigma;
  double v3_sum = 0.0, v4_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto rows = partition.fold_rows(k);
    double nu_sq = 0.0, xi_sq = 0.0;
    for (Index i : rows) {
      const double nu_d = ate.nu_delta[i] / sigma -
                          ate.inference.delta_hat * var_w.nu[i] / cube;
      const double xi_d = ate.xi_delta[i] / sigma -
                          ate.inference.delta_hat * var_w.xi[i] / cube;
      nu_sq += nu_d * nu_d;
      xi_sq += xi_d * xi_d;
    }
    const double nk = static_cast<double>(rows.size());
    v3_sum += nu_sq / nk;
    v4_sum += xi_sq / nk;
  }
  inf.v3 = v3_sum / K;
  inf.v4 = v4_sum / K;
  inf.v_d = inf.v3 + static_cast<double>(n) / static_cast<double>(m) * inf.v4;
  const double half =
      z_two_sided(alpha) * std::sqrt(inf.v_d / static_cast<double>(n));
  inf.ci = {inf.d_hat - half, inf.d_hat + half};
  return inf;
}

inline TesInference estimate_tes(const CausalLabeledSet& labeled,
                                 const CausalUnlabeledSet& unlabeled,
                                 const FoldPartition& partition,
                                 const LearnerSpec& outcome_learner,
                                 const PropensityFitter& propensity,
                                 double alpha) {
  return estimate_tes(labeled, unlabeled, partition, outcome_learner,
                      detail::fit_ate_nuisances(labeled, partition,
                                                outcome_learner, propensity),
                      alpha);
}

inline TesInference estimate_tes(const CausalLabeledSet& labeled,
                                 const CausalUnlabeledSet& unlabeled,
                                 const FoldPartition& partition,
                                 const LearnerSpec& outcome_learner,
                                 const LearnerSpec& propensity_learner,
                                 double alpha, const TrimBounds& trim = {}) {
  return estimate_tes(labeled, unlabeled, partition, outcome_learner,
                      logistic_lasso_propensity(propensity_learner, trim),
                      alpha);
}

// Unadjusted contrast of arm means.
inline double sample_ate_baseline(const CausalLabeledSet& labeled) {
  double sum1 = 0.0, sum0 = 0.0;
  Index n1 = 0, n0 = 0;
  for (Index i = 0; i < labeled.n(); ++i) {
    if (labeled.treatments[i] == 1.0) {
      sum1 += labeled.responses[i];
      ++n1;
    } else {
      sum0 += labeled.responses[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0)
    throw std::invalid_argument("sample_ate_baseline: one arm is empty");
  return sum1 / static_cast<double>(n1) - sum0 / static_cast<double>(n0);
}

}  // namespace ssinfer
