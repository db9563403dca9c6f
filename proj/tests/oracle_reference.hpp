// Test-only reference evaluators. Each function is a naive, straight-line
// transcription of the estimator definitions, kept independent of the
// library's computation paths so the two can be compared.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ssinfer/data.hpp"
#include "ssinfer/stats.hpp"

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct MeanResult {
  double theta = 0.0;
  std::vector<double> per_fold;
  double sigma_eps_sq = 0.0;
  double b_sq = 0.0;
};

struct VarianceResult {
  double sigma_y_sq = 0.0;
  double sigma_xi_sq = 0.0;
  double sigma_nu_sq = 0.0;
};

inline MatrixXd augmented(const MatrixXd& x) {
  MatrixXd xt(x.rows(), x.cols() + 1);
  for (Index i = 0; i < x.rows(); ++i) {
    xt(i, 0) = 1.0;
    for (Index j = 0; j < x.cols(); ++j) xt(i, j + 1) = x(i, j);
  }
  return xt;
}

inline VectorXd unlabeled_mu(const MatrixXd& unlabeled_x) {
  const MatrixXd xt = augmented(unlabeled_x);
  VectorXd mu = VectorXd::Zero(xt.cols());
  for (Index i = 0; i < xt.rows(); ++i) mu += xt.row(i).transpose();
  return mu / static_cast<double>(xt.rows());
}

inline MatrixXd unlabeled_c(const MatrixXd& unlabeled_x) {
  const MatrixXd xt = augmented(unlabeled_x);
  const VectorXd mu = unlabeled_mu(unlabeled_x);
  MatrixXd c = MatrixXd::Zero(xt.cols(), xt.cols());
  for (Index i = 0; i < xt.rows(); ++i) {
    const VectorXd v = xt.row(i).transpose() - mu;
    c += v * v.transpose();
  }
  return c / static_cast<double>(xt.rows());
}

inline MeanResult mean(const MatrixXd& labeled_x, const VectorXd& y,
                       const VectorXd& mu, const MatrixXd& c,
                       const std::vector<std::vector<Index>>& folds,
                       const std::vector<VectorXd>& slopes) {
  const MatrixXd xt = augmented(labeled_x);
  const int K = static_cast<int>(folds.size());
  MeanResult res;

  for (int k = 0; k < K; ++k) {
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    double sum = 0.0;
    for (Index i : folds[static_cast<std::size_t>(k)])
      sum += y[i] - xt.row(i).dot(beta);
    res.per_fold.push_back(
        mu.dot(beta) +
        sum / static_cast<double>(folds[static_cast<std::size_t>(k)].size()));
  }
  for (double t : res.per_fold) res.theta += t;
  res.theta /= K;

  for (int k = 0; k < K; ++k) {
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    const auto& fold = folds[static_cast<std::size_t>(k)];
    double eps_sq = 0.0, cross = 0.0;
    for (Index i : fold) {
      const VectorXd v = xt.row(i).transpose() - mu;
      const double eps = y[i] - res.theta - beta.dot(v);
      eps_sq += eps * eps;
      cross += beta.dot(v) * eps;
    }
    res.sigma_eps_sq += eps_sq / static_cast<double>(fold.size());
    res.b_sq += beta.dot(c * beta) +
                2.0 * cross / static_cast<double>(fold.size());
  }
  res.sigma_eps_sq /= K;
  res.b_sq /= K;
  return res;
}

inline VarianceResult variance(const MatrixXd& labeled_x, const VectorXd& y,
                               const VectorXd& mu, const MatrixXd& c,
                               const std::vector<std::vector<Index>>& folds,
                               const std::vector<VectorXd>& slopes,
                               double theta) {
  const MatrixXd xt = augmented(labeled_x);
  const int K = static_cast<int>(folds.size());
  const Index n = labeled_x.rows();
  VarianceResult res;

  for (int k = 0; k < K; ++k) {
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    const auto& fold = folds[static_cast<std::size_t>(k)];
    double sum = 0.0;
    for (Index i : fold) {
      const VectorXd v = xt.row(i).transpose() - mu;
      sum += (y[i] - theta) * (y[i] - theta) +
             beta.dot((c - v * v.transpose()) * beta);
    }
    res.sigma_y_sq += sum / static_cast<double>(fold.size());
  }
  res.sigma_y_sq /= K;

  for (int k = 0; k < K; ++k) {
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    for (Index i : folds[static_cast<std::size_t>(k)]) {
      const VectorXd v = xt.row(i).transpose() - mu;
      const double eps = y[i] - theta - beta.dot(v);
      const double xi = beta.dot((v * v.transpose() - c) * beta);
      const double eta = eps * eps + 2.0 * beta.dot(v) * eps + beta.dot(c * beta);
      const double nu = eta - res.sigma_y_sq;
      res.sigma_xi_sq += xi * xi;
      res.sigma_nu_sq += nu * nu;
    }
  }
  res.sigma_xi_sq /= static_cast<double>(n);
  res.sigma_nu_sq /= static_cast<double>(n);
  return res;
}

struct AteResult {
  double delta = 0.0;
  double tau1 = 0.0;
  double tau0 = 0.0;
  double v1 = 0.0;
  double v2 = 0.0;
  double v_delta = 0.0;
};

inline AteResult ate(const MatrixXd& labeled_x, const VectorXd& y,
                     const VectorXd& d, const VectorXd& mu, Index m,
                     const std::vector<std::vector<Index>>& folds,
                     const std::vector<VectorXd>& beta1,
                     const std::vector<VectorXd>& beta0,
                     const MatrixXd& propensity_pairs) {
  const MatrixXd xt = augmented(labeled_x);
  const int K = static_cast<int>(folds.size());
  const Index n = labeled_x.rows();
  AteResult res;

  std::vector<double> tau1_k, tau0_k;
  for (int k = 0; k < K; ++k) {
    const auto& fold = folds[static_cast<std::size_t>(k)];
    double s1 = 0.0, s0 = 0.0;
    for (Index i : fold) {
      const double r = d[i] / propensity_pairs(i, 0);
      const double rho = (1.0 - d[i]) / propensity_pairs(i, 1);
      s1 += r * (y[i] - xt.row(i).dot(beta1[static_cast<std::size_t>(k)]));
      s0 += rho * (y[i] - xt.row(i).dot(beta0[static_cast<std::size_t>(k)]));
    }
    tau1_k.push_back(beta1[static_cast<std::size_t>(k)].dot(mu) +
                     s1 / static_cast<double>(fold.size()));
    tau0_k.push_back(beta0[static_cast<std::size_t>(k)].dot(mu) +
                     s0 / static_cast<double>(fold.size()));
  }
  for (int k = 0; k < K; ++k) {
    res.tau1 += tau1_k[static_cast<std::size_t>(k)];
    res.tau0 += tau0_k[static_cast<std::size_t>(k)];
  }
  res.tau1 /= K;
  res.tau0 /= K;
  res.delta = res.tau1 - res.tau0;

  for (int k = 0; k < K; ++k) {
    const auto& fold = folds[static_cast<std::size_t>(k)];
    const VectorXd diff = beta1[static_cast<std::size_t>(k)] -
                          beta0[static_cast<std::size_t>(k)];
    const double e_delta = res.delta - diff.dot(mu);
    double nu_sq = 0.0, xi_sq = 0.0;
    for (Index i : fold) {
      const double r = d[i] / propensity_pairs(i, 0);
      const double rho = (1.0 - d[i]) / propensity_pairs(i, 1);
      const double nu =
          r * (y[i] - xt.row(i).dot(beta1[static_cast<std::size_t>(k)])) -
          rho * (y[i] - xt.row(i).dot(beta0[static_cast<std::size_t>(k)])) -
          e_delta;
      const double xi = diff.dot(xt.row(i).transpose() - mu);
      nu_sq += nu * nu;
      xi_sq += xi * xi;
    }
    res.v1 += nu_sq / static_cast<double>(fold.size());
    res.v2 += xi_sq / static_cast<double>(fold.size());
  }
  res.v1 /= K;
  res.v2 /= K;
  res.v_delta = res.v1 + static_cast<double>(n) / static_cast<double>(m) * res.v2;
  return res;
}

}  // namespace oracle
