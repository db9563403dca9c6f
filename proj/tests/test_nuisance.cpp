#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "ssinfer/nuisance.hpp"
#include "ssinfer/rng.hpp"
#include "ssinfer/stats.hpp"

using namespace ssinfer;

namespace {

MatrixXd random_matrix(Rng& rng, Index r, Index q, double scale = 1.0) {
  MatrixXd m(r, q);
  for (Index i = 0; i < m.size(); ++i)
    m.data()[i] = scale * draw_normal(rng);
  return m;
}

double kill_threshold(const MatrixXd& x, const VectorXd& y) {
  const VectorXd yc = y.array() - y.mean();
  double lam = 0.0;
  for (Index j = 0; j < x.cols(); ++j)
    lam = std::max(lam, std::abs((x.col(j).array() - x.col(j).mean())
                                     .matrix()
                                     .dot(yc)) /
                            static_cast<double>(x.rows()));
  return lam;
}

// KKT residuals of (2r)^-1 ||y - b0 - X b||^2 + lambda ||b||_1 in raw scale.
void check_kkt(const MatrixXd& x, const VectorXd& y, double lambda,
               const SlopeFit& fit, double tol) {
  REQUIRE(fit.converged);
  const Index r = x.rows();
  VectorXd resid = y;
  resid.array() -= fit.coefficients[0];
  resid -= x * fit.coefficients.tail(x.cols());
  CHECK(std::abs(resid.sum() / static_cast<double>(r)) < tol);  // intercept
  for (Index j = 0; j < x.cols(); ++j) {
    const double g = x.col(j).dot(resid) / static_cast<double>(r);
    const double b = fit.coefficients[j + 1];
    if (b == 0.0) {
      CHECK(std::abs(g) <= lambda + tol);
    } else {
      CHECK(std::abs(g - lambda * (b > 0 ? 1.0 : -1.0)) < tol);
    }
  }
}

}  // namespace

TEST_CASE("lasso kill condition zeroes every slope") {
  Rng rng(31);
  const MatrixXd x = random_matrix(rng, 25, 8);
  VectorXd y = random_matrix(rng, 25, 1).col(0);
  const double lam = kill_threshold(x, y);
  const auto fit = fit_lasso(x, y, lam * 1.000001);
  CHECK(fit.coefficients.tail(8).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(fit.coefficients[0] - y.mean()) < 1e-12);
}

TEST_CASE("lasso at lambda 0 matches the normal-equations oracle") {
  Rng rng(77);
  const MatrixXd x = random_matrix(rng, 20, 3);
  VectorXd beta_true(3);
  beta_true << 1.5, -2.0, 0.3;
  VectorXd y = x * beta_true;
  y.array() += 0.7;
  for (Index i = 0; i < y.size(); ++i) y[i] += 0.1 * draw_normal(rng);

  // Oracle: solve the normal equations for [1 | X] directly.
  MatrixXd m(20, 4);
  m.col(0).setOnes();
  m.rightCols(3) = x;
  const VectorXd oracle = (m.transpose() * m).ldlt().solve(m.transpose() * y);

  LearnerSpec spec;
  spec.tolerance = 1e-10;
  const auto fit = fit_lasso(x, y, 0.0, spec);
  CHECK((fit.coefficients - oracle).cwiseAbs().maxCoeff() /
            std::max(1.0, oracle.cwiseAbs().maxCoeff()) <
        1e-6);

  const auto ols = fit_ols(x, y);
  CHECK((ols.coefficients - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("lasso on a zero response returns zero coefficients") {
  Rng rng(5);
  const MatrixXd x = random_matrix(rng, 10, 4);
  const auto fit = fit_lasso(x, VectorXd::Zero(10), 0.3);
  CHECK(fit.coefficients.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lasso satisfies its KKT conditions") {
  Rng rng(123);
  for (double lambda : {0.02, 0.1, 0.5}) {
    const MatrixXd x = random_matrix(rng, 40, 12, 2.0);
    VectorXd y = x.leftCols(3) * VectorXd::Ones(3);
    for (Index i = 0; i < y.size(); ++i) y[i] += draw_normal(rng);
    LearnerSpec spec;
    spec.tolerance = 1e-10;
    const auto fit = fit_lasso(x, y, lambda, spec);
    check_kkt(x, y, lambda, fit, 1e-6);
  }
}

TEST_CASE("coordinate-descent sweeps never increase the objective") {
  Rng rng(9);
  const MatrixXd x = random_matrix(rng, 30, 10);
  VectorXd y = x.col(0) - x.col(1);
  for (Index i = 0; i < y.size(); ++i) y[i] += draw_normal(rng);

  auto s = detail::standardize(x);
  VectorXd beta = VectorXd::Zero(11);
  double prev = detail::lasso_objective(s.design, y, 0.05, s.penalty, beta);
  for (int sweep = 0; sweep < 40; ++sweep) {
    detail::lasso_cd(s.design, y, nullptr, 0.05, s.penalty, beta, 0.0, 1);
    const double obj = detail::lasso_objective(s.design, y, 0.05, s.penalty, beta);
    CHECK(obj <= prev + 1e-12);
    prev = obj;
  }
}

TEST_CASE("sqrt-lasso is scale equivariant") {
  Rng rng(55);
  const MatrixXd x = random_matrix(rng, 30, 10);
  VectorXd y = x.col(2) * 2.0;
  for (Index i = 0; i < y.size(); ++i) y[i] += draw_normal(rng);
  LearnerSpec spec;
  spec.tolerance = 1e-11;
  const double lambda = 0.2;
  const auto base = fit_sqrt_lasso(x, y, lambda, spec);
  for (double a : {2.0, 3.0, 0.25}) {
    const auto scaled = fit_sqrt_lasso(x, a * y, lambda, spec);
    CHECK((scaled.coefficients - a * base.coefficients).cwiseAbs().maxCoeff() <
          1e-6 * std::max(1.0, std::abs(a)));
  }
}

TEST_CASE("sqrt-lasso with a huge penalty keeps only the intercept") {
  Rng rng(65);
  const MatrixXd x = random_matrix(rng, 20, 6);
  VectorXd y = random_matrix(rng, 20, 1).col(0);
  const auto fit = fit_sqrt_lasso(x, y, 1e6, {});
  CHECK(fit.coefficients.tail(6).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(fit.coefficients[0] - y.mean()) < 1e-10);
}

TEST_CASE("the tuning formula reproduces the design-scale value") {
  // sqrt(log(500) / 50), frozen by direct arithmetic.
  CHECK(std::abs(auto_lambda(500, 50) - 0.35255) < 1e-5);
}

TEST_CASE("sqrt-lasso solves the scaled stationarity conditions") {
  Rng rng(91);
  const MatrixXd x = random_matrix(rng, 50, 8);
  VectorXd y = x.col(0) * 1.2;
  for (Index i = 0; i < y.size(); ++i) y[i] += draw_normal(rng);
  LearnerSpec spec;
  spec.tolerance = 1e-11;
  const double lambda = 0.15;
  const auto fit = fit_sqrt_lasso(x, y, lambda, spec);
  VectorXd resid = y;
  resid.array() -= fit.coefficients[0];
  resid -= x * fit.coefficients.tail(8);
  const double sigma = resid.norm() / std::sqrt(50.0);
  REQUIRE(sigma > 0.0);
  check_kkt(x, y, lambda * sigma, fit, 1e-6);
}

TEST_CASE("cv lasso keeps pure noise close to zero") {
  // Monte Carlo oracle: with no signal the selected fits carry little
  // slope mass on average (individual reps can pick an interior lambda).
  Rng rng(333);
  double total = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const MatrixXd x = random_matrix(rng, 100, 200);
    VectorXd y(100);
    for (Index i = 0; i < y.size(); ++i) y[i] = draw_normal(rng);
    const auto fit = fit_lasso_cv(x, y);
    const double norm = fit.coefficients.tail(200).norm();
    total += norm;
    CHECK(norm < 1.5);
  }
  CHECK(total / 20 < 0.5);
}

TEST_CASE("cv lasso finds signal when it exists") {
  Rng rng(444);
  const MatrixXd x = random_matrix(rng, 200, 5);
  VectorXd beta_true(5);
  beta_true << 2, -1, 0.5, 0, 0;
  VectorXd y = x * beta_true;
  for (Index i = 0; i < y.size(); ++i) y[i] += 0.3 * draw_normal(rng);
  const auto fit = fit_lasso_cv(x, y);
  CHECK(fit.lambda < 0.99 * kill_threshold(x, y));
  CHECK((fit.coefficients.tail(5) - beta_true).norm() < 0.3);
}

TEST_CASE("cv lasso on a constant response has zero slopes") {
  Rng rng(17);
  const MatrixXd x = random_matrix(rng, 30, 4);
  const auto fit = fit_lasso_cv(x, VectorXd::Constant(30, 3.5));
  CHECK(fit.coefficients.tail(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(fit.coefficients[0] - 3.5) < 1e-12);
}

TEST_CASE("cv lasso validates the fold count") {
  Rng rng(3);
  const MatrixXd x = random_matrix(rng, 5, 2);
  LearnerSpec spec;
  spec.cv_folds = 10;
  CHECK_THROWS_AS(fit_lasso_cv(x, VectorXd::Zero(5), spec), std::invalid_argument);
}

TEST_CASE("zero learner returns zeros of the right length") {
  const auto fit = fit_zero(7);
  CHECK(fit.coefficients.size() == 8);
  CHECK(fit.coefficients.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ridge approaches ols as the penalty vanishes") {
  Rng rng(21);
  const MatrixXd x = random_matrix(rng, 40, 3);
  VectorXd y = x.col(0);
  for (Index i = 0; i < y.size(); ++i) y[i] += 0.2 * draw_normal(rng);
  const auto ridge = fit_ridge(x, y, 1e-10);
  const auto ols = fit_ols(x, y);
  CHECK((ridge.coefficients - ols.coefficients).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("fit_slope rejects cv with sqrt-lasso") {
  LearnerSpec spec;
  spec.variant = LearnerKind::sqrt_lasso;
  spec.lambda_rule = LambdaRule::cv;
  Rng rng(1);
  const MatrixXd x = random_matrix(rng, 20, 2);
  CHECK_THROWS_AS(fit_slope(x, VectorXd::Zero(20), spec), std::invalid_argument);
}

TEST_CASE("logistic lasso trims predictions into the configured bounds") {
  Rng rng(808);
  const Index r = 200;
  const MatrixXd x = random_matrix(rng, r, 3, 3.0);
  VectorXd d(r);
  for (Index i = 0; i < r; ++i)
    d[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-2.0 * x(i, 0))) ? 1.0 : 0.0;
  LearnerSpec spec;
  spec.lambda_rule = LambdaRule::fixed;
  spec.lambda = 0.01;
  const auto fit = fit_logistic_lasso(x, d, spec);
  for (Index i = 0; i < r; ++i) {
    const auto [e, ome] = fit.predict_pair(x.row(i));
    CHECK(e >= 0.01);
    CHECK(e <= 0.99);
    CHECK(ome >= 0.01);
    CHECK(ome <= 0.99);
    CHECK(std::abs(e + ome - 1.0) < 1e-12);
  }
  // Extreme inputs clip at the bounds.
  Eigen::RowVectorXd far(3);
  far << 100.0, 0.0, 0.0;
  CHECK(fit.predict(far) == 0.99);
}

TEST_CASE("logistic lasso on independent treatment is near the base rate") {
  // Monte Carlo oracle: d independent of x, so the fit should reduce to
  // roughly the intercept-only rate.
  Rng rng(909);
  const Index r = 500;
  const MatrixXd x = random_matrix(rng, r, 5);
  VectorXd d(r);
  for (Index i = 0; i < r; ++i) d[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const auto fit = fit_logistic_lasso(x, d);
  const double rate = d.mean();
  for (int t = 0; t < 20; ++t) {
    Eigen::RowVectorXd probe(5);
    for (Index j = 0; j < 5; ++j) probe[j] = draw_normal(rng);
    CHECK(std::abs(fit.predict(probe) - rate) < 0.05);
  }
}

TEST_CASE("logistic lasso with a huge penalty is constant in x") {
  Rng rng(99);
  const Index r = 80;
  const MatrixXd x = random_matrix(rng, r, 4);
  VectorXd d(r);
  for (Index i = 0; i < r; ++i) d[i] = (i % 3 == 0) ? 1.0 : 0.0;
  LearnerSpec spec;
  spec.lambda_rule = LambdaRule::fixed;
  spec.lambda = 1e4;
  const auto fit = fit_logistic_lasso(x, d, spec);
  CHECK(fit.coefficients.tail(4).cwiseAbs().maxCoeff() == 0.0);
  Eigen::RowVectorXd p1(4), p2(4);
  p1 << 1, 2, 3, 4;
  p2 << -4, -3, -2, -1;
  CHECK(fit.predict(p1) == fit.predict(p2));
  CHECK(std::abs(fit.predict(p1) - d.mean()) < 0.02);
}

TEST_CASE("logistic lasso requires both classes") {
  Rng rng(12);
  const MatrixXd x = random_matrix(rng, 10, 2);
  CHECK_THROWS_AS(fit_logistic_lasso(x, VectorXd::Ones(10)),
                  std::invalid_argument);
}

TEST_CASE("logistic lasso satisfies its KKT conditions") {
  Rng rng(404);
  const Index r = 150;
  const MatrixXd x = random_matrix(rng, r, 6);
  VectorXd d(r);
  for (Index i = 0; i < r; ++i)
    d[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-(x(i, 0) - x(i, 1)))) ? 1.0 : 0.0;
  LearnerSpec spec;
  spec.lambda_rule = LambdaRule::fixed;
  spec.lambda = 0.02;
  spec.tolerance = 1e-10;
  const auto fit = fit_logistic_lasso(x, d, spec);
  REQUIRE(fit.converged);

  VectorXd eta = x * fit.coefficients.tail(6);
  eta.array() += fit.coefficients[0];
  VectorXd resid(r);
  for (Index i = 0; i < r; ++i) resid[i] = d[i] - 1.0 / (1.0 + std::exp(-eta[i]));
  CHECK(std::abs(resid.sum() / r) < 1e-5);
  for (Index j = 0; j < 6; ++j) {
    const double g = x.col(j).dot(resid) / r;
    const double b = fit.coefficients[j + 1];
    if (b == 0.0) {
      CHECK(std::abs(g) <= spec.lambda + 1e-5);
    } else {
      CHECK(std::abs(g - spec.lambda * (b > 0 ? 1.0 : -1.0)) < 1e-5);
    }
  }
}
