#include "nodulebench/stats/regression.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "nodulebench/stats/inference.hpp"

namespace nb {

namespace {

Eigen::MatrixXd design(const std::vector<std::vector<double>>& rows) {
  const std::size_t p = rows.empty() ? 0 : rows.front().size();
  Eigen::MatrixXd X(rows.size(), p + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != p) throw std::invalid_argument("logistic_fit: ragged feature rows");
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) X(i, j + 1) = rows[i][j];
  }
  return X;
}

// log(1 + e^t) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - softplus(eta(i));
  return ll;
}

}  // namespace

double logistic_log_likelihood(const std::vector<std::vector<double>>& rows, const std::vector<bool>& y,
                               const std::vector<double>& coefficients) {
  const Eigen::MatrixXd X = design(rows);
  if (static_cast<std::size_t>(X.cols()) != coefficients.size()) throw std::invalid_argument("coefficient count mismatch");
  Eigen::VectorXd yy(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) yy(i) = y[i];
  return log_likelihood(X, yy, Eigen::Map<const Eigen::VectorXd>(coefficients.data(), coefficients.size()));
}

LogisticFit logistic_fit(const std::vector<std::vector<double>>& rows, const std::vector<bool>& y,
                         std::vector<std::string> names) {
  if (rows.size() != y.size()) throw std::invalid_argument("logistic_fit: X and y differ in length");
  const Eigen::MatrixXd X = design(rows);
  const auto n = X.rows(), p = X.cols();
  if (n <= p) throw std::invalid_argument("logistic_fit: need more observations than coefficients");
  if (names.empty())
    for (Eigen::Index j = 1; j < p; ++j) names.push_back("x" + std::to_string(j));
  if (static_cast<Eigen::Index>(names.size()) != p - 1) throw std::invalid_argument("logistic_fit: one name per feature");
  if (Eigen::FullPivLU<Eigen::MatrixXd>(X).rank() < p) throw std::invalid_argument("logistic_fit: singular design matrix");

  Eigen::VectorXd yy(n);
  for (Eigen::Index i = 0; i < n; ++i) yy(i) = y[static_cast<std::size_t>(i)];

  LogisticFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = log_likelihood(X, yy, beta);
  Eigen::MatrixXd info;
  constexpr std::size_t kMaxIter = 100;
  for (fit.iterations = 1; fit.iterations <= kMaxIter; ++fit.iterations) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    info = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd step = info.ldlt().solve(X.transpose() * (yy - mu));
    if (!step.allFinite()) break;
    // Step halving keeps the likelihood monotone.
    double t = 1.0, next_ll = log_likelihood(X, yy, beta + step);
    while (next_ll < ll - 1e-12 && t > 1e-6) {
      t /= 2;
      next_ll = log_likelihood(X, yy, beta + t * step);
    }
    beta += t * step;
    const double change = next_ll - ll;
    ll = next_ll;
    if (std::abs(change) < 1e-12 && (t * step).lpNorm<Eigen::Infinity>() < 1e-9) {
      fit.converged = true;
      break;
    }
  }
  fit.log_likelihood = ll;

  // Separation drives some fitted probabilities to exactly 0 or 1, which
  // shows up as a saturated linear predictor regardless of feature scale.
  fit.separated = (X * beta).lpNorm<Eigen::Infinity>() > 30.0;

  {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = mu * (1.0 - mu);
    }
    info = X.transpose() * w.asDiagonal() * X;
  }
  const Eigen::MatrixXd cov = info.inverse();
  for (Eigen::Index j = 0; j < p; ++j) {
    LogisticTerm term;
    term.name = j == 0 ? "intercept" : names[static_cast<std::size_t>(j - 1)];
    term.coefficient = beta(j);
    term.std_error = std::sqrt(std::max(0.0, cov(j, j)));
    term.odds_ratio = std::exp(beta(j));
    term.or_lo = std::exp(beta(j) - 1.959963984540054 * term.std_error);
    term.or_hi = std::exp(beta(j) + 1.959963984540054 * term.std_error);
    term.wald_p = term.std_error > 0 && std::isfinite(term.std_error)
                      ? 2.0 * normal_cdf(-std::abs(beta(j) / term.std_error))
                      : 1.0;
    fit.terms.push_back(term);
  }
  return fit;
}

}  // namespace nb
