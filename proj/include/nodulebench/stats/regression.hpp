#pragma once

#include <string>
#include <vector>

namespace nb {

struct LogisticTerm {
  std::string name;
  double coefficient = 0.0;
  double std_error = 0.0;
  double odds_ratio = 1.0;
  double or_lo = 1.0;  // 95% Wald interval on the odds-ratio scale
  double or_hi = 1.0;
  double wald_p = 1.0;
};

struct LogisticFit {
  std::vector<LogisticTerm> terms;  // intercept first
  double log_likelihood = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Complete or quasi-complete separation: the MLE does not exist and the
  /// standard errors are meaningless.
  bool separated = false;
};

/// Maximum-likelihood logistic regression by iteratively reweighted least
/// squares with an intercept prepended. `rows` may have zero columns.
/// Throws std::invalid_argument for n <= p, ragged rows, or a singular design.
LogisticFit logistic_fit(const std::vector<std::vector<double>>& rows, const std::vector<bool>& y,
                         std::vector<std::string> names = {});

/// Log-likelihood of coefficients (intercept first) on the data.
double logistic_log_likelihood(const std::vector<std::vector<double>>& rows, const std::vector<bool>& y,
                               const std::vector<double>& coefficients);

}  // namespace nb
