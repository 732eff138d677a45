#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodulebench/stats/metrics.hpp"
#include "nodulebench/tensor/rng.hpp"

namespace nb {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// A statistic over a resample. Return nullopt (or throw UndefinedStatistic)
/// when it is undefined there; such resamples are redrawn.
using CaseStatistic = std::function<std::optional<double>(std::span<const ScoredCase>)>;

struct BootstrapOptions {
  std::size_t resamples = 1000;
  double level = 0.95;
  /// Total redraws allowed across the run before giving up.
  std::size_t redraw_cap = 10000;
};

/// Percentile interval of `statistic` over resamples drawn with replacement.
/// Throws std::runtime_error when the redraw cap is exceeded.
Interval bootstrap_ci(const CaseStatistic& statistic, std::span<const ScoredCase> cases, Rng& rng,
                      const BootstrapOptions& options = {});

/// Linear-interpolated quantile of sorted values, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

double normal_cdf(double z);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double variance = 0.0;  // of auc_a - auc_b
  double z = 0.0;
  double p = 1.0;
};

/// Paired DeLong test from placement values. Identical score vectors give
/// z = 0, p = 1.
DelongResult delong_paired(std::span<const double> scores_a, std::span<const double> scores_b,
                           const std::vector<bool>& malignant);

struct McNemarResult {
  std::size_t b = 0;  // A correct, B wrong
  std::size_t c = 0;  // A wrong, B correct
  double statistic = 0.0;
  double p = 1.0;
  bool exact = true;
};

/// Exact two-sided binomial p when b + c < 25, else the continuity-corrected
/// chi-square with one degree of freedom.
McNemarResult mcnemar(const std::vector<bool>& calls_a, const std::vector<bool>& calls_b, const std::vector<bool>& truth);

/// nullopt when p_e = 1 (both raters constant and equal).
std::optional<double> cohens_kappa(const std::vector<bool>& a, const std::vector<bool>& b);

/// Agreement band: poor (<= 0.2), fair, moderate, substantial, almost perfect.
std::string kappa_band(double kappa);

struct KappaMatrix {
  /// values[i][j]; nullopt for undefined pairs. Unit diagonal.
  std::vector<std::vector<std::optional<double>>> values;
  /// Mean over the defined off-diagonal pairs i < j.
  double overall = 0.0;
  std::size_t defined_pairs = 0;
  std::string band;
};

/// calls[r] holds reader r's calls over the same cases.
KappaMatrix kappa_matrix(const std::vector<std::vector<bool>>& calls);

}  // namespace nb
