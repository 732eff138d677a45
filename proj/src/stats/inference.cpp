#include "nodulebench/stats/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nb {

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(const CaseStatistic& statistic, std::span<const ScoredCase> cases, Rng& rng,
                      const BootstrapOptions& options) {
  if (cases.empty()) throw std::invalid_argument("bootstrap_ci: no cases");
  if (options.level <= 0.0 || options.level >= 1.0) throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");
  std::vector<double> stats;
  stats.reserve(options.resamples);
  std::vector<ScoredCase> sample(cases.size());
  std::size_t redraws = 0;
  const auto n = static_cast<std::int64_t>(cases.size());
  while (stats.size() < options.resamples) {
    for (auto& s : sample) s = cases[static_cast<std::size_t>(rng.integer(0, n - 1))];
    std::optional<double> v;
    try {
      v = statistic(sample);
    } catch (const UndefinedStatistic&) {
    }
    if (v && std::isfinite(*v)) {
      stats.push_back(*v);
    } else if (++redraws > options.redraw_cap) {
      throw std::runtime_error("bootstrap_ci: statistic undefined on " + std::to_string(redraws) + " resamples");
    }
  }
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - options.level) / 2.0;
  return {quantile_sorted(stats, tail), quantile_sorted(stats, 1.0 - tail)};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace {

double psi(double pos, double neg) { return pos > neg ? 1.0 : pos == neg ? 0.5 : 0.0; }

double sample_covariance(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / (n - 1.0);
}

}  // namespace

DelongResult delong_paired(std::span<const double> a, std::span<const double> b, const std::vector<bool>& truth) {
  if (a.size() != b.size() || a.size() != truth.size()) throw std::invalid_argument("delong_paired: length mismatch");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < truth.size(); ++i) (truth[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw UndefinedStatistic("DeLong test needs both benign and malignant cases");

  // Placement values: V10 per positive, V01 per negative, for each score set.
  auto placements = [&](std::span<const double> s, std::vector<double>& v10, std::vector<double>& v01) {
    v10.assign(pos.size(), 0.0);
    v01.assign(neg.size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i)
      for (std::size_t j = 0; j < neg.size(); ++j) {
        const double k = psi(s[pos[i]], s[neg[j]]);
        v10[i] += k;
        v01[j] += k;
      }
    for (double& x : v10) x /= static_cast<double>(neg.size());
    for (double& x : v01) x /= static_cast<double>(pos.size());
  };
  std::vector<double> a10, a01, b10, b01;
  placements(a, a10, a01);
  placements(b, b10, b01);

  // Reported AUCs come from roc_auc so both paths agree bitwise.
  auto auc = [&](std::span<const double> s) {
    std::vector<ScoredCase> cases;
    for (std::size_t i = 0; i < s.size(); ++i) cases.push_back({"", "", truth[i], s[i], false});
    return roc_auc(cases).auc;
  };
  DelongResult r;
  r.auc_a = auc(a);
  r.auc_b = auc(b);
  if (std::equal(a.begin(), a.end(), b.begin())) return r;

  const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());
  r.variance = (sample_covariance(a10, a10) + sample_covariance(b10, b10) - 2 * sample_covariance(a10, b10)) / m +
               (sample_covariance(a01, a01) + sample_covariance(b01, b01) - 2 * sample_covariance(a01, b01)) / n;
  const double diff = r.auc_a - r.auc_b;
  if (r.variance <= 0.0) {
    // Zero variance with a nonzero difference: the difference is certain.
    r.z = diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    r.p = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.z = diff / std::sqrt(r.variance);
  r.p = 2.0 * normal_cdf(-std::abs(r.z));
  return r;
}

McNemarResult mcnemar(const std::vector<bool>& calls_a, const std::vector<bool>& calls_b, const std::vector<bool>& truth) {
  if (calls_a.size() != calls_b.size() || calls_a.size() != truth.size()) {
    throw std::invalid_argument("mcnemar: length mismatch");
  }
  McNemarResult r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ok_a = calls_a[i] == truth[i], ok_b = calls_b[i] == truth[i];
    if (ok_a && !ok_b) ++r.b;
    if (!ok_a && ok_b) ++r.c;
  }
  const std::size_t n = r.b + r.c;
  const double gap = std::max(0.0, std::abs(static_cast<double>(r.b) - static_cast<double>(r.c)) - 1.0);
  r.statistic = n == 0 ? 0.0 : gap * gap / static_cast<double>(n);
  if (n < 25) {
    r.exact = true;
    const std::size_t k = std::min(r.b, r.c);
    double tail = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
      tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    }
    r.p = std::min(1.0, 2.0 * tail);
  } else {
    r.exact = false;
    r.p = std::erfc(std::sqrt(r.statistic / 2.0));
  }
  return r;
}

std::optional<double> cohens_kappa(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("cohens_kappa: calls must be paired and non-empty");
  const double n = static_cast<double>(a.size());
  double agree = 0, pa = 0, pb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += a[i] == b[i];
    pa += a[i];
    pb += b[i];
  }
  const double po = agree / n;
  pa /= n;
  pb /= n;
  const double pe = pa * pb + (1 - pa) * (1 - pb);
  if (pe >= 1.0) return std::nullopt;
  return (po - pe) / (1 - pe);
}

std::string kappa_band(double k) {
  if (k <= 0.2) return "poor";
  if (k <= 0.4) return "fair";
  if (k <= 0.6) return "moderate";
  if (k <= 0.8) return "substantial";
  return "almost perfect";
}

KappaMatrix kappa_matrix(const std::vector<std::vector<bool>>& calls) {
  const std::size_t r = calls.size();
  if (r < 2) throw std::invalid_argument("kappa_matrix needs at least two readers");
  KappaMatrix km;
  km.values.assign(r, std::vector<std::optional<double>>(r));
  double sum = 0;
  for (std::size_t i = 0; i < r; ++i) {
    km.values[i][i] = 1.0;
    for (std::size_t j = i + 1; j < r; ++j) {
      const auto k = cohens_kappa(calls[i], calls[j]);
      km.values[i][j] = km.values[j][i] = k;
      if (k) {
        sum += *k;
        ++km.defined_pairs;
      }
    }
  }
  if (km.defined_pairs == 0) throw UndefinedStatistic("kappa undefined for every reader pair");
  km.overall = sum / static_cast<double>(km.defined_pairs);
  km.band = kappa_band(km.overall);
  return km;
}

}  // namespace nb
