#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/stats/inference.hpp"
#include "nodulebench/stats/metrics.hpp"

namespace nb {

enum class Level { nodule, patient };
std::string to_string(Level level);

struct MetricValue {
  std::optional<double> value;  // nullopt when undefined on the full sample
  double lo = 0.0;
  double hi = 0.0;
};

inline const std::array<std::string, 9> kReportMetrics{"auc", "sensitivity", "specificity", "accuracy", "ppv",
                                                       "npv", "f1",          "fpr",         "fnr"};

struct MetricReport {
  Level level = Level::nodule;
  std::size_t n = 0;
  ConfusionCounts counts;
  std::map<std::string, MetricValue> metrics;  // keys from kReportMetrics

  const MetricValue& at(const std::string& name) const { return metrics.at(name); }
};

/// Point estimates plus percentile bootstrap intervals for every metric.
/// Each interval is widened to contain its point estimate when the
/// percentile interval misses it; fpr and fnr intervals mirror those of
/// specificity and sensitivity.
MetricReport metric_report(std::span<const ScoredCase> cases, Level level, Rng& rng,
                           const BootstrapOptions& options = {});

void to_json(nlohmann::json& j, const MetricReport& r);

/// Per-case covariates used by the built-in strata.
struct CaseCovariates {
  double diameter_mm = 0.0;
  std::string density;
  std::string lobe;
  /// Unassisted readers correct on this case, out of `readers`.
  std::size_t readers_correct = 0;
  std::size_t readers = 0;
};

struct StratifiedCase {
  ScoredCase scored;
  CaseCovariates covariates;
};

struct Strata {
  std::string name;
  std::vector<std::string> labels;  // every stratum reported, in this order
  std::function<std::optional<std::string>(const CaseCovariates&)> assign;  // nullopt: outside every stratum
};

/// "4-10", "10-20", "20-30" (lower bound inclusive); nullopt outside [4, 30].
std::optional<std::string> diameter_band(double mm);
/// "low" when more than two thirds of readers are correct, "high" when fewer
/// than one third, else "intermediate". Throws when readers == 0.
std::string difficulty_band(std::size_t correct, std::size_t readers);

Strata diameter_strata();
Strata difficulty_strata();
Strata density_strata(std::vector<std::string> labels);
Strata lobe_strata(std::vector<std::string> labels);
Strata single_stratum();

struct StratumReport {
  std::string label;
  std::size_t n = 0;
  /// nullopt for an empty stratum; auc stays undefined for single-class strata.
  std::optional<MetricReport> report;
};

std::vector<StratumReport> stratified_report(std::span<const StratifiedCase> cases, const Strata& strata, Level level,
                                             Rng& rng, const BootstrapOptions& options = {});

}  // namespace nb
