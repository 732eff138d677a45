#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/stats/report.hpp"
#include "nodulebench/trial/readings.hpp"

namespace nb {

struct ReaderComparison {
  std::string reader_id;
  Group group = Group::A;
  MetricReport unassisted;
  MetricReport assisted;
  /// assisted minus unassisted, nullopt when either side is undefined.
  std::map<std::string, std::optional<double>> delta;
  std::optional<DelongResult> delong;
  std::string delong_note;  // why DeLong is missing, when it is
  McNemarResult mcnemar;    // a = unassisted, b = assisted
};

struct TrialReport {
  std::string trial_id;
  std::size_t cases = 0;
  std::vector<std::string> included;
  /// Readers left out because an arm is incomplete, with the reason.
  std::map<std::string, std::string> excluded;
  std::optional<MetricReport> model;
  std::optional<RocCurve> model_roc;
  std::vector<ReaderComparison> readers;
  /// Readings of all included readers pooled per arm.
  std::optional<MetricReport> pooled_unassisted, pooled_assisted;
  std::optional<KappaMatrix> kappa_unassisted, kappa_assisted;
  std::map<std::string, std::vector<StratumReport>> strata_unassisted, strata_assisted;
};

/// `model` holds the AI score and class of every case (nullptr when no model
/// is attached). Bootstrap streams derive from `seed`, so equal inputs give
/// equal reports.
TrialReport build_trial_report(const ReadingsFile& readings, const std::vector<ScoredCase>* model, std::uint64_t seed,
                               const BootstrapOptions& options = {});

void to_json(nlohmann::json& j, const TrialReport& r);

/// CSV tables keyed by file name. Every number goes through format_number.
std::map<std::string, std::string> report_tables(const TrialReport& r);

/// roc.svg, radar.svg and one kappa heatmap per arm; empty without included readers.
std::map<std::string, std::string> report_plots(const TrialReport& r);

}  // namespace nb
