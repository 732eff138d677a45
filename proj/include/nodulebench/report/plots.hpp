#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "nodulebench/stats/inference.hpp"
#include "nodulebench/stats/metrics.hpp"
#include "nodulebench/stats/report.hpp"

namespace nb {

/// The one formatter for numbers shown in tables and plots ("%.3f"; "NA" for
/// undefined), so a plotted value and its table cell match character for character.
std::string format_number(std::optional<double> v);

struct RocSeries {
  std::string label;
  std::vector<RocPoint> points;
  std::optional<double> auc;
};

struct OperatingPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// A reader's move from the unassisted to the assisted operating point.
struct OperatingArrow {
  std::string label;
  OperatingPoint from;
  OperatingPoint to;
};

/// ROC curves with AUCs in the legend, plus arrows between operating points.
std::string roc_svg(const std::vector<RocSeries>& curves, const std::vector<OperatingArrow>& arrows = {});

inline const std::array<std::string, 7> kRadarAxes{"AUC", "Sensitivity", "Specificity", "Accuracy", "PPV", "NPV", "F1"};

struct RadarSeries {
  std::string label;
  std::array<std::optional<double>, 7> values;  // in kRadarAxes order, each in [0, 1]
};

/// One spoke per kRadarAxes entry; undefined values are drawn at the centre.
std::string radar_svg(const std::vector<RadarSeries>& series);

/// Pairwise kappa heatmap with the value printed in every cell.
std::string kappa_svg(const KappaMatrix& m, const std::vector<std::string>& labels, const std::string& title);

/// Radar series from a report's AUC and the six binary metrics.
RadarSeries radar_series(const std::string& label, const MetricReport& m);

/// "n,auc,auc_lo,auc_hi,sensitivity,..." over kReportMetrics.
std::string metric_csv_header();
/// Cells matching metric_csv_header; undefined values and their bounds print as NA.
std::string metric_csv_cells(const MetricReport& m);

/// Escapes &, <, >, " for SVG text and attributes.
std::string xml_escape(const std::string& s);

}  // namespace nb
