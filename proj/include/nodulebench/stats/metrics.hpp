#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nb {

/// Raised when a statistic has no value on its input (single-class AUC,
/// kappa with p_e = 1, ...). Callers must handle it; it is never mapped to 0.
class UndefinedStatistic : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// One scored reading of a nodule (or patient). `score` is a model probability
/// or a reader's 1..10 ordinal; `call` is the explicit binary decision.
struct ScoredCase {
  std::string id;
  std::string patient;
  bool malignant = false;
  double score = 0.0;
  bool call = false;
};

/// Throws std::invalid_argument for a reader score outside 1..10 or a call
/// that contradicts the score band (1-5 benign, 6-10 malignant).
void check_reader_case(const ScoredCase& c);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion(std::span<const ScoredCase> cases);

/// Point metrics of the binary calls. A metric whose denominator is zero is
/// nullopt. fnr and fpr are computed as complements so that
/// sensitivity + fnr == 1 and specificity + fpr == 1 hold exactly.
struct PointMetrics {
  ConfusionCounts counts;
  std::optional<double> sensitivity, specificity, accuracy, ppv, npv, f1, fpr, fnr;
};

PointMetrics compute_metrics(std::span<const ScoredCase> cases);

struct RocPoint {
  double threshold;  // cases with score >= threshold are called positive
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

/// ROC over every distinct score, AUC by the trapezoid rule (ties count 1/2).
/// Throws UndefinedStatistic unless both classes are present.
RocCurve roc_auc(std::span<const ScoredCase> cases);

/// Pair-counting AUC, P(score_pos > score_neg) + 1/2 P(tie).
double mann_whitney_auc(std::span<const double> scores, const std::vector<bool>& malignant);

/// F1 of calls `score > threshold`; 0 when there are no true positives.
double f1_at(std::span<const ScoredCase> cases, double threshold);

/// Lowest threshold maximizing F1 among the midpoints between adjacent
/// distinct scores and the two infinite sentinels.
double select_threshold_max_f1(std::span<const ScoredCase> cases);

/// Patient record from its nodules: max score, any-malignant call and truth.
ScoredCase aggregate_patient(const std::string& patient, std::span<const ScoredCase> nodules);

/// Groups nodules by `patient` (first-appearance order) and aggregates each.
std::vector<ScoredCase> patient_aggregate(std::span<const ScoredCase> nodules);

}  // namespace nb
