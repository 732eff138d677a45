#include "nodulebench/stats/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace nb {

void check_reader_case(const ScoredCase& c) {
  const double s = c.score;
  if (s != std::floor(s) || s < 1 || s > 10) {
    throw std::invalid_argument("reader score must be an integer in 1..10, got " + std::to_string(s));
  }
  if (c.call != (s >= 6)) throw std::invalid_argument("reader call contradicts score band for case " + c.id);
}

ConfusionCounts confusion(std::span<const ScoredCase> cases) {
  ConfusionCounts k;
  for (const auto& c : cases) {
    if (c.malignant) (c.call ? k.tp : k.fn)++;
    else (c.call ? k.fp : k.tn)++;
  }
  return k;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> complement(std::optional<double> x) {
  if (!x) return std::nullopt;
  return 1.0 - *x;
}

void require_both_classes(std::span<const ScoredCase> cases, const char* what) {
  const bool pos = std::any_of(cases.begin(), cases.end(), [](const auto& c) { return c.malignant; });
  const bool neg = std::any_of(cases.begin(), cases.end(), [](const auto& c) { return !c.malignant; });
  if (!pos || !neg) throw UndefinedStatistic(std::string(what) + " needs both benign and malignant cases");
}

}  // namespace

PointMetrics compute_metrics(std::span<const ScoredCase> cases) {
  if (cases.empty()) throw std::invalid_argument("compute_metrics: no cases");
  PointMetrics m;
  const auto& k = m.counts = confusion(cases);
  m.sensitivity = ratio(k.tp, k.tp + k.fn);
  m.specificity = ratio(k.tn, k.tn + k.fp);
  m.accuracy = ratio(k.tp + k.tn, k.total());
  m.ppv = ratio(k.tp, k.tp + k.fp);
  m.npv = ratio(k.tn, k.tn + k.fn);
  m.f1 = ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn);
  m.fnr = complement(m.sensitivity);
  m.fpr = complement(m.specificity);
  return m;
}

RocCurve roc_auc(std::span<const ScoredCase> cases) {
  require_both_classes(cases, "AUC");
  std::vector<const ScoredCase*> order;
  for (const auto& c : cases) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->score > b->score; });
  double pos = 0, neg = 0;
  for (const auto* c : order) (c->malignant ? pos : neg) += 1;

  RocCurve roc;
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = order[i]->score;
    // Every case tied at this score moves together, giving a diagonal step.
    for (; i < order.size() && order[i]->score == s; ++i) (order[i]->malignant ? tp : fp) += 1;
    roc.points.push_back({s, fp / neg, tp / pos});
  }
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    roc.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return roc;
}

double mann_whitney_auc(std::span<const double> scores, const std::vector<bool>& malignant) {
  if (scores.size() != malignant.size()) throw std::invalid_argument("mann_whitney_auc: length mismatch");
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!malignant[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (malignant[j]) continue;
      pairs += 1;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  if (pairs == 0) throw UndefinedStatistic("AUC needs both benign and malignant cases");
  return wins / pairs;
}

double f1_at(std::span<const ScoredCase> cases, double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& c : cases) {
    const bool call = c.score > threshold;
    if (call && c.malignant) ++tp;
    else if (call) ++fp;
    else if (c.malignant) ++fn;
  }
  return tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
}

double select_threshold_max_f1(std::span<const ScoredCase> cases) {
  require_both_classes(cases, "max-F1 threshold");
  std::vector<double> s;
  for (const auto& c : cases) s.push_back(c.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) candidates.push_back(s[i] + (s[i + 1] - s[i]) / 2.0);
  candidates.push_back(std::numeric_limits<double>::infinity());
  double best = candidates.front(), best_f1 = -1.0;
  for (double t : candidates) {
    const double f = f1_at(cases, t);
    if (f > best_f1) {
      best_f1 = f;
      best = t;
    }
  }
  return best;
}

ScoredCase aggregate_patient(const std::string& patient, std::span<const ScoredCase> nodules) {
  if (nodules.empty()) throw std::invalid_argument("patient " + patient + " has no nodules");
  ScoredCase p{patient, patient, false, -std::numeric_limits<double>::infinity(), false};
  for (const auto& n : nodules) {
    p.score = std::max(p.score, n.score);
    p.malignant = p.malignant || n.malignant;
    p.call = p.call || n.call;
  }
  return p;
}

std::vector<ScoredCase> patient_aggregate(std::span<const ScoredCase> nodules) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<ScoredCase>> groups;
  for (const auto& n : nodules) {
    if (n.patient.empty()) throw std::invalid_argument("nodule " + n.id + " has no patient id");
    auto& g = groups[n.patient];
    if (g.empty()) order.push_back(n.patient);
    g.push_back(n);
  }
  std::vector<ScoredCase> out;
  for (const auto& id : order) out.push_back(aggregate_patient(id, groups[id]));
  return out;
}

}  // namespace nb
