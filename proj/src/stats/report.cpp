#include "nodulebench/stats/report.hpp"

#include <algorithm>
#include <cmath>

namespace nb {

std::string to_string(Level level) { return level == Level::patient ? "patient" : "nodule"; }

namespace {

using Getter = std::optional<double> (*)(const PointMetrics&);

const std::map<std::string, Getter>& point_getters() {
  static const std::map<std::string, Getter> g{
      {"sensitivity", [](const PointMetrics& m) { return m.sensitivity; }},
      {"specificity", [](const PointMetrics& m) { return m.specificity; }},
      {"accuracy", [](const PointMetrics& m) { return m.accuracy; }},
      {"ppv", [](const PointMetrics& m) { return m.ppv; }},
      {"npv", [](const PointMetrics& m) { return m.npv; }},
      {"f1", [](const PointMetrics& m) { return m.f1; }},
  };
  return g;
}

std::optional<double> auc_of(std::span<const ScoredCase> cases) {
  try {
    return roc_auc(cases).auc;
  } catch (const UndefinedStatistic&) {
    return std::nullopt;
  }
}

MetricValue estimate(std::optional<double> point, const CaseStatistic& stat, std::span<const ScoredCase> cases,
                     Rng& rng, const BootstrapOptions& options) {
  MetricValue mv;
  mv.value = point;
  if (!point) return mv;
  const Interval ci = bootstrap_ci(stat, cases, rng, options);
  mv.lo = std::min(ci.lo, *point);
  mv.hi = std::max(ci.hi, *point);
  return mv;
}

}  // namespace

MetricReport metric_report(std::span<const ScoredCase> cases, Level level, Rng& rng, const BootstrapOptions& options) {
  const PointMetrics point = compute_metrics(cases);
  MetricReport r;
  r.level = level;
  r.n = cases.size();
  r.counts = point.counts;
  std::uint64_t stream = 0;
  {
    Rng sub = rng.split(stream++);
    r.metrics["auc"] = estimate(auc_of(cases), auc_of, cases, sub, options);
  }
  for (const auto& [name, get] : point_getters()) {
    Rng sub = rng.split(stream++);
    const Getter g = get;
    r.metrics[name] = estimate(
        g(point), [g](std::span<const ScoredCase> s) { return g(compute_metrics(s)); }, cases, sub, options);
  }
  auto mirror = [](const MetricValue& m, std::optional<double> complement) {
    MetricValue out;
    out.value = complement;
    if (complement) {
      out.lo = 1.0 - m.hi;
      out.hi = 1.0 - m.lo;
    }
    return out;
  };
  r.metrics["fnr"] = mirror(r.metrics["sensitivity"], point.fnr);
  r.metrics["fpr"] = mirror(r.metrics["specificity"], point.fpr);
  return r;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"level", to_string(r.level)},
       {"n", r.n},
       {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}}};
  for (const auto& name : kReportMetrics) {
    const auto& m = r.metrics.at(name);
    if (m.value) j["metrics"][name] = {{"value", *m.value}, {"lo", m.lo}, {"hi", m.hi}};
    else j["metrics"][name] = {{"value", nullptr}, {"lo", nullptr}, {"hi", nullptr}};
  }
}

std::optional<std::string> diameter_band(double mm) {
  if (mm >= 4 && mm < 10) return "4-10";
  if (mm >= 10 && mm < 20) return "10-20";
  if (mm >= 20 && mm <= 30) return "20-30";
  return std::nullopt;
}

std::string difficulty_band(std::size_t correct, std::size_t readers) {
  if (readers == 0 || correct > readers) throw std::invalid_argument("difficulty_band: need 0 <= correct <= readers > 0");
  // Integer comparisons keep 8 of 12 exactly on the two-thirds boundary.
  if (3 * correct > 2 * readers) return "low";
  if (3 * correct < readers) return "high";
  return "intermediate";
}

Strata diameter_strata() {
  return {"diameter", {"4-10", "10-20", "20-30"}, [](const CaseCovariates& c) { return diameter_band(c.diameter_mm); }};
}

Strata difficulty_strata() {
  return {"difficulty",
          {"low", "intermediate", "high"},
          [](const CaseCovariates& c) -> std::optional<std::string> { return difficulty_band(c.readers_correct, c.readers); }};
}

Strata density_strata(std::vector<std::string> labels) {
  return {"density", std::move(labels), [](const CaseCovariates& c) -> std::optional<std::string> { return c.density; }};
}

Strata lobe_strata(std::vector<std::string> labels) {
  return {"lobe", std::move(labels), [](const CaseCovariates& c) -> std::optional<std::string> { return c.lobe; }};
}

Strata single_stratum() {
  return {"all", {"all"}, [](const CaseCovariates&) -> std::optional<std::string> { return "all"; }};
}

std::vector<StratumReport> stratified_report(std::span<const StratifiedCase> cases, const Strata& strata, Level level,
                                             Rng& rng, const BootstrapOptions& options) {
  std::map<std::string, std::vector<ScoredCase>> groups;
  for (const auto& label : strata.labels) groups[label];
  for (const auto& c : cases) {
    const auto label = strata.assign(c.covariates);
    if (!label) continue;
    auto it = groups.find(*label);
    if (it == groups.end()) throw std::invalid_argument("stratum label '" + *label + "' is not declared for " + strata.name);
    it->second.push_back(c.scored);
  }
  std::vector<StratumReport> out;
  // Strata draw from `rng` in order, so a single all-covering stratum
  // reproduces the unstratified report.
  for (const auto& label : strata.labels) {
    StratumReport s;
    s.label = label;
    const auto& g = groups[label];
    s.n = g.size();
    if (!g.empty()) s.report = metric_report(g, level, rng, options);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace nb
