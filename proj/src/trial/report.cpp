#include "nodulebench/trial/report.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "nodulebench/report/plots.hpp"

namespace nb {

namespace {

const std::vector<std::string> kDensities{"SN", "PSN", "GGN"};
const std::vector<std::string> kLobes{"RUL", "RML", "RLL", "LUL", "LLL"};

std::vector<bool> calls_of(const std::vector<ScoredCase>& cases) {
  std::vector<bool> out;
  for (const auto& c : cases) out.push_back(c.call);
  return out;
}

std::vector<double> scores_of(const std::vector<ScoredCase>& cases) {
  std::vector<double> out;
  for (const auto& c : cases) out.push_back(c.score);
  return out;
}

std::vector<bool> truth_of(const std::vector<ScoredCase>& cases) {
  std::vector<bool> out;
  for (const auto& c : cases) out.push_back(c.malignant);
  return out;
}

std::string kappa_csv(const KappaMatrix& k, const std::vector<std::string>& labels) {
  std::string out = "reader";
  for (const auto& l : labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += labels[i];
    for (const auto& v : k.values[i]) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

std::optional<RocCurve> roc_or_none(std::span<const ScoredCase> cases) {
  try {
    return roc_auc(cases);
  } catch (const UndefinedStatistic&) {
    return std::nullopt;
  }
}

}  // namespace

TrialReport build_trial_report(const ReadingsFile& f, const std::vector<ScoredCase>* model, std::uint64_t seed,
                               const BootstrapOptions& options) {
  TrialReport r;
  r.trial_id = f.trial_id;
  r.cases = f.case_ids.size();
  r.included = complete_readers(f);
  const std::set<std::string> included(r.included.begin(), r.included.end());
  for (const auto& spec : f.readers) {
    if (!included.count(spec.reader_id)) r.excluded[spec.reader_id] = "missing readings in at least one arm";
  }
  Rng root(seed);
  std::uint64_t stream = 0;
  if (model) {
    Rng rng = root.split(stream);
    r.model = metric_report(*model, Level::nodule, rng, options);
    r.model_roc = roc_or_none(*model);
  }
  ++stream;

  // Per-case covariates come from the readings themselves.
  std::map<std::string, CaseCovariates> covariates;
  std::map<std::string, std::vector<ScoredCase>> unassisted, assisted;
  for (const auto& id : r.included) {
    unassisted[id] = reader_cases(f, id, Arm::unassisted);
    assisted[id] = reader_cases(f, id, Arm::assisted);
  }
  for (const auto& row : f.rows) {
    auto& c = covariates[row.event.case_id];
    c.diameter_mm = row.diameter_mm;
    c.density = row.density;
    c.lobe = row.lobe;
  }
  for (const auto& id : r.included) {
    for (const auto& c : unassisted[id]) {
      auto& cov = covariates[c.id];
      ++cov.readers;
      cov.readers_correct += c.call == c.malignant;
    }
  }

  std::vector<ScoredCase> pooled_u, pooled_a;
  std::vector<StratifiedCase> strat_u, strat_a;
  std::vector<std::vector<bool>> calls_u, calls_a;
  for (const auto& spec : f.readers) {
    if (!included.count(spec.reader_id)) continue;
    const auto& u = unassisted[spec.reader_id];
    const auto& a = assisted[spec.reader_id];
    ReaderComparison cmp;
    cmp.reader_id = spec.reader_id;
    cmp.group = spec.group;
    Rng ru = root.split(stream++);
    Rng ra = root.split(stream++);
    cmp.unassisted = metric_report(u, Level::nodule, ru, options);
    cmp.assisted = metric_report(a, Level::nodule, ra, options);
    for (const auto& name : kReportMetrics) {
      const auto& x = cmp.unassisted.at(name).value;
      const auto& y = cmp.assisted.at(name).value;
      cmp.delta[name] = x && y ? std::optional(*y - *x) : std::nullopt;
    }
    try {
      cmp.delong = delong_paired(scores_of(u), scores_of(a), truth_of(u));
    } catch (const UndefinedStatistic& e) {
      cmp.delong_note = e.what();
    }
    cmp.mcnemar = mcnemar(calls_of(u), calls_of(a), truth_of(u));
    r.readers.push_back(std::move(cmp));

    calls_u.push_back(calls_of(u));
    calls_a.push_back(calls_of(a));
    for (const auto& c : u) {
      ScoredCase s = c;
      s.id = spec.reader_id + "/" + c.id;
      pooled_u.push_back(s);
      strat_u.push_back({s, covariates[c.id]});
    }
    for (const auto& c : a) {
      ScoredCase s = c;
      s.id = spec.reader_id + "/" + c.id;
      pooled_a.push_back(s);
      strat_a.push_back({s, covariates[c.id]});
    }
  }
  if (!r.included.empty()) {
    Rng pu = root.split(stream++);
    Rng pa = root.split(stream++);
    r.pooled_unassisted = metric_report(pooled_u, Level::nodule, pu, options);
    r.pooled_assisted = metric_report(pooled_a, Level::nodule, pa, options);
    for (const Strata& s : {diameter_strata(), difficulty_strata(), density_strata(kDensities), lobe_strata(kLobes)}) {
      Rng su = root.split(stream++);
      Rng sa = root.split(stream++);
      r.strata_unassisted[s.name] = stratified_report(strat_u, s, Level::nodule, su, options);
      r.strata_assisted[s.name] = stratified_report(strat_a, s, Level::nodule, sa, options);
    }
  }
  if (r.included.size() >= 2) {
    r.kappa_unassisted = kappa_matrix(calls_u);
    r.kappa_assisted = kappa_matrix(calls_a);
  }
  return r;
}

void to_json(nlohmann::json& j, const TrialReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto kappa = [&](const std::optional<KappaMatrix>& k) {
    if (!k) return nlohmann::json(nullptr);
    nlohmann::json m = nlohmann::json::array();
    for (const auto& row : k->values) {
      nlohmann::json jr = nlohmann::json::array();
      for (const auto& v : row) jr.push_back(opt(v));
      m.push_back(jr);
    }
    return nlohmann::json{{"values", m}, {"overall", k->defined_pairs ? nlohmann::json(k->overall) : nlohmann::json(nullptr)},
                          {"defined_pairs", k->defined_pairs}, {"band", k->band}};
  };
  auto strata = [&](const std::map<std::string, std::vector<StratumReport>>& all) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, rows] : all) {
      for (const auto& s : rows) {
        out[name].push_back({{"label", s.label}, {"n", s.n}, {"report", s.report ? nlohmann::json(*s.report) : nlohmann::json(nullptr)}});
      }
    }
    return out;
  };
  j = {{"trial_id", r.trial_id}, {"cases", r.cases}, {"included", r.included}, {"excluded", r.excluded}};
  j["model"] = r.model ? nlohmann::json(*r.model) : nlohmann::json(nullptr);
  if (r.model_roc) {
    for (const auto& p : r.model_roc->points) j["model_roc"].push_back({{"threshold", p.threshold}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  }
  for (const auto& c : r.readers) {
    nlohmann::json jc = {{"reader_id", c.reader_id}, {"group", to_string(c.group)}, {"unassisted", c.unassisted}, {"assisted", c.assisted}};
    for (const auto& [k, v] : c.delta) jc["delta"][k] = opt(v);
    if (c.delong) {
      jc["delong"] = {{"auc_unassisted", c.delong->auc_a}, {"auc_assisted", c.delong->auc_b}, {"variance", c.delong->variance},
                      {"z", c.delong->z}, {"p", c.delong->p}};
    } else {
      jc["delong"] = {{"undefined", c.delong_note}};
    }
    jc["mcnemar"] = {{"b", c.mcnemar.b}, {"c", c.mcnemar.c}, {"statistic", c.mcnemar.statistic}, {"p", c.mcnemar.p}, {"exact", c.mcnemar.exact}};
    j["readers"].push_back(jc);
  }
  j["pooled_unassisted"] = r.pooled_unassisted ? nlohmann::json(*r.pooled_unassisted) : nlohmann::json(nullptr);
  j["pooled_assisted"] = r.pooled_assisted ? nlohmann::json(*r.pooled_assisted) : nlohmann::json(nullptr);
  j["kappa_unassisted"] = kappa(r.kappa_unassisted);
  j["kappa_assisted"] = kappa(r.kappa_assisted);
  j["strata_unassisted"] = strata(r.strata_unassisted);
  j["strata_assisted"] = strata(r.strata_assisted);
}

std::map<std::string, std::string> report_tables(const TrialReport& r) {
  std::map<std::string, std::string> out;
  std::string readers = "reader,group,arm," + metric_csv_header() + "\n";
  if (r.model) readers += "model,,ai," + metric_csv_cells(*r.model) + "\n";
  for (const auto& c : r.readers) {
    readers += c.reader_id + "," + to_string(c.group) + ",unassisted," + metric_csv_cells(c.unassisted) + "\n";
    readers += c.reader_id + "," + to_string(c.group) + ",assisted," + metric_csv_cells(c.assisted) + "\n";
  }
  if (r.pooled_unassisted) readers += "pooled,,unassisted," + metric_csv_cells(*r.pooled_unassisted) + "\n";
  if (r.pooled_assisted) readers += "pooled,,assisted," + metric_csv_cells(*r.pooled_assisted) + "\n";
  out["readers.csv"] = readers;

  std::string cmp = "reader,group";
  for (const auto& name : kReportMetrics) cmp += ",delta_" + name;
  cmp += ",delong_z,delong_p,mcnemar_b,mcnemar_c,mcnemar_p\n";
  for (const auto& c : r.readers) {
    cmp += c.reader_id + "," + to_string(c.group);
    for (const auto& name : kReportMetrics) cmp += "," + format_number(c.delta.at(name));
    cmp += "," + format_number(c.delong ? std::optional(c.delong->z) : std::nullopt) + "," +
           format_number(c.delong ? std::optional(c.delong->p) : std::nullopt) + "," + std::to_string(c.mcnemar.b) + "," +
           std::to_string(c.mcnemar.c) + "," + format_number(c.mcnemar.p) + "\n";
  }
  out["comparisons.csv"] = cmp;

  std::string strata = "arm,strata,stratum," + metric_csv_header() + "\n";
  for (const auto& [arm, all] : {std::pair{"unassisted", &r.strata_unassisted}, std::pair{"assisted", &r.strata_assisted}}) {
    for (const auto& [name, rows] : *all) {
      for (const auto& s : rows) {
        strata += std::string(arm) + "," + name + "," + s.label + ",";
        if (s.report) {
          strata += metric_csv_cells(*s.report);
        } else {
          strata += "0";
          for (std::size_t k = 0; k < kReportMetrics.size() * 3; ++k) strata += ",NA";
        }
        strata += "\n";
      }
    }
  }
  out["strata.csv"] = strata;
  if (r.kappa_unassisted) out["kappa_unassisted.csv"] = kappa_csv(*r.kappa_unassisted, r.included);
  if (r.kappa_assisted) out["kappa_assisted.csv"] = kappa_csv(*r.kappa_assisted, r.included);
  return out;
}

std::map<std::string, std::string> report_plots(const TrialReport& r) {
  std::map<std::string, std::string> out;
  if (r.included.empty()) return out;
  std::vector<RocSeries> curves;
  if (r.model && r.model_roc) curves.push_back({"AI", r.model_roc->points, r.model->at("auc").value});
  std::vector<OperatingArrow> arrows;
  for (const auto& c : r.readers) {
    const auto& u = c.unassisted;
    const auto& a = c.assisted;
    if (!u.at("fpr").value || !u.at("sensitivity").value || !a.at("fpr").value || !a.at("sensitivity").value) continue;
    arrows.push_back({c.reader_id, {*u.at("fpr").value, *u.at("sensitivity").value}, {*a.at("fpr").value, *a.at("sensitivity").value}});
  }
  out["roc.svg"] = roc_svg(curves, arrows);

  std::vector<RadarSeries> radar;
  if (r.model) radar.push_back(radar_series("AI", *r.model));
  radar.push_back(radar_series("Readers unassisted", *r.pooled_unassisted));
  radar.push_back(radar_series("Readers assisted", *r.pooled_assisted));
  out["radar.svg"] = radar_svg(radar);
  if (r.kappa_unassisted) out["kappa_unassisted.svg"] = kappa_svg(*r.kappa_unassisted, r.included, "Unassisted");
  if (r.kappa_assisted) out["kappa_assisted.svg"] = kappa_svg(*r.kappa_assisted, r.included, "Assisted");
  return out;
}

}  // namespace nb
