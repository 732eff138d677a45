#include "nodulebench/orchestrator/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nodulebench/explain/attribution.hpp"
#include "nodulebench/explain/gradcam.hpp"
#include "nodulebench/explain/overlay.hpp"
#include "nodulebench/report/plots.hpp"
#include "nodulebench/trial/report.hpp"

namespace nb {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << bytes;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.level = j.at("level").get<std::string>() == "patient" ? Level::patient : Level::nodule;
  r.n = j.at("n").get<std::size_t>();
  const auto& c = j.at("counts");
  r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(), c.at("fn").get<std::size_t>()};
  for (const auto& name : kReportMetrics) {
    const auto& m = j.at("metrics").at(name);
    MetricValue v;
    if (!m.at("value").is_null()) {
      v.value = m.at("value").get<double>();
      v.lo = m.at("lo").get<double>();
      v.hi = m.at("hi").get<double>();
    }
    r.metrics[name] = v;
  }
  return r;
}

std::vector<std::string> stage_names(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (Stage s : {Stage::vit, Stage::fine_grained, Stage::gcn, Stage::joint}) {
    if (stage_applies(cfg, s)) out.push_back(to_string(s));
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (ablation < 1 || ablation > 9) throw ConfigError("ablation must be 1..9");
  if (!(epoch_scale > 0.0) || !std::isfinite(epoch_scale)) throw ConfigError("epoch_scale must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (bootstrap_resamples == 0) throw ConfigError("bootstrap_resamples must be positive");
  if (data.nodules == 0) throw ConfigError("data.nodules must be positive");
  if (!(data.malignant_fraction > 0.0 && data.malignant_fraction < 1.0)) throw ConfigError("data.malignant_fraction must lie in (0, 1)");
  if (out_dir.empty()) throw ConfigError("output directory is required");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"seed", c.seed},
       {"scale", to_string(c.scale)},
       {"ablation", c.ablation},
       {"data", c.data},
       {"epoch_scale", c.epoch_scale},
       {"batch_size", c.batch_size},
       {"bootstrap_resamples", c.bootstrap_resamples},
       {"explain_samples", c.explain_samples}};
  if (c.data_dir) j["data_dir"] = c.data_dir->string();
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::set<std::string> known{"seed",       "scale",      "ablation",           "data",           "data_dir",
                                           "epoch_scale", "batch_size", "bootstrap_resamples", "explain_samples"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("scale")) c.scale = scale_from_string(j.at("scale").get<std::string>());
  c.ablation = j.value("ablation", c.ablation);
  if (j.contains("data")) c.data = j.at("data").get<DatasetConfig>();
  if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
  c.epoch_scale = j.value("epoch_scale", c.epoch_scale);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
  c.explain_samples = j.value("explain_samples", c.explain_samples);
}

StagePlan scaled_plan(Stage stage, Scale scale, double epoch_scale) {
  StagePlan plan = StagePlan::for_scale(stage, scale);
  if (epoch_scale == 1.0) return plan;
  auto scaled = [&](std::size_t e) { return static_cast<std::size_t>(std::llround(static_cast<double>(e) * epoch_scale)); };
  plan.epochs = std::max<std::size_t>(1, scaled(plan.epochs));
  std::vector<std::size_t> decays;
  for (std::size_t d : plan.decay_epochs) {
    const std::size_t e = std::max<std::size_t>(1, scaled(d));
    if (e < plan.epochs && (decays.empty() || decays.back() < e)) decays.push_back(e);
  }
  plan.decay_epochs = decays;
  return plan;
}

bool ensure_dataset(const DatasetConfig& config, const fs::path& dir) {
  if (fs::exists(dir / "manifest.jsonl")) return false;
  build_dataset(config, dir);
  return true;
}

TrainedModel train_model(const ExperimentConfig& config, const DatasetManifest& manifest, const fs::path& data_dir,
                         const fs::path& out_dir) {
  const ModelConfig mc = ModelConfig::ablation(config.ablation, config.scale);
  std::vector<PreparedNodule> train, validation;
  try {
    train = prepare_split(manifest, data_dir, Split::train, mc.spacing_mm, mc.input_vox);
    validation = prepare_split(manifest, data_dir, Split::validation, mc.spacing_mm, mc.input_vox);
  } catch (const std::exception& e) {
    throw StageFailure("prepare", e.what());
  }
  fs::create_directories(out_dir);
  DeepFan model(mc, config.seed);
  Rng rng(config.seed);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::binary);
  TrainOptions opt;
  opt.batch_size = config.batch_size;
  opt.checkpoint_dir = out_dir / "checkpoints";
  opt.log = &log;
  opt.meta = {{"ablation", config.ablation}, {"seed", config.seed}};
  TrainedModel out;
  std::vector<CheckpointRecord> records;
  for (Stage s : {Stage::vit, Stage::fine_grained, Stage::gcn, Stage::joint}) {
    if (!stage_applies(mc, s)) continue;
    try {
      auto r = train_stage(model, train, scaled_plan(s, config.scale, config.epoch_scale), rng, opt);
      records.insert(records.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
    } catch (const std::exception& e) {
      throw StageFailure(to_string(s), e.what());
    }
    out.stages.push_back(to_string(s));
  }
  try {
    out.selection = select_best_checkpoint(model, records, validation);
    const auto scores = score_nodules(model, validation);
    std::vector<ScoredCase> scored;
    for (std::size_t i = 0; i < validation.size(); ++i) {
      const auto& n = validation[i];
      scored.push_back({n.annotation.nodule_id, n.patient_id, n.annotation.pathology == Pathology::malignant, scores[i], false});
    }
    const double t = select_threshold_max_f1(scored);
    // The infinite sentinels mean "call everything" or "call nothing"; probabilities live in [0, 1].
    out.threshold = std::isfinite(t) ? t : (t < 0 ? 0.0 : 1.0);
  } catch (const std::exception& e) {
    throw StageFailure("select", e.what());
  }
  nlohmann::json aucs = out.selection.aucs;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& r : records) names.push_back(r.path.filename().string());
  const nlohmann::json meta = {{"ablation", config.ablation},
                               {"seed", config.seed},
                               {"threshold", out.threshold},
                               {"selected", names.at(out.selection.index)},
                               {"validation_auc", out.selection.validation_auc}};
  out.checkpoint = out_dir / "model.ckpt";
  Checkpoint::capture(model.parameters(), nlohmann::json(mc), meta).save(out.checkpoint);
  write_file(out_dir / "selection.json",
             nlohmann::json{{"checkpoints", names}, {"validation_auc", aucs}, {"selected", out.selection.index}, {"threshold", out.threshold}}
                     .dump(2) +
                 "\n");
  return out;
}

std::unique_ptr<DeepFan> load_model(const fs::path& checkpoint, double* threshold) {
  Checkpoint ck;
  try {
    ck = Checkpoint::load(checkpoint);
  } catch (const std::exception& e) {
    throw ConfigError("cannot load checkpoint " + checkpoint.string() + ": " + e.what());
  }
  auto model = std::make_unique<DeepFan>(ck.config.get<ModelConfig>(), 0);
  ck.restore_into(model->parameters());
  if (threshold) *threshold = ck.meta.value("threshold", 0.5);
  return model;
}

Evaluation evaluate_model(const DeepFan& model, double threshold, const DatasetManifest& manifest, const fs::path& data_dir,
                          Split split, std::uint64_t seed, std::size_t resamples, const fs::path& out_dir) {
  const ModelConfig& mc = model.config();
  const auto data = prepare_split(manifest, data_dir, split, mc.spacing_mm, mc.input_vox);
  Rng rng(seed);
  BootstrapOptions opt;
  opt.resamples = resamples;
  Evaluation ev = evaluate_split(model, data, threshold, rng, opt);
  std::string scores;
  for (std::size_t i = 0; i < ev.nodules.size(); ++i) {
    const auto& c = ev.nodules[i];
    nlohmann::json j = {{"nodule_id", c.id}, {"patient_id", c.patient}, {"malignant", c.malignant}, {"score", c.score}, {"call", c.call}};
    if (i < ev.density_predictions.size()) j["density_pred"] = to_string(static_cast<Density>(ev.density_predictions[i]));
    scores += j.dump() + "\n";
  }
  write_file(out_dir / "scores.jsonl", scores);
  nlohmann::json metrics = {{"split", to_string(split)}, {"threshold", threshold}, {"nodule", ev.nodule_report}, {"patient", ev.patient_report}};
  metrics["density_accuracy"] = ev.density_accuracy ? nlohmann::json(*ev.density_accuracy) : nlohmann::json(nullptr);
  write_file(out_dir / "metrics.json", metrics.dump(2) + "\n");
  return ev;
}

nlohmann::json explain_nodule(const DeepFan& model, const DatasetManifest& manifest, const fs::path& data_dir,
                              const std::string& nodule_id, const fs::path& out_dir) {
  const ModelConfig& mc = model.config();
  for (const auto& entry : manifest.entries) {
    const auto hit = std::find_if(entry.nodules.begin(), entry.nodules.end(), [&](const auto& n) { return n.nodule_id == nodule_id; });
    if (hit == entry.nodules.end()) continue;
    const auto prepared = prepare_patient(read_volume(data_dir / entry.volume_path), entry, mc.spacing_mm, mc.input_vox);
    const auto& n = *std::find_if(prepared.begin(), prepared.end(), [&](const auto& p) { return p.annotation.nodule_id == nodule_id; });
    const Tensor input = model_input(n);
    double score = 0.0;
    {
      NoGradGuard no_grad;
      Rng rng(kEvalSeed);
      score = model.forward(input, rng, false).score;
    }
    const std::string layer = default_cam_layer(mc);
    const std::size_t z = mc.input_vox / 2;
    nlohmann::json record = {{"nodule_id", nodule_id}, {"patient_id", entry.patient_id}, {"score", score}, {"layer", layer}, {"slice", z}};
    for (Pathology cls : {Pathology::benign, Pathology::malignant}) {
      const Heatmap h = grad_cam_map(model, input, layer, cls);
      const std::string name = nodule_id + ".cam-" + to_string(cls) + ".png";
      write_file(out_dir / name, render_overlay(axial_slice(input, z), axial_slice(h.upsampled, z)));
      record["overlays"][to_string(cls)] = name;
    }
    record["attribution"] = mc.fusion == Fusion::gcn ? nlohmann::json(gcn_node_attribution(model, input)) : nlohmann::json(nullptr);
    write_file(out_dir / (nodule_id + ".json"), record.dump(2) + "\n");
    return record;
  }
  throw ConfigError("unknown nodule '" + nodule_id + "'");
}

std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out[rel] = sha256_hex(slurp(e.path()));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  write_file(out / "config.json", nlohmann::json(config).dump(2) + "\n");
  const fs::path data_dir = config.data_dir.value_or(out / "data");

  ExperimentResult result;
  DatasetManifest manifest;
  try {
    result.generated_data = ensure_dataset(config.data, data_dir);
    manifest = load_manifest(data_dir);
  } catch (const std::exception& e) {
    throw StageFailure("gen-data", e.what());
  }
  result.model = train_model(config, manifest, data_dir, out / "train");

  std::unique_ptr<DeepFan> model;
  try {
    model = load_model(result.model.checkpoint);
    result.test = evaluate_model(*model, result.model.threshold, manifest, data_dir, Split::test, config.seed,
                                 config.bootstrap_resamples, out / "eval");
  } catch (const std::exception& e) {
    throw StageFailure("eval", e.what());
  }
  try {
    std::size_t done = 0;
    for (const auto& entry : manifest.entries) {
      if (entry.split != Split::test) continue;
      for (const auto& n : entry.nodules) {
        if (done++ >= config.explain_samples) break;
        explain_nodule(*model, manifest, data_dir, n.nodule_id, out / "explain");
      }
      if (done >= config.explain_samples) break;
    }
  } catch (const std::exception& e) {
    throw StageFailure("explain", e.what());
  }
  try {
    // Labelled by variant, not directory, so the report does not depend on where the run lives.
    emit_run_report({out}, out / "report", {"ablation-" + std::to_string(config.ablation)});
  } catch (const std::exception& e) {
    throw StageFailure("report", e.what());
  }

  nlohmann::json m = {{"gen_data", result.generated_data ? "ran" : "reused"},
                      {"stages", stage_names(model->config())},
                      {"artifacts", hash_tree(out)}};
  if (config.data_dir) m["data_manifest_sha256"] = sha256_hex(slurp(data_dir / "manifest.jsonl"));
  write_file(out / "manifest.json", m.dump(2) + "\n");
  result.manifest = m;
  return result;
}

std::vector<fs::path> emit_run_report(const std::vector<fs::path>& runs, const fs::path& out_dir,
                                      const std::vector<std::string>& labels) {
  if (runs.empty()) throw ConfigError("no runs to report");
  if (!labels.empty() && labels.size() != runs.size()) throw ConfigError("one label per run");
  std::string table = "run,ablation,level,threshold,density_accuracy," + metric_csv_header() + "\n";
  std::vector<RocSeries> curves;
  std::vector<RadarSeries> radar;
  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const fs::path& run = runs[i];
    nlohmann::json metrics, cfg;
    try {
      metrics = nlohmann::json::parse(slurp(run / "eval" / "metrics.json"));
      cfg = nlohmann::json::parse(slurp(run / "config.json"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed run " + run.string() + ": " + e.what());
    }
    std::string label = run.filename().empty() ? run.parent_path().filename().string() : run.filename().string();
    if (!labels.empty()) label = labels[i];
    const std::string ablation = std::to_string(cfg.value("ablation", 0));
    const double threshold = metrics.at("threshold").get<double>();
    std::optional<double> density;
    if (!metrics.at("density_accuracy").is_null()) density = metrics.at("density_accuracy").get<double>();
    MetricReport nodule;
    for (const char* level : {"nodule", "patient"}) {
      const MetricReport r = metric_report_from_json(metrics.at(level));
      if (std::string(level) == "nodule") nodule = r;
      table += label + "," + ablation + "," + level + "," + format_number(threshold) + "," + format_number(density) + "," +
               metric_csv_cells(r) + "\n";
    }
    std::vector<ScoredCase> scored;
    std::istringstream lines(slurp(run / "eval" / "scores.jsonl"));
    for (std::string line; std::getline(lines, line);) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      scored.push_back({j.at("nodule_id"), j.at("patient_id"), j.at("malignant"), j.at("score"), j.at("call")});
    }
    try {
      curves.push_back({label, roc_auc(scored).points, nodule.at("auc").value});
    } catch (const UndefinedStatistic&) {
      curves.push_back({label, {}, std::nullopt});
    }
    radar.push_back(radar_series(label, nodule));
    summary.push_back({{"run", label}, {"ablation", cfg.value("ablation", 0)}, {"metrics", metrics}});
  }
  std::vector<fs::path> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    write_file(out_dir / name, bytes);
    written.push_back(out_dir / name);
  };
  put("metrics.csv", table);
  put("metrics.json", summary.dump(2) + "\n");
  put("roc.svg", roc_svg(curves));
  put("radar.svg", radar_svg(radar));
  return written;
}

std::vector<fs::path> emit_readings_report(const fs::path& readings, const fs::path& out_dir, std::uint64_t seed,
                                           std::size_t resamples, std::string* notice) {
  ReadingsFile f;
  try {
    f = parse_readings(slurp(readings));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(readings.string() + ": " + e.what());
  }
  BootstrapOptions opt;
  opt.resamples = resamples;
  const TrialReport report = build_trial_report(f, nullptr, seed, opt);
  std::vector<fs::path> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    write_file(out_dir / name, bytes);
    written.push_back(out_dir / name);
  };
  put("report.json", nlohmann::json(report).dump(2) + "\n");
  for (const auto& [name, csv] : report_tables(report)) put(name, csv);
  for (const auto& [name, svg] : report_plots(report)) put(name, svg);
  if (notice) {
    *notice = f.rows.empty() ? "no readings in " + readings.string() + "; tables are empty and no plots were drawn"
              : report.included.empty() ? "no reader has completed both arms; tables are empty and no plots were drawn"
                                        : "";
  }
  return written;
}

}  // namespace nb
