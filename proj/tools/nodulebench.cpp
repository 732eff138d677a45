// nodulebench: dataset generation, training, evaluation, explanations,
// reports and the reader-trial server from one binary.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nodulebench/orchestrator/pipeline.hpp"
#include "nodulebench/report/plots.hpp"
#include "nodulebench/trial/server.hpp"
#include "nodulebench/trial/simulate.hpp"

namespace fs = std::filesystem;
using namespace nb;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Common {
  std::uint64_t seed = 1;
  std::string profile = "desk";
  int ablation = 9;
  std::string out;
  std::string data = env_or("NODULEBENCH_DATA", "");
  std::size_t nodules = 400;
  double epoch_scale = 1.0;
  std::size_t resamples = 1000;
};

void add_common(CLI::App* app, Common& c, bool with_profile = true) {
  app->add_option("--seed", c.seed, "Seed for data, initialization and resampling");
  if (with_profile) app->add_option("--profile", c.profile, "Scale profile")->check(CLI::IsMember({"desk", "paper"}));
  app->add_option("--ablation", c.ablation, "Model variant 1..9")->check(CLI::Range(1, 9));
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--data", c.data, "Dataset directory (env NODULEBENCH_DATA)");
}

ExperimentConfig experiment(const Common& c) {
  ExperimentConfig cfg;
  cfg.seed = c.seed;
  cfg.scale = scale_from_string(c.profile);
  cfg.ablation = c.ablation;
  cfg.data.nodules = c.nodules;
  cfg.data.seed = c.seed;
  if (!c.data.empty()) cfg.data_dir = c.data;
  cfg.epoch_scale = c.epoch_scale;
  cfg.bootstrap_resamples = c.resamples;
  cfg.out_dir = c.out;
  return cfg;
}

fs::path require_data(const Common& c) {
  if (c.data.empty()) throw ConfigError("no dataset: pass --data or set NODULEBENCH_DATA");
  if (!fs::exists(fs::path(c.data) / "manifest.jsonl")) throw ConfigError("no manifest.jsonl in " + c.data);
  return c.data;
}

void require_out(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
}

int gen_data(const Common& c) {
  const std::string dir = c.out.empty() ? c.data : c.out;
  if (dir.empty()) throw ConfigError("--out is required");
  DatasetConfig dc;
  dc.nodules = c.nodules;
  dc.seed = c.seed;
  DatasetManifest m;
  try {
    m = build_dataset(dc, dir);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::exception& e) {
    throw StageFailure("gen-data", e.what());
  }
  std::cout << "wrote " << m.nodule_count() << " nodules (" << m.nodule_count(Split::train) << " train, "
            << m.nodule_count(Split::validation) << " validation, " << m.nodule_count(Split::test) << " test) to " << dir << "\n";
  return kOk;
}

int train(const Common& c) {
  require_out(c);
  ExperimentConfig cfg = experiment(c);
  cfg.validate();
  const fs::path data = cfg.data_dir.value_or(fs::path(c.out) / "data");
  try {
    ensure_dataset(cfg.data, data);
  } catch (const std::exception& e) {
    throw StageFailure("gen-data", e.what());
  }
  const auto trained = train_model(cfg, load_manifest(data), data, c.out);
  std::cout << "checkpoint " << trained.checkpoint.string() << " validation AUC " << trained.selection.validation_auc
            << " threshold " << trained.threshold << "\n";
  return kOk;
}

int eval(const Common& c, const std::string& ckpt, const std::string& split) {
  require_out(c);
  const fs::path data = require_data(c);
  double threshold = 0.5;
  const auto model = load_model(ckpt, &threshold);
  Split s;
  try {
    s = split_from_string(split);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  Evaluation ev;
  try {
    ev = evaluate_model(*model, threshold, load_manifest(data), data, s, c.seed, c.resamples, c.out);
  } catch (const std::exception& e) {
    throw StageFailure("eval", e.what());
  }
  const auto& auc = ev.nodule_report.at("auc").value;
  std::cout << split << " nodule AUC " << (auc ? std::to_string(*auc) : "NA") << " (" << ev.nodules.size() << " nodules)\n";
  return kOk;
}

int explain(const Common& c, const std::string& ckpt, const std::string& case_id) {
  require_out(c);
  const fs::path data = require_data(c);
  const auto model = load_model(ckpt);
  const auto manifest = load_manifest(data);
  nlohmann::json record;
  try {
    record = explain_nodule(*model, manifest, data, case_id, c.out);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure("explain", e.what());
  }
  std::cout << "wrote " << record.at("overlays").size() << " overlays and " << case_id << ".json to " << c.out << "\n";
  return kOk;
}

int report(const Common& c, const std::vector<std::string>& runs, const std::string& readings) {
  require_out(c);
  if (runs.empty() == readings.empty()) throw ConfigError("pass either --run DIR... or --readings FILE");
  std::vector<fs::path> written;
  std::string notice;
  if (!readings.empty()) {
    written = emit_readings_report(readings, c.out, c.seed, c.resamples, &notice);
  } else {
    written = emit_run_report(std::vector<fs::path>(runs.begin(), runs.end()), c.out);
  }
  if (!notice.empty()) std::cout << "notice: " << notice << "\n";
  for (const auto& p : written) std::cout << p.string() << "\n";
  return kOk;
}

int run(Common c, const std::string& config_file) {
  ExperimentConfig cfg;
  if (!config_file.empty()) {
    try {
      cfg = nlohmann::json::parse(slurp(config_file)).get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(config_file + ": " + e.what());
    }
    cfg.out_dir = c.out;
  } else {
    cfg = experiment(c);
  }
  const auto result = run_experiment(cfg);
  std::cout << "gen-data " << result.manifest.at("gen_data").get<std::string>() << "; test nodule AUC "
            << format_number(result.test.nodule_report.at("auc").value) << "; manifest " << (fs::path(c.out) / "manifest.json").string()
            << "\n";
  return kOk;
}

TrialServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve(const Common& c, const std::string& trial_file, const std::string& ckpt, const std::string& addr,
          const std::string& state, const std::string& admin_token) {
  const fs::path data = require_data(c);
  const auto [host, port] = [&] {
    try {
      return parse_address(addr);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }();
  TrialConfig trial;
  try {
    trial = nlohmann::json::parse(slurp(trial_file)).get<TrialConfig>();
    trial.validate();
  } catch (const std::exception& e) {
    throw ConfigError(trial_file + ": " + e.what());
  }
  double threshold = trial.threshold;
  std::shared_ptr<const DeepFan> model = load_model(ckpt, &threshold);
  trial.threshold = threshold;
  trial.checkpoint = ckpt;
  const std::uint64_t secret = std::strtoull(env_or("NODULEBENCH_TOKEN_SECRET", "0").c_str(), nullptr, 10);
  TrialService service(state, data, std::make_shared<ModelAiProvider>(model, data, threshold), std::make_shared<SystemClock>(), secret);
  if (service.trial_ids().empty()) {
    const std::string id = service.create_trial(trial);
    std::cout << "created trial " << id << "\n";
  }
  for (const auto& id : service.trial_ids()) {
    for (const auto& r : service.config(id).readers) {
      std::cout << id << " " << r.reader_id << " group " << to_string(r.group) << " token " << service.reader_token(id, r.reader_id) << "\n";
    }
  }
  ServerOptions opt;
  opt.admin_token = admin_token;
  TrialServer server(service, opt);
  const int bound = server.bind(host, port);
  std::cout << "listening on " << host << ":" << bound << std::endl;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return kOk;
}

int simulate(const Common& c, const std::vector<std::string>& profiles, const std::string& ckpt, std::size_t readers,
             std::size_t cases) {
  require_out(c);
  const fs::path data = require_data(c);
  SimulationOptions opt;
  opt.seed = c.seed;
  opt.profiles.clear();
  for (const auto& p : profiles) {
    try {
      opt.profiles.push_back(profile_from_string(p));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  TrialConfig trial;
  try {
    trial = trial_config_from_manifest(load_manifest(data), data, Split::test, cases, readers, c.seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  std::shared_ptr<AiProvider> ai;
  if (ckpt.empty()) {
    // Without a checkpoint the AI card follows the truth.
    std::map<std::string, double> scores;
    for (const auto& tc : trial.cases) scores[tc.case_id] = tc.malignant ? 0.9 : 0.1;
    ai = std::make_shared<TableAiProvider>(scores, trial.threshold);
    std::cout << "notice: no --ckpt; the simulated AI card equals the truth\n";
  } else {
    double threshold = 0.5;
    std::shared_ptr<const DeepFan> model = load_model(ckpt, &threshold);
    trial.threshold = threshold;
    trial.checkpoint = ckpt;
    ai = std::make_shared<ModelAiProvider>(model, data, threshold);
  }
  const fs::path out = c.out;
  fs::create_directories(out);
  auto clock = std::make_shared<ManualClock>(1700000000);
  TrialService service(out / "state", data, ai, clock);
  TrialServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  SimulationTranscript t;
  try {
    t = simulate_trial("127.0.0.1", port, trial, *clock, opt);
  } catch (const std::exception& e) {
    server.stop();
    throw StageFailure("simulate-readers", e.what());
  }
  server.stop();
  {
    std::ofstream f(out / "readings.jsonl", std::ios::binary);
    f << service.export_trial(t.trial_id);
  }
  emit_readings_report(out / "readings.jsonl", out / "report", c.seed, c.resamples);
  std::cout << "trial " << t.trial_id << ": " << t.readings << " readings from " << readers << " readers; report in "
            << (out / "report").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lung-nodule benchmark: synthetic data, model training, explanations and reader trials"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-data", "Generate the phantom dataset");
  add_common(gen, c);
  gen->add_option("--nodules", c.nodules, "Number of nodules");

  auto* tr = app.add_subcommand("train", "Train one model variant and select its checkpoint and threshold");
  add_common(tr, c);
  tr->add_option("--nodules", c.nodules, "Nodules to generate when the dataset is absent");
  tr->add_option("--epoch-scale", c.epoch_scale, "Multiply every stage's epochs");

  std::string ckpt, split = "test", case_id;
  auto* ev = app.add_subcommand("eval", "Score a split with a checkpoint");
  add_common(ev, c);
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--split", split, "train|validation|test");
  ev->add_option("--resamples", c.resamples, "Bootstrap resamples for the intervals");

  auto* ex = app.add_subcommand("explain", "Grad-CAM overlays and node attribution for one nodule");
  add_common(ex, c);
  ex->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ex->add_option("--case", case_id, "Nodule id")->required();

  std::vector<std::string> runs;
  std::string readings;
  auto* rp = app.add_subcommand("report", "Tables and plots from experiment runs or a readings export");
  add_common(rp, c);
  rp->add_option("--run", runs, "Experiment directory (repeatable)");
  rp->add_option("--readings", readings, "Readings export (JSON lines)");
  rp->add_option("--resamples", c.resamples, "Bootstrap resamples for the intervals");

  std::string config_file;
  auto* rn = app.add_subcommand("run", "Full experiment: data, training, evaluation, explanations, report, manifest");
  add_common(rn, c);
  rn->add_option("--config", config_file, "Experiment config JSON (flags are ignored when given)");
  rn->add_option("--nodules", c.nodules, "Nodules to generate when the dataset is absent");
  rn->add_option("--epoch-scale", c.epoch_scale, "Multiply every stage's epochs");
  rn->add_option("--resamples", c.resamples, "Bootstrap resamples for the intervals");

  std::string trial_file, addr = env_or("NODULEBENCH_ADDR", "127.0.0.1:8080"), state = "trial-state", admin;
  auto* sv = app.add_subcommand("serve", "Serve a reader trial over HTTP");
  add_common(sv, c);
  sv->add_option("--trial", trial_file, "Trial config JSON")->required();
  sv->add_option("--ckpt", ckpt, "Checkpoint behind the AI card")->required();
  sv->add_option("--addr", addr, "HOST:PORT (env NODULEBENCH_ADDR)");
  sv->add_option("--state", state, "Directory of the append-only trial logs");
  sv->add_option("--admin-token", admin, "Bearer token for trial creation, export and report");

  std::vector<std::string> profiles{"noisy"};
  std::size_t sim_readers = 12, sim_cases = 50;
  auto* sm = app.add_subcommand("simulate-readers", "Run simulated readers through a full trial over HTTP");
  add_common(sm, c, false);
  sm->add_option("--profile", profiles, "copy|ignore|noisy, cycled over the readers")->delimiter(',');
  sm->add_option("--ckpt", ckpt, "Checkpoint behind the AI card");
  sm->add_option("--readers", sim_readers, "Number of readers");
  sm->add_option("--cases", sim_cases, "Cases per reader");
  sm->add_option("--resamples", c.resamples, "Bootstrap resamples for the intervals");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) return gen_data(c);
    if (tr->parsed()) return train(c);
    if (ev->parsed()) return eval(c, ckpt, split);
    if (ex->parsed()) return explain(c, ckpt, case_id);
    if (rp->parsed()) return report(c, runs, readings);
    if (rn->parsed()) return run(c, config_file);
    if (sv->parsed()) return serve(c, trial_file, ckpt, addr, state, admin);
    if (sm->parsed()) return simulate(c, profiles, ckpt, sim_readers, sim_cases);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const StageFailure& e) {
    std::cerr << e.what() << "\n";
    return kStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kStageFailure;
  }
  return kConfigError;
}
