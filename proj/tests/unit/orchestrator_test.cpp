#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "nodulebench/orchestrator/pipeline.hpp"
#include "nodulebench/tensor/checkpoint.hpp"
#include "nodulebench/trial/readings.hpp"

using namespace nb;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Runs : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "nb_orchestrator_test");
    fs::remove_all(*root_);
    fs::create_directories(*root_);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }

  // A run small enough for a unit test: 40 nodules, one epoch per stage.
  static ExperimentConfig tiny(const std::string& name, int ablation = 9, std::uint64_t seed = 3) {
    ExperimentConfig c;
    c.seed = seed;
    c.ablation = ablation;
    c.data.nodules = 40;
    c.data.seed = 3;
    c.epoch_scale = 0.01;
    c.bootstrap_resamples = 20;
    c.explain_samples = 1;
    c.out_dir = *root_ / name;
    return c;
  }

  static fs::path* root_;
};

fs::path* Runs::root_ = nullptr;

int cli(const std::string& args, std::string* out = nullptr) {
  const fs::path log = fs::temp_directory_path() / "nb_cli_out.txt";
  const int status = std::system((std::string(NB_CLI) + " " + args + " > " + log.string() + " 2>&1").c_str());
  if (out) *out = slurp(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ExperimentConfigTest, RoundTripsThroughJson) {
  ExperimentConfig c;
  c.seed = 11;
  c.scale = Scale::paper;
  c.ablation = 4;
  c.data.nodules = 120;
  c.data_dir = "/data/x";
  c.epoch_scale = 0.5;
  c.batch_size = 4;
  const nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_FALSE(j.contains("out_dir"));
}

TEST(ExperimentConfigTest, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(nlohmann::json({{"seed", 1}, {"ablaton", 3}}).get<ExperimentConfig>(), ConfigError);
  ExperimentConfig c;
  c.out_dir = "x";
  EXPECT_NO_THROW(c.validate());
  c.ablation = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ablation = 1;
  c.epoch_scale = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.epoch_scale = 1.0;
  c.out_dir.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ScaledPlan, KeepsTheProfileAtUnitScaleAndAtLeastOneEpoch) {
  for (Stage s : {Stage::vit, Stage::fine_grained, Stage::gcn, Stage::joint}) {
    const StagePlan base = StagePlan::for_scale(s, Scale::paper);
    const StagePlan same = scaled_plan(s, Scale::paper, 1.0);
    EXPECT_EQ(same.epochs, base.epochs);
    EXPECT_EQ(same.decay_epochs, base.decay_epochs);
    const StagePlan small = scaled_plan(s, Scale::paper, 1e-6);
    EXPECT_EQ(small.epochs, 1u);
    EXPECT_TRUE(small.decay_epochs.empty());
  }
  const StagePlan half = scaled_plan(Stage::vit, Scale::paper, 0.5);
  EXPECT_EQ(half.epochs, StagePlan::for_scale(Stage::vit, Scale::paper).epochs / 2);
}

TEST_F(Runs, MissingDataRunsGenDataFirstAndRecordsIt) {
  const auto cfg = tiny("gen");
  const auto r = run_experiment(cfg);
  EXPECT_TRUE(r.generated_data);
  EXPECT_EQ(r.manifest.at("gen_data"), "ran");
  EXPECT_TRUE(fs::exists(cfg.out_dir / "data" / "manifest.jsonl"));
  const auto manifest = nlohmann::json::parse(slurp(cfg.out_dir / "manifest.json"));
  EXPECT_EQ(manifest, r.manifest);
  for (const char* f : {"config.json", "train/model.ckpt", "train/train_log.jsonl", "eval/metrics.json", "eval/scores.jsonl",
                        "report/metrics.csv", "report/roc.svg", "report/radar.svg"}) {
    EXPECT_TRUE(manifest.at("artifacts").contains(f)) << f;
  }
  // The serialized config reproduces the run.
  EXPECT_EQ(nlohmann::json::parse(slurp(cfg.out_dir / "config.json")), nlohmann::json(cfg));

  auto again = cfg;
  again.out_dir = *root_ / "gen2";
  again.data_dir = cfg.out_dir / "data";
  const auto r2 = run_experiment(again);
  EXPECT_FALSE(r2.generated_data);
  EXPECT_EQ(r2.manifest.at("gen_data"), "reused");
}

TEST_F(Runs, SameConfigAndSeedGiveIdenticalManifests) {
  const auto a = run_experiment(tiny("det_a"));
  const auto b = run_experiment(tiny("det_b"));
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
  EXPECT_EQ(slurp(*root_ / "det_a" / "manifest.json"), slurp(*root_ / "det_b" / "manifest.json"));
  const auto c = run_experiment(tiny("det_c", 9, 4));
  EXPECT_NE(a.manifest.at("artifacts").at("train/model.ckpt"), c.manifest.at("artifacts").at("train/model.ckpt"));
}

TEST_F(Runs, GlobalOnlyVariantHasNoFineGrainedOrGraphParameters) {
  const auto r = run_experiment(tiny("abl1", 1));
  const Checkpoint ck = Checkpoint::load(r.model.checkpoint);
  ASSERT_FALSE(ck.names.empty());
  for (const auto& n : ck.names) EXPECT_EQ(n.rfind("global.", 0), 0u) << n;
  EXPECT_EQ(r.model.stages, (std::vector<std::string>{"vit", "joint"}));
  // No attribution without graph fusion.
  for (const auto& e : fs::directory_iterator(*root_ / "abl1" / "explain")) {
    if (e.path().extension() == ".json") {
      EXPECT_TRUE(nlohmann::json::parse(slurp(e.path())).at("attribution").is_null());
    }
  }
}

TEST_F(Runs, FullVariantExplainsWithOverlaysAndAttribution) {
  const auto cfg = tiny("abl9");
  const auto r = run_experiment(cfg);
  const auto names = Checkpoint::load(r.model.checkpoint).names;
  EXPECT_TRUE(std::any_of(names.begin(), names.end(), [](const auto& n) { return n.rfind("fusion.gcn", 0) == 0; }));
  const auto model = load_model(r.model.checkpoint);
  const fs::path data = cfg.out_dir / "data";
  const auto manifest = load_manifest(data);
  const std::string id = manifest.entries.front().nodules.front().nodule_id;
  const fs::path out = *root_ / "explain_one";
  const auto rec = explain_nodule(*model, manifest, data, id, out);
  for (const char* cls : {"benign", "malignant"}) {
    const std::string png = slurp(out / (id + ".cam-" + cls + ".png"));
    ASSERT_GT(png.size(), 8u);
    EXPECT_EQ(png.substr(1, 3), "PNG");
  }
  const auto& nodes = rec.at("attribution").at("nodes");
  ASSERT_EQ(nodes.size(), 12u);
  double sum = 0.0;
  for (const auto& x : nodes) sum += x.at("weight").get<double>();
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(nlohmann::json::parse(slurp(out / (id + ".json"))), rec);
  EXPECT_THROW(explain_nodule(*model, manifest, data, "no-such-nodule", out), ConfigError);
}

TEST_F(Runs, StageFailureNamesTheStageAndKeepsEarlierArtifacts) {
  auto cfg = tiny("fail");
  run_experiment(cfg);
  const std::string ckpt = slurp(cfg.out_dir / "train" / "model.ckpt");
  const fs::path bad = *root_ / "bad_data";
  fs::create_directories(bad);
  std::ofstream(bad / "manifest.jsonl") << "{not json\n";
  cfg.data_dir = bad;
  try {
    run_experiment(cfg);
    FAIL() << "expected a stage failure";
  } catch (const StageFailure& e) {
    EXPECT_EQ(e.stage, "gen-data");
  }
  EXPECT_EQ(slurp(cfg.out_dir / "train" / "model.ckpt"), ckpt);
}

TEST_F(Runs, RunReportNumbersMatchTheTable) {
  run_experiment(tiny("rep_a"));
  run_experiment(tiny("rep_b", 1));
  const fs::path out = *root_ / "report";
  emit_run_report({*root_ / "rep_a", *root_ / "rep_b"}, out);
  const std::string csv = slurp(out / "metrics.csv");
  const std::string roc = slurp(out / "roc.svg");
  const std::regex legend(R"((rep_[ab]) \(AUC ([^)]*)\))");
  std::size_t seen = 0;
  for (auto it = std::sregex_iterator(roc.begin(), roc.end(), legend); it != std::sregex_iterator(); ++it, ++seen) {
    const std::string row = (*it)[1].str() + ",";
    std::istringstream lines(csv);
    std::string line;
    while (std::getline(lines, line) && !(line.rfind(row, 0) == 0 && line.find(",nodule,") != std::string::npos)) {
    }
    // run,ablation,level,threshold,density_accuracy,n,auc
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    ASSERT_GT(cells.size(), 6u);
    EXPECT_EQ(cells[6], (*it)[2].str());
  }
  EXPECT_EQ(seen, 2u);
  const std::string radar = slurp(out / "radar.svg");
  std::size_t axes = 0;
  for (auto at = radar.find("class=\"axis\""); at != std::string::npos; at = radar.find("class=\"axis\"", at + 1)) ++axes;
  EXPECT_EQ(axes, 7u);
}

TEST_F(Runs, EmptyReadingsGiveEmptyTablesNoPlotsAndANotice) {
  const fs::path readings = *root_ / "empty.jsonl";
  ReadingsFile f;
  f.trial_id = "T0009";
  f.readers = {{"r01", Group::A, std::nullopt}, {"r02", Group::B, std::nullopt}};
  f.case_ids = {"c0"};
  std::ofstream(readings) << serialize_readings(f);
  std::string notice;
  const auto written = emit_readings_report(readings, *root_ / "empty_report", 1, 20, &notice);
  EXPECT_FALSE(notice.empty());
  for (const auto& p : written) EXPECT_NE(p.extension(), ".svg") << p;
  EXPECT_EQ(slurp(*root_ / "empty_report" / "readers.csv").find('\n'), slurp(*root_ / "empty_report" / "readers.csv").size() - 1);
}

TEST_F(Runs, CliExitCodes) {
  std::string out;
  EXPECT_EQ(cli("", &out), 2);
  EXPECT_EQ(cli("train --ablation 0 --out " + (*root_ / "x").string()), 2);
  EXPECT_EQ(cli("train --profile huge --out " + (*root_ / "x").string()), 2);
  EXPECT_EQ(cli("eval --ckpt nope.ckpt --data /nonexistent --out " + (*root_ / "x").string()), 2);
  std::ofstream(*root_ / "typo.json") << R"({"seed": 1, "ablaton": 2})";
  EXPECT_EQ(cli("run --config " + (*root_ / "typo.json").string() + " --out " + (*root_ / "x").string(), &out), 2);
  EXPECT_NE(out.find("ablaton"), std::string::npos);

  const fs::path bad = *root_ / "cli_bad";
  fs::create_directories(bad);
  std::ofstream(bad / "manifest.jsonl") << "{not json\n";
  EXPECT_EQ(cli("run --data " + bad.string() + " --out " + (*root_ / "cli_fail").string(), &out), 3);
  EXPECT_NE(out.find("gen-data"), std::string::npos);

  ReadingsFile f;
  f.trial_id = "T0001";
  f.readers = {{"r01", Group::A, std::nullopt}, {"r02", Group::B, std::nullopt}};
  std::ofstream(*root_ / "none.jsonl") << serialize_readings(f);
  EXPECT_EQ(cli("report --readings " + (*root_ / "none.jsonl").string() + " --out " + (*root_ / "cli_report").string(), &out), 0);
  EXPECT_NE(out.find("notice"), std::string::npos);

  const fs::path data = *root_ / "cli_data";
  EXPECT_EQ(cli("gen-data --nodules 12 --seed 2 --out " + data.string()), 0);
  EXPECT_TRUE(fs::exists(data / "manifest.jsonl"));
}
