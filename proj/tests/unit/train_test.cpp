#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nodulebench/tensor/gradcheck.hpp"
#include "nodulebench/train/trainer.hpp"

using namespace nb;
namespace fs = std::filesystem;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from({1, n}, std::move(v));
}

// Outputs carrying every head of the full model with the given logits.
ForwardOutputs outputs_with(const Tensor& binary, const Tensor& density) {
  ForwardOutputs out;
  out.global = GlobalFeatures{Tensor(), binary, 0.5};
  FineGrainedFeatures fine;
  fine.logits = {binary, binary, density};
  out.fine = fine;
  FeatureGraph g;
  g.logits_all = binary;
  g.logits_gcn = binary;
  out.graph = g;
  out.decision_logits = binary;
  return out;
}

std::string group_bytes(const ParameterSet& params, const std::string& group) {
  std::string bytes;
  for (const auto& [name, t] : params.items()) {
    if (name.rfind(group + ".", 0) != 0) continue;
    const auto v = t.values();
    bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return bytes;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Pair-counting AUC, independent of the stats module.
double pair_auc(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

class Phantoms : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "nb_train_test_data";
    fs::remove_all(dir_);
    DatasetConfig dc;
    dc.nodules = 40;
    dc.seed = 11;
    const auto m = build_dataset(dc, dir_);
    const auto cfg = ModelConfig::ablation(9, Scale::desk);
    train_ = new std::vector<PreparedNodule>(prepare_split(m, dir_, Split::train, cfg.spacing_mm, cfg.input_vox));
    test_ = new std::vector<PreparedNodule>(prepare_split(m, dir_, Split::test, cfg.spacing_mm, cfg.input_vox));
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    fs::remove_all(dir_);
  }

  static std::span<const PreparedNodule> train(std::size_t n) {
    return std::span<const PreparedNodule>(*train_).first(std::min(n, train_->size()));
  }
  static const std::vector<PreparedNodule>& test() { return *test_; }

  static StagePlan short_plan(Stage stage, std::size_t epochs) {
    auto p = StagePlan::desk(stage);
    p.epochs = epochs;
    p.decay_epochs.clear();
    return p;
  }

  static inline fs::path dir_;
  static inline std::vector<PreparedNodule>* train_ = nullptr;
  static inline std::vector<PreparedNodule>* test_ = nullptr;
};

}  // namespace

TEST(Loss, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.w0, 0.2);
  EXPECT_EQ(w.w1, 0.2);
  EXPECT_EQ(w.w2, 0.2);
  EXPECT_EQ(w.w3, 0.4);
}

TEST(Loss, AllTermsEqualGiveOnePointFourTimes) {
  // [0, 0] gives ln 2 for either label; [ln 2, 0, 0] gives p = 1/2 on class 0.
  const auto out = outputs_with(row({0.0, 0.0}), row({std::log(2.0), 0.0, 0.0}));
  LossTarget t;
  t.attributes = {0, 1, 0};
  const auto b = composite_loss(out, t, LossWeights{});
  const double L = std::log(2.0);
  for (double term : {b.l_t0, b.l_c0, b.l_c1, b.l_c2, b.l_all, b.l_g}) EXPECT_NEAR(term, L, 1e-15);
  EXPECT_NEAR(b.total, 1.4 * L, 1e-12);
  // Oracle: the weighted sum written out independently.
  const double oracle = 0.2 * b.l_t0 + 0.2 * (b.l_c0 + b.l_c1 + b.l_c2) + 0.2 * b.l_all + 0.4 * b.l_g;
  EXPECT_NEAR(b.total, oracle, 1e-12);
  EXPECT_NEAR(b.total_tensor.item(), b.total, 1e-12);
}

TEST(Loss, RandomBreakdownsMatchWeightedSum) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto out = outputs_with(row({rng.normal(), rng.normal()}), row({rng.normal(), rng.normal(), rng.normal()}));
    LossTarget t;
    t.pathology = rng.uniform() < 0.5 ? Pathology::benign : Pathology::malignant;
    t.attributes = {rng.uniform() < 0.5 ? 0u : 1u, rng.uniform() < 0.5 ? 0u : 1u, static_cast<std::size_t>(rng.uniform() * 3)};
    const LossWeights w{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const auto b = composite_loss(out, t, w);
    for (double term : {b.l_t0, b.l_c0, b.l_c1, b.l_c2, b.l_all, b.l_g}) EXPECT_GE(term, 0.0);
    EXPECT_NEAR(b.total, w.w0 * b.l_t0 + w.w1 * (b.l_c0 + b.l_c1 + b.l_c2) + w.w2 * b.l_all + w.w3 * b.l_g, 1e-12);
    EXPECT_NEAR(b.total_tensor.item(), b.total, 1e-12);
  }
}

TEST(Loss, PerfectPredictionsGiveZero) {
  const auto out = outputs_with(row({800.0, -800.0}), row({-800.0, 800.0, -800.0}));
  LossTarget t;
  t.pathology = Pathology::benign;
  t.attributes = {0, 0, 1};
  EXPECT_EQ(composite_loss(out, t, LossWeights{}).total, 0.0);
}

TEST(Loss, WeightMaskingIsolatesGlobalTerm) {
  const auto out = outputs_with(row({0.3, -1.2}), row({0.5, 0.1, -0.4}));
  LossTarget t;
  t.pathology = Pathology::malignant;
  const auto b = composite_loss(out, t, LossWeights{1.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(b.total, b.l_t0);
  EXPECT_EQ(b.total_tensor.item(), b.l_t0);
}

TEST(Loss, MissingAttributeLabelsThrow) {
  const auto out = outputs_with(row({0.0, 0.0}), row({0.0, 0.0, 0.0}));
  LossTarget t;
  t.has_attributes = false;
  EXPECT_THROW(composite_loss(out, t, LossWeights{}), std::invalid_argument);
}

TEST(Loss, AbsentHeadsContributeZero) {
  ForwardOutputs out;
  out.global = GlobalFeatures{Tensor(), row({0.4, -0.1}), 0.5};
  out.decision_logits = out.global->logits;
  LossTarget t;
  t.has_attributes = false;  // no local branch, so no labels needed
  const auto b = composite_loss(out, t, LossWeights{});
  EXPECT_EQ(b.l_c0 + b.l_c1 + b.l_c2 + b.l_all + b.l_g, 0.0);
  EXPECT_EQ(b.total, 0.2 * b.l_t0);
}

TEST(Schedule, PaperDecadePointsAreExact) {
  const auto vit = StagePlan::paper(Stage::vit);
  EXPECT_EQ(lr_schedule(vit, 0), 0.0002);
  EXPECT_EQ(lr_schedule(vit, 399), 0.0002);
  EXPECT_EQ(lr_schedule(vit, 400), 0.00002);
  EXPECT_EQ(lr_schedule(vit, 800), 0.000002);
  EXPECT_EQ(lr_schedule(vit, 1199), 0.000002);
  const auto fg = StagePlan::paper(Stage::fine_grained);
  EXPECT_EQ(lr_schedule(fg, 0), 0.01);
  EXPECT_EQ(lr_schedule(fg, 400), 0.001);
  EXPECT_EQ(lr_schedule(fg, 800), 0.0001);
  const auto gcn = StagePlan::paper(Stage::gcn);
  EXPECT_EQ(lr_schedule(gcn, 80), 0.001);
  EXPECT_EQ(lr_schedule(gcn, 160), 0.0001);
  const auto joint = StagePlan::paper(Stage::joint);
  EXPECT_EQ(lr_schedule(joint, 0), 1e-5);
  EXPECT_EQ(lr_schedule(joint, 300), 1e-6);
  EXPECT_EQ(lr_schedule(joint, 600), 1e-7);
  EXPECT_EQ(lr_schedule(joint, 900), 1e-8);
  EXPECT_EQ(lr_schedule(joint, 1399), 1e-8);
}

TEST(Schedule, RejectsEpochOutsideStage) {
  EXPECT_THROW(lr_schedule(StagePlan::paper(Stage::vit), 1200), std::invalid_argument);
  EXPECT_THROW(lr_schedule(StagePlan::desk(Stage::gcn), 10), std::invalid_argument);
}

TEST(Schedule, NonIncreasingForEveryPlan) {
  for (Scale s : {Scale::desk, Scale::paper}) {
    for (Stage st : {Stage::vit, Stage::fine_grained, Stage::gcn, Stage::joint}) {
      const auto p = StagePlan::for_scale(st, s);
      for (std::size_t e = 1; e < p.epochs; ++e) EXPECT_LE(lr_schedule(p, e), lr_schedule(p, e - 1));
    }
  }
}

TEST(Schedule, PaperAndDeskPlans) {
  const auto joint = StagePlan::paper(Stage::joint);
  EXPECT_EQ(joint.epochs, 1400u);
  EXPECT_EQ(joint.decay_epochs, (std::vector<std::size_t>{300, 600, 900}));
  EXPECT_TRUE(joint.frozen.empty());
  const auto gcn = StagePlan::paper(Stage::gcn);
  EXPECT_EQ(gcn.frozen, (std::set<std::string>{"global", "local"}));
  EXPECT_EQ(gcn.checkpoint_every, 30u);
  EXPECT_EQ(StagePlan::desk(Stage::vit).epochs, 60u);
  EXPECT_EQ(StagePlan::desk(Stage::gcn).epochs, 10u);
  EXPECT_EQ(StagePlan::desk(Stage::joint).epochs, 70u);
  EXPECT_EQ(StagePlan::desk(Stage::vit).initial_lr, 2e-4);
}

TEST(Schedule, StageNamesRoundTrip) {
  for (Stage st : {Stage::vit, Stage::fine_grained, Stage::gcn, Stage::joint}) EXPECT_EQ(stage_from_string(to_string(st)), st);
  EXPECT_THROW(stage_from_string("warmup"), std::invalid_argument);
}

TEST_F(Phantoms, FullModelLossGradientsMatchFiniteDifferences) {
  DeepFan model(ModelConfig::ablation(9, Scale::desk), 5);
  const auto& n = train(1)[0];
  const Tensor x = model_input(n);
  const auto target = LossTarget::from(n.annotation);
  auto loss = [&] {
    Rng r(21);  // same counterfactual draw and dropout every evaluation
    return composite_loss(model.forward(x, r, true), target, LossWeights{}).total_tensor;
  };
  Rng pick(8);
  std::vector<Probe> probes;
  const auto& items = model.parameters().items();
  // Cover every group, then fill up at random.
  for (const std::string group : {"global.", "local.", "fusion."}) {
    for (const auto& [name, t] : items) {
      if (name.rfind(group, 0) == 0 && name.find("bias") == std::string::npos) {
        probes.push_back({t, static_cast<std::size_t>(pick.uniform() * static_cast<double>(t.numel()))});
        break;
      }
    }
  }
  while (probes.size() < 24) {
    const auto& t = items[static_cast<std::size_t>(pick.uniform() * static_cast<double>(items.size()))].second;
    probes.push_back({t, static_cast<std::size_t>(pick.uniform() * static_cast<double>(t.numel()))});
  }
  const auto report = finite_diff_check_probes(loss, probes, 1e-6);
  EXPECT_GE(report.checked, 20u);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST_F(Phantoms, ThirtyEpochsWriteOneCheckpoint) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 1);
  Rng rng(1);
  const auto recs = train_stage(model, train(2), short_plan(Stage::vit, 30), rng);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].epoch, 30u);
}

TEST_F(Phantoms, ThirtyOneEpochsAddTheFinalCheckpoint) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 1);
  Rng rng(1);
  const auto dir = fs::temp_directory_path() / "nb_train_test_ckpt";
  fs::remove_all(dir);
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  std::ostringstream log;
  opt.log = &log;
  const auto recs = train_stage(model, train(2), short_plan(Stage::vit, 31), rng, opt);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].epoch, 30u);
  EXPECT_EQ(recs[1].epoch, 31u);
  for (const auto& r : recs) {
    ASSERT_TRUE(fs::exists(r.path));
    EXPECT_EQ(sha256_hex(slurp(r.path)), r.sha256);
  }
  EXPECT_EQ(recs[1].path.filename(), "vit-e0031.ckpt");
  // One JSON line per epoch with the loss breakdown.
  std::istringstream lines(log.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("stage"), "vit");
    EXPECT_EQ(j.at("epoch"), ++count);
    EXPECT_TRUE(j.at("loss").contains("l_t0"));
  }
  EXPECT_EQ(count, 31u);
  fs::remove_all(dir);
}

TEST_F(Phantoms, GcnStageLeavesBranchesUntouched) {
  DeepFan model(ModelConfig::ablation(9, Scale::desk), 2);
  const auto global_before = sha256_hex(group_bytes(model.parameters(), "global"));
  const auto local_before = sha256_hex(group_bytes(model.parameters(), "local"));
  const auto fusion_before = sha256_hex(group_bytes(model.parameters(), "fusion"));
  Rng rng(2);
  train_stage(model, train(4), short_plan(Stage::gcn, 2), rng);
  EXPECT_EQ(sha256_hex(group_bytes(model.parameters(), "global")), global_before);
  EXPECT_EQ(sha256_hex(group_bytes(model.parameters(), "local")), local_before);
  EXPECT_NE(sha256_hex(group_bytes(model.parameters(), "fusion")), fusion_before);
  // Freezing is scoped to the stage.
  for (const auto& [name, t] : model.parameters().items()) EXPECT_TRUE(t.requires_grad()) << name;
}

TEST_F(Phantoms, VitStageTouchesOnlyTheGlobalBranch) {
  DeepFan model(ModelConfig::ablation(9, Scale::desk), 2);
  const auto global_before = sha256_hex(group_bytes(model.parameters(), "global"));
  const auto local_before = sha256_hex(group_bytes(model.parameters(), "local"));
  const auto fusion_before = sha256_hex(group_bytes(model.parameters(), "fusion"));
  Rng rng(2);
  train_stage(model, train(4), short_plan(Stage::vit, 1), rng);
  EXPECT_NE(sha256_hex(group_bytes(model.parameters(), "global")), global_before);
  EXPECT_EQ(sha256_hex(group_bytes(model.parameters(), "local")), local_before);
  EXPECT_EQ(sha256_hex(group_bytes(model.parameters(), "fusion")), fusion_before);
}

TEST_F(Phantoms, FixedSeedRerunGivesIdenticalCheckpoint) {
  std::string hashes[2];
  for (auto& h : hashes) {
    DeepFan model(ModelConfig::ablation(9, Scale::desk), 3);
    Rng rng(3);
    h = train_stage(model, train(3), short_plan(Stage::joint, 2), rng).back().sha256;
  }
  EXPECT_EQ(hashes[0], hashes[1]);
}

TEST_F(Phantoms, RejectsEmptySplitAndBadGroups) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 1);
  Rng rng(1);
  EXPECT_THROW(train_stage(model, {}, short_plan(Stage::vit, 1), rng), std::invalid_argument);
  auto plan = short_plan(Stage::vit, 1);
  plan.frozen = {"decoder"};
  EXPECT_THROW(train_stage(model, train(1), plan, rng), std::invalid_argument);
  plan.frozen = {"global"};
  EXPECT_THROW(train_stage(model, train(1), plan, rng), std::invalid_argument);
}

TEST_F(Phantoms, SingleCheckpointIsReturned) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 4);
  Rng rng(4);
  const auto recs = train_stage(model, train(2), short_plan(Stage::vit, 1), rng);
  const auto sel = select_best_checkpoint(model, recs, test());
  EXPECT_EQ(sel.index, 0u);
  ASSERT_EQ(sel.aucs.size(), 1u);
}

TEST_F(Phantoms, SelectionPicksTheHigherAucAndLaterOnTies) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 6);
  CheckpointRecord init;
  init.snapshot = Checkpoint::capture(model.parameters(), model.config());
  Rng rng(6);
  const auto trained = train_stage(model, train(40), short_plan(Stage::vit, 4), rng).back();

  std::vector<bool> truth;
  for (const auto& n : test()) truth.push_back(n.annotation.pathology == Pathology::malignant);
  auto oracle = [&](const CheckpointRecord& r) {
    r.snapshot.restore_into(model.parameters());
    return pair_auc(score_nodules(model, test()), truth);
  };
  const double a_init = oracle(init), a_trained = oracle(trained);
  ASSERT_NE(a_init, a_trained);
  const std::vector<CheckpointRecord> forward{init, trained}, backward{trained, init};
  const auto s1 = select_best_checkpoint(model, forward, test());
  const auto s2 = select_best_checkpoint(model, backward, test());
  EXPECT_EQ(s1.index, a_trained > a_init ? 1u : 0u);
  EXPECT_EQ(s2.index, 1u - s1.index);
  EXPECT_NEAR(s1.validation_auc, std::max(a_init, a_trained), 1e-12);
  // The chosen parameters are left in the model.
  EXPECT_TRUE(Checkpoint::capture(model.parameters(), model.config()).values == backward[s2.index].snapshot.values);

  const std::vector<CheckpointRecord> tied{trained, trained};
  EXPECT_EQ(select_best_checkpoint(model, tied, test()).index, 1u);
}

TEST_F(Phantoms, SingleClassValidationIsUndefined) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 1);
  std::vector<PreparedNodule> benign;
  for (const auto& n : test())
    if (n.annotation.pathology == Pathology::benign) benign.push_back(n);
  ASSERT_FALSE(benign.empty());
  CheckpointRecord r;
  r.snapshot = Checkpoint::capture(model.parameters(), model.config());
  EXPECT_THROW(select_best_checkpoint(model, std::vector<CheckpointRecord>{r}, benign), UndefinedStatistic);
  EXPECT_THROW(select_best_checkpoint(model, std::vector<CheckpointRecord>{}, test()), std::invalid_argument);
}

TEST_F(Phantoms, DegenerateThresholds) {
  DeepFan model(ModelConfig::ablation(9, Scale::desk), 7);
  Rng rng(7);
  const BootstrapOptions boot{20};
  const auto low = evaluate_split(model, test(), 0.0, rng, boot);
  EXPECT_EQ(*low.nodule_report.at("sensitivity").value, 1.0);
  const auto high = evaluate_split(model, test(), 1.0, rng, boot);
  EXPECT_EQ(*high.nodule_report.at("specificity").value, 1.0);
  EXPECT_EQ(low.nodules.size(), test().size());
  EXPECT_EQ(low.density_predictions.size(), test().size());
  ASSERT_TRUE(low.density_accuracy.has_value());
  EXPECT_THROW(evaluate_split(model, test(), 1.5, rng, boot), std::invalid_argument);
  EXPECT_THROW(evaluate_split(model, {}, 0.5, rng, boot), std::invalid_argument);
}

TEST_F(Phantoms, ScoresDoNotDependOnSplitOrder) {
  DeepFan model(ModelConfig::ablation(9, Scale::desk), 8);
  std::vector<PreparedNodule> reversed(test().rbegin(), test().rend());
  const auto a = score_nodules(model, test());
  const auto b = score_nodules(model, reversed);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[a.size() - 1 - i]);
}

TEST_F(Phantoms, FurtherTrainingNeverMutatesACheckpoint) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 9);
  Rng rng(9);
  auto recs = train_stage(model, train(2), short_plan(Stage::vit, 1), rng);
  const auto sel = select_best_checkpoint(model, recs, test());
  const std::string before = recs[sel.index].snapshot.serialize();
  train_stage(model, train(2), short_plan(Stage::vit, 1), rng);
  EXPECT_EQ(sha256_hex(recs[sel.index].snapshot.serialize()), sha256_hex(before));
  EXPECT_EQ(sha256_hex(before), recs[sel.index].sha256);
}
