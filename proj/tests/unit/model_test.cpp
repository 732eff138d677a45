#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nodulebench/model/deepfan.hpp"

using namespace nb;

namespace {

Tensor random_input(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * n * n);
  for (double& x : v) x = rng.uniform();
  return Tensor::from({1, n, n, n}, std::move(v));
}

void fill(const Tensor& t, double value) {
  auto v = Tensor(t).mutable_values();
  std::fill(v.begin(), v.end(), value);
}

void expect_same(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]) << "at " << i;
}

}  // namespace

TEST(Shapes, PaperProfileTrace) {
  const auto t = trace_shapes(ModelConfig::paper());
  EXPECT_EQ(t.at("fusion.h_all"), (Shape{12, 64}));
  EXPECT_EQ(t.at("global.nodes"), (Shape{9, 64}));
  EXPECT_EQ(t.at("local.F"), (Shape{512, 16, 16, 16}));
  EXPECT_EQ(t.at("global.tokens"), (Shape{9, 4096}));
  EXPECT_EQ(t.at("fusion.adjacency"), (Shape{12, 12}));
}

TEST(Shapes, DeskForwardMatchesTraceForEveryAblation) {
  for (int id = 1; id <= 9; ++id) {
    const auto cfg = ModelConfig::ablation(id, Scale::desk);
    DeepFan model(cfg, 7);
    Rng rng(1);
    const auto out = model.forward(random_input(cfg.input_vox, 2), rng, true);
    for (const auto& [name, shape] : trace_shapes(cfg)) {
      ASSERT_TRUE(out.taps.count(name)) << "model " << id << " missing tap " << name;
      EXPECT_EQ(out.taps.at(name).shape(), shape) << "model " << id << " tap " << name;
    }
    if (cfg.fusion == Fusion::gcn) {
      EXPECT_EQ(out.graph->h_all.dim(0), 12u);
    }
  }
}

TEST(Shapes, NodeCountLaw) {
  for (Scale s : {Scale::desk, Scale::paper}) {
    const auto cfg = ModelConfig::ablation(9, s);
    EXPECT_EQ(cfg.node_count(), cfg.patch_grid * cfg.patch_grid * cfg.patch_grid + 1 + 3);
  }
  EXPECT_EQ(ModelConfig::paper().node_count(), 12u);
}

TEST(Config, InconsistentAblationsRejected) {
  auto c = ModelConfig::desk();
  c.local_branch = LocalBranch::none;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig::desk();
  c.fusion = Fusion::none;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig::desk();
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig::desk();
  c.fg_spatial = 8;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(ModelConfig::ablation(10, Scale::desk), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  for (int id = 1; id <= 9; ++id) {
    const auto c = ModelConfig::ablation(id, id % 2 ? Scale::desk : Scale::paper);
    const auto back = nlohmann::json(c).get<ModelConfig>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  }
}

TEST(Forward, FullModelHasAllOutputGroups) {
  DeepFan model(ModelConfig::desk(), 3);
  Rng rng(4);
  auto out = model.forward(random_input(32, 5), rng, true);
  EXPECT_TRUE(out.global && out.activations && out.fine && out.graph);
  EXPECT_EQ(out.fine->logits[2].numel(), 3u);
  EXPECT_EQ(out.score, out.graph->p_gcn);
  for (double p : {out.global->probability, out.graph->p_gcn, out.graph->p_all}) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  const auto density = softmax_probabilities(out.fine->logits[2]);
  EXPECT_NEAR(std::accumulate(density.begin(), density.end(), 0.0), 1.0, 1e-12);
}

TEST(Forward, VitOnlyFlagsAbsentGroups) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 3);
  Rng rng(4);
  auto out = model.forward(random_input(32, 5), rng, false);
  EXPECT_TRUE(out.global.has_value());
  EXPECT_FALSE(out.activations.has_value());
  EXPECT_FALSE(out.fine.has_value());
  EXPECT_FALSE(out.graph.has_value());
  EXPECT_EQ(out.score, out.global->probability);
}

TEST(Forward, VitOnlyCheckpointHasNoLocalOrFusionParameters) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 3);
  for (const auto& [name, t] : model.parameters().items()) EXPECT_EQ(name.rfind("global.", 0), 0u) << name;
}

TEST(Forward, EvalModeIsDeterministicUnderSeed) {
  DeepFan model(ModelConfig::desk(), 9);
  const auto x = random_input(32, 6);
  Rng a(11), b(11);
  EXPECT_EQ(model.forward(x, a, false).score, model.forward(x, b, false).score);
}

TEST(Forward, ConcatAndGcnShareBranchFeatures) {
  DeepFan concat(ModelConfig::ablation(4, Scale::desk), 21);
  DeepFan gcn(ModelConfig::ablation(9, Scale::desk), 21);
  const auto x = random_input(32, 7);
  Rng a(5), b(5);
  auto oc = concat.forward(x, a, true);
  auto og = gcn.forward(x, b, true);
  expect_same(oc.graph->h_all, og.graph->h_all);
  expect_same(oc.global->logits, og.global->logits);
  EXPECT_NE(oc.score, og.score);
  EXPECT_TRUE(concat.parameters().contains("fusion.concat.weight"));
  EXPECT_FALSE(concat.parameters().contains("fusion.gcn.layer0.weight"));
}

TEST(Tokenize, ZeroInputGivesZeroPatchTokens) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 1);
  fill(model.parameters().get("global.vit.pos_embed"), 0.0);
  auto tokens = model.patch_tokenize(Tensor::zeros({1, 32, 32, 32}), "global.vit");
  ASSERT_EQ(tokens.shape(), (Shape{9, 256}));
  const auto& cls = model.parameters().get("global.vit.class_token");
  for (std::size_t c = 0; c < 256; ++c) EXPECT_EQ(tokens[c], cls[c]);
  for (std::size_t i = 256; i < tokens.numel(); ++i) EXPECT_EQ(tokens[i], 0.0);
  EXPECT_THROW(model.patch_tokenize(Tensor::zeros({1, 30, 30, 30}), "global.vit"), std::invalid_argument);
}

TEST(Vit, PermutingPatchTokensKeepsClassOutput) {
  DeepFan model(ModelConfig::ablation(1, Scale::desk), 2);
  auto tokens = model.patch_tokenize(random_input(32, 8), "global.vit");
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < 9; ++i) rows.push_back(slice_rows(tokens, i, 1));
  std::swap(rows[2], rows[7]);
  Rng a(1), b(1);
  auto base = model.vit_stack(tokens, "global.vit", a, false);
  auto perm = model.vit_stack(concat_rows(rows), "global.vit", b, false);
  for (std::size_t c = 0; c < 256; ++c) EXPECT_NEAR(base[c], perm[c], 1e-12);
}

TEST(Backbone, ZeroResidualWeightsPassProjectedInput) {
  DeepFan model(ModelConfig::desk(), 4);
  for (const auto& [name, t] : model.parameters().items()) {
    if (name.find("local.cal_adl.backbone.stage2.block") == 0 && name.find(".conv") != std::string::npos) fill(t, 0.0);
  }
  std::map<std::string, Tensor> taps;
  model.fg_backbone(random_input(32, 9), "local.cal_adl.backbone", &taps, "local");
  const auto expected = relu(conv3d(taps.at("local.stage1"),
                                    model.parameters().get("local.cal_adl.backbone.stage2.block0.shortcut.kernel"), 2, 0));
  const auto& got = taps.at("local.stage2");
  ASSERT_EQ(got.shape(), expected.shape());
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-12);
}

TEST(Adl, ConstantFeaturesGiveUnitAttention) {
  DeepFan model(ModelConfig::desk(), 1);
  Rng rng(3);
  auto r = model.fg_attention(Tensor::full({4, 4, 4, 4}, 0.7), rng, false);
  for (double a : r.A.values()) EXPECT_DOUBLE_EQ(a, 1.0);
  for (double a : r.A_bar.values()) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Adl, ZeroGammaDropsNothing) {
  Rng rng(1);
  std::vector<double> v(27);
  for (double& x : v) x = rng.uniform();
  const auto keep = adl_drop_mask(Tensor::from({3, 3, 3}, v), 0.0);
  for (double m : keep.values()) EXPECT_EQ(m, 1.0);
  const auto mask = adl_drop_mask(Tensor::from({3, 3, 3}, v), 0.8);
  EXPECT_LT(std::accumulate(mask.values().begin(), mask.values().end(), 0.0), 27.0);
}

TEST(Adl, SeededCounterfactualReplays) {
  DeepFan model(ModelConfig::desk(), 1);
  Rng a(77), b(77);
  const auto F = relu(Tensor::from({2, 4, 4, 4}, std::vector<double>(128, 0.3)));
  expect_same(model.fg_attention(F, a, true).A_bar, model.fg_attention(F, b, true).A_bar);
}

TEST(Bap, UniformAttentionIsNormalizedAveragePooling) {
  Rng rng(5);
  std::vector<double> v(3 * 8);
  for (double& x : v) x = rng.uniform(-1, 1);
  const auto F = Tensor::from({3, 2, 2, 2}, v);
  const auto pooled = bap_pool(F, Tensor::full({2, 2, 2}, 1.0));
  const auto expected = l2_normalize(signed_sqrt(spatial_mean(F)));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(pooled[c], expected[c]);
  double norm = 0.0;
  for (double x : pooled.values()) norm += x * x;
  EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-9);
  const auto empty = bap_pool(F, Tensor::zeros({2, 2, 2}));
  for (double x : empty.values()) EXPECT_EQ(x, 0.0);
}

TEST(AttributeHeads, EqualInputsGiveZeroDifference) {
  DeepFan model(ModelConfig::desk(), 2);
  auto pooled = l2_normalize(Tensor::from({64}, std::vector<double>(64, 0.5)));
  auto f = model.attribute_heads(pooled, pooled);
  for (const auto& h : f.h_diff)
    for (double x : h.values()) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(f.logits[2].numel(), 3u);
}

TEST(AttributeHeads, SwapIsAntisymmetric) {
  DeepFan model(ModelConfig::desk(), 2);
  Rng rng(3);
  std::vector<double> a(64), b(64);
  for (double& x : a) x = rng.uniform(-1, 1);
  for (double& x : b) x = rng.uniform(-1, 1);
  const auto pa = Tensor::from({64}, a), pb = Tensor::from({64}, b);
  const auto before = model.attribute_heads(pa, pb).logits[0];
  for (const char* part : {".weight", ".bias"}) {
    auto w = Tensor(model.parameters().get(std::string("local.cal_adl.head0") + part)).mutable_values();
    auto wb = Tensor(model.parameters().get(std::string("local.cal_adl.head_bar0") + part)).mutable_values();
    std::swap_ranges(w.begin(), w.end(), wb.begin());
  }
  const auto after = model.attribute_heads(pb, pa).logits[0];
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(after[i], -before[i], 1e-12);
}

TEST(FeatureGraph, RowPlacement) {
  DeepFan model(ModelConfig::desk(), 5);
  Rng rng(2);
  auto out = model.forward(random_input(32, 3), rng, true);
  const auto& h = out.graph->h_all;
  for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(h[c], out.global->nodes[c]);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(h[(9 + k) * 64 + c], out.fine->h_diff[k][c]);
}

TEST(Gcn, IdenticalNodesGiveUniformAdjacency) {
  DeepFan model(ModelConfig::desk(), 6);
  auto g = model.gcn_forward(Tensor::full({12, 64}, 0.25));
  for (double a : g.adjacency.front().values()) EXPECT_NEAR(a, 1.0 / 12.0, 1e-15);
}

TEST(Gcn, ZeroLayerWeightsArePureResidual) {
  DeepFan model(ModelConfig::desk(), 6);
  for (std::size_t l = 0; l < 3; ++l) fill(model.parameters().get("fusion.gcn.layer" + std::to_string(l) + ".weight"), 0.0);
  Rng rng(1);
  std::vector<double> v(12 * 64);
  for (double& x : v) x = rng.uniform(-1, 1);
  const auto h = Tensor::from({12, 64}, v);
  expect_same(model.gcn_forward(h).node_features, h);
}

TEST(Gcn, AdjacencyRowsSumToOne) {
  DeepFan model(ModelConfig::desk(), 6);
  Rng rng(2);
  std::vector<double> v(12 * 64);
  for (double& x : v) x = rng.normal();
  const auto g = model.gcn_forward(Tensor::from({12, 64}, v));
  for (const auto& adj : g.adjacency) {
    for (std::size_t r = 0; r < 12; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 12; ++c) {
        EXPECT_GE(adj[r * 12 + c], 0.0);
        s += adj[r * 12 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}
