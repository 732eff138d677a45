#include "nodulebench/model/config.hpp"

#include <stdexcept>

#include "nodulebench/tensor/ops.hpp"

namespace nb {

std::string to_string(GlobalBranch b) {
  switch (b) {
    case GlobalBranch::vit: return "vit";
    case GlobalBranch::resnet50: return "resnet50";
    case GlobalBranch::cal_adl: return "cal_adl";
  }
  throw std::invalid_argument("bad global branch");
}

std::string to_string(LocalBranch b) {
  switch (b) {
    case LocalBranch::cal_adl: return "cal_adl";
    case LocalBranch::resnet50: return "resnet50";
    case LocalBranch::vit: return "vit";
    case LocalBranch::none: return "none";
  }
  throw std::invalid_argument("bad local branch");
}

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::gcn: return "gcn";
    case Fusion::concat: return "concat";
    case Fusion::none: return "none";
  }
  throw std::invalid_argument("bad fusion");
}

std::string to_string(Scale s) { return s == Scale::paper ? "paper" : "desk"; }

GlobalBranch global_branch_from_string(const std::string& s) {
  for (auto b : {GlobalBranch::vit, GlobalBranch::resnet50, GlobalBranch::cal_adl}) {
    if (to_string(b) == s) return b;
  }
  throw std::invalid_argument("unknown global branch '" + s + "'");
}

LocalBranch local_branch_from_string(const std::string& s) {
  for (auto b : {LocalBranch::cal_adl, LocalBranch::resnet50, LocalBranch::vit, LocalBranch::none}) {
    if (to_string(b) == s) return b;
  }
  throw std::invalid_argument("unknown local branch '" + s + "'");
}

Fusion fusion_from_string(const std::string& s) {
  for (auto f : {Fusion::gcn, Fusion::concat, Fusion::none}) {
    if (to_string(f) == s) return f;
  }
  throw std::invalid_argument("unknown fusion '" + s + "'");
}

Scale scale_from_string(const std::string& s) {
  if (s == "paper") return Scale::paper;
  if (s == "desk") return Scale::desk;
  throw std::invalid_argument("unknown scale profile '" + s + "'");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.input_vox = 128;
  c.token_dim = 4096;
  c.vit_blocks = 12;
  c.heads = 16;
  c.mlp_ratio = 4;
  c.resnet_blocks = {6, 9, 12};
  c.backbone_channels = 512;
  c.fg_spatial = 16;
  c.scale = Scale::paper;
  c.spacing_mm = 0.6;
  return c;
}

ModelConfig ModelConfig::ablation(int model_id, Scale scale) {
  ModelConfig c = scale == Scale::paper ? paper() : desk();
  using G = GlobalBranch;
  using L = LocalBranch;
  using F = Fusion;
  struct Row {
    G g;
    L l;
    F f;
  };
  static constexpr Row kRows[] = {
      {G::vit, L::none, F::none},         {G::resnet50, L::none, F::none},   {G::cal_adl, L::none, F::none},
      {G::vit, L::cal_adl, F::concat},    {G::vit, L::vit, F::gcn},          {G::vit, L::resnet50, F::gcn},
      {G::cal_adl, L::cal_adl, F::gcn},   {G::resnet50, L::cal_adl, F::gcn}, {G::vit, L::cal_adl, F::gcn},
  };
  if (model_id < 1 || model_id > 9) throw std::invalid_argument("ablation model id must be 1..9");
  const Row& r = kRows[model_id - 1];
  c.global_branch = r.g;
  c.local_branch = r.l;
  c.fusion = r.f;
  return c;
}

namespace {

bool uses_vit(const ModelConfig& c) { return c.global_branch == GlobalBranch::vit || c.local_branch == LocalBranch::vit; }

bool uses_backbone(const ModelConfig& c) {
  return c.global_branch != GlobalBranch::vit ||
         c.local_branch == LocalBranch::cal_adl || c.local_branch == LocalBranch::resnet50;
}

std::size_t backbone_extent(const ModelConfig& c) {
  std::size_t n = conv_output_extent(c.input_vox, 3, kStemStride, 1);
  for (std::size_t s : kStageStrides) n = conv_output_extent(n, 3, s, 1);
  return n;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (patch_grid == 0 || input_vox == 0 || node_dim == 0) fail("extents must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (adl_gamma < 0.0 || adl_gamma > 1.0 || adl_drop_prob < 0.0 || adl_drop_prob > 1.0) fail("ADL parameters out of range");
  if (fusion != Fusion::none && local_branch == LocalBranch::none) fail("fusion needs a local branch");
  if (fusion == Fusion::none && local_branch != LocalBranch::none) fail("a local branch needs a fusion head");
  if (uses_vit(*this)) {
    if (input_vox % (4 * patch_grid) != 0) fail("input_vox must be divisible by 4 * patch_grid");
    if (heads == 0 || token_dim % heads != 0) fail("token_dim must be divisible by heads");
    if (vit_blocks == 0 || mlp_ratio == 0) fail("transformer depth and width must be positive");
  }
  if (uses_backbone(*this)) {
    if (backbone_channels % 8 != 0 || backbone_channels == 0) fail("backbone_channels must be a positive multiple of 8");
    if (backbone_extent(*this) != fg_spatial) {
      fail("fg_spatial " + std::to_string(fg_spatial) + " does not match the backbone output extent " +
           std::to_string(backbone_extent(*this)));
    }
    for (std::size_t b : resnet_blocks) {
      if (b == 0) fail("every residual stage needs at least one block");
    }
  }
  if (global_branch != GlobalBranch::vit && fg_spatial % patch_grid != 0) fail("fg_spatial must be divisible by patch_grid");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_vox", c.input_vox},
       {"patch_grid", c.patch_grid},
       {"token_dim", c.token_dim},
       {"node_dim", c.node_dim},
       {"vit_blocks", c.vit_blocks},
       {"heads", c.heads},
       {"mlp_ratio", c.mlp_ratio},
       {"resnet_blocks", c.resnet_blocks},
       {"backbone_channels", c.backbone_channels},
       {"fg_spatial", c.fg_spatial},
       {"global_branch", to_string(c.global_branch)},
       {"local_branch", to_string(c.local_branch)},
       {"fusion", to_string(c.fusion)},
       {"scale", to_string(c.scale)},
       {"dropout", c.dropout},
       {"adl_gamma", c.adl_gamma},
       {"adl_drop_prob", c.adl_drop_prob},
       {"spacing_mm", c.spacing_mm}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.scale = scale_from_string(j.value("scale", std::string("desk")));
  const ModelConfig d = c.scale == Scale::paper ? ModelConfig::paper() : ModelConfig::desk();
  c.input_vox = j.value("input_vox", d.input_vox);
  c.patch_grid = j.value("patch_grid", d.patch_grid);
  c.token_dim = j.value("token_dim", d.token_dim);
  c.node_dim = j.value("node_dim", d.node_dim);
  c.vit_blocks = j.value("vit_blocks", d.vit_blocks);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.resnet_blocks = j.value("resnet_blocks", d.resnet_blocks);
  c.backbone_channels = j.value("backbone_channels", d.backbone_channels);
  c.fg_spatial = j.value("fg_spatial", d.fg_spatial);
  c.global_branch = global_branch_from_string(j.value("global_branch", to_string(d.global_branch)));
  c.local_branch = local_branch_from_string(j.value("local_branch", to_string(d.local_branch)));
  c.fusion = fusion_from_string(j.value("fusion", to_string(d.fusion)));
  c.dropout = j.value("dropout", d.dropout);
  c.adl_gamma = j.value("adl_gamma", d.adl_gamma);
  c.adl_drop_prob = j.value("adl_drop_prob", d.adl_drop_prob);
  c.spacing_mm = j.value("spacing_mm", d.spacing_mm);
}

namespace {

void trace_vit(const ModelConfig& c, const std::string& branch, std::map<std::string, Shape>& out) {
  const std::size_t n = c.input_vox;
  out[branch + ".embed"] = {2, n / 2, n / 2, n / 2};
  out[branch + ".tokens"] = {c.patch_count() + 1, c.token_dim};
  out[branch + ".encoded"] = {c.patch_count() + 1, c.token_dim};
}

void trace_backbone(const ModelConfig& c, const std::string& branch, std::map<std::string, Shape>& out) {
  std::size_t s = conv_output_extent(c.input_vox, 3, kStemStride, 1);
  out[branch + ".stem"] = {c.stem_channels(), s, s, s};
  const auto widths = c.stage_channels();
  for (std::size_t i = 0; i < 3; ++i) {
    s = conv_output_extent(s, 3, kStageStrides[i], 1);
    out[branch + ".stage" + std::to_string(i + 1)] = {widths[i], s, s, s};
  }
  out[branch + ".F"] = {c.backbone_channels, s, s, s};
}

}  // namespace

std::map<std::string, Shape> trace_shapes(const ModelConfig& c) {
  c.validate();
  std::map<std::string, Shape> out;
  out["input"] = {1, c.input_vox, c.input_vox, c.input_vox};
  if (c.global_branch == GlobalBranch::vit) trace_vit(c, "global", out);
  else trace_backbone(c, "global", out);
  if (c.global_branch == GlobalBranch::cal_adl) out["global.A"] = {c.fg_spatial, c.fg_spatial, c.fg_spatial};
  out["global.nodes"] = {c.global_node_count(), c.node_dim};
  out["global.logits"] = {1, 2};

  if (c.local_branch == LocalBranch::vit) trace_vit(c, "local", out);
  else if (c.local_branch != LocalBranch::none) trace_backbone(c, "local", out);
  if (c.local_branch == LocalBranch::cal_adl) out["local.A"] = {c.fg_spatial, c.fg_spatial, c.fg_spatial};
  if (c.local_branch != LocalBranch::none) out["local.h_diff"] = {kAttributeCount, c.node_dim};

  if (c.fusion != Fusion::none) {
    out["fusion.h_all"] = {c.node_count(), c.node_dim};
    out["fusion.logits_all"] = {1, 2};
  }
  if (c.fusion == Fusion::gcn) {
    out["fusion.adjacency"] = {c.node_count(), c.node_count()};
    out["fusion.logits_gcn"] = {1, 2};
  }
  if (c.fusion == Fusion::concat) out["fusion.logits_concat"] = {1, 2};
  return out;
}

}  // namespace nb
