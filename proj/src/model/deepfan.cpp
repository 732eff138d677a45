#include "nodulebench/model/deepfan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nb {

namespace {

std::string idx(const std::string& base, std::size_t i) { return base + std::to_string(i); }

}  // namespace

std::vector<double> softmax_probabilities(const Tensor& logits) {
  const auto v = logits.values();
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> p(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp(v[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

double malignancy_probability(const Tensor& logits) {
  if (logits.numel() != 2) throw std::invalid_argument("malignancy head must have two logits");
  return softmax_probabilities(logits)[1];
}

Tensor bap_pool(const Tensor& F_attended, const Tensor& attention) {
  return l2_normalize(signed_sqrt(spatial_mean(weight_spatial(F_attended, attention))));
}

Tensor adl_drop_mask(const Tensor& a, double gamma) {
  const auto v = a.values();
  std::vector<double> mask(v.size(), 1.0);
  // gamma = 0 selects no region, so nothing is dropped.
  if (gamma > 0.0) {
    const double threshold = gamma * *std::max_element(v.begin(), v.end());
    for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] < threshold ? 1.0 : 0.0;
  }
  return Tensor::from(a.shape(), std::move(mask));
}

DeepFan::DeepFan(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(seed) {
  cfg_.validate();
  build();
}

Tensor DeepFan::linear(const std::string& name, const Tensor& x) const {
  const Tensor rows = x.rank() == 2 ? x : reshape(x, {1, x.numel()});
  return add_row_bias(matmul(rows, p(name + ".weight")), p(name + ".bias"));
}

// ---- construction ----

void DeepFan::build_vit(const std::string& pre, bool global_heads) {
  const std::size_t d = cfg_.token_dim, patch = cfg_.input_vox / cfg_.patch_grid;
  const std::size_t pooled = patch / 4;
  Conv3d::create(params_, pre + ".embed.conv", 1, 2, 3, 2, 1);
  Linear::create(params_, pre + ".embed.proj", 2 * pooled * pooled * pooled, d);
  params_.normal(pre + ".class_token", {1, d}, 0.02);
  params_.normal(pre + ".pos_embed", {cfg_.patch_count() + 1, d}, 0.02);
  for (std::size_t b = 0; b < cfg_.vit_blocks; ++b) {
    const std::string blk = idx(pre + ".block", b);
    GroupNorm::create(params_, blk + ".norm1", d);
    for (const char* m : {".attn.q", ".attn.k", ".attn.v", ".attn.out"}) Linear::create(params_, blk + m, d, d);
    GroupNorm::create(params_, blk + ".norm2", d);
    Linear::create(params_, blk + ".mlp.fc1", d, d * cfg_.mlp_ratio);
    Linear::create(params_, blk + ".mlp.fc2", d * cfg_.mlp_ratio, d);
  }
  GroupNorm::create(params_, pre + ".norm", d);
  if (global_heads) {
    Linear::create(params_, pre + ".head_cls", d, 2);
    for (std::size_t i = 0; i <= cfg_.patch_count(); ++i) Linear::create(params_, idx(pre + ".node", i), d, cfg_.node_dim);
  }
}

void DeepFan::build_backbone(const std::string& pre) {
  Conv3d::create(params_, pre + ".stem.conv", 1, cfg_.stem_channels(), 3, kStemStride, 1);
  GroupNorm::create(params_, pre + ".stem.norm", cfg_.stem_channels());
  std::size_t in = cfg_.stem_channels();
  const auto widths = cfg_.stage_channels();
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t b = 0; b < cfg_.resnet_blocks[s]; ++b) {
      const std::string blk = pre + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const std::size_t stride = b == 0 ? kStageStrides[s] : 1;
      Conv3d::create(params_, blk + ".conv1", in, widths[s], 3, stride, 1);
      GroupNorm::create(params_, blk + ".norm1", widths[s]);
      Conv3d::create(params_, blk + ".conv2", widths[s], widths[s], 3, 1, 1);
      GroupNorm::create(params_, blk + ".norm2", widths[s]);
      if (stride != 1 || in != widths[s]) Conv3d::create(params_, blk + ".shortcut", in, widths[s], 1, stride, 0);
      in = widths[s];
    }
  }
}

void DeepFan::build_octant_nodes(const std::string& pre) {
  for (std::size_t i = 0; i <= cfg_.patch_count(); ++i) {
    Linear::create(params_, idx(pre + ".node", i), cfg_.backbone_channels, cfg_.node_dim);
  }
}

void DeepFan::build() {
  const std::size_t C = cfg_.backbone_channels;
  switch (cfg_.global_branch) {
    case GlobalBranch::vit: build_vit("global.vit", true); break;
    case GlobalBranch::resnet50:
      build_backbone("global.resnet50.backbone");
      build_octant_nodes("global.resnet50");
      Linear::create(params_, "global.resnet50.head", C, 2);
      break;
    case GlobalBranch::cal_adl:
      build_backbone("global.cal_adl.backbone");
      build_octant_nodes("global.cal_adl");
      Linear::create(params_, "global.cal_adl.head", C, 2);
      Linear::create(params_, "global.cal_adl.head_bar", C, 2);
      break;
  }
  const std::string local = "local." + to_string(cfg_.local_branch);
  if (cfg_.local_branch == LocalBranch::vit) build_vit(local, false);
  if (cfg_.local_branch == LocalBranch::cal_adl || cfg_.local_branch == LocalBranch::resnet50) build_backbone(local + ".backbone");
  if (cfg_.local_branch != LocalBranch::none) {
    const std::size_t in = cfg_.local_branch == LocalBranch::vit ? cfg_.token_dim : C;
    for (std::size_t k = 0; k < kAttributeCount; ++k) {
      Linear::create(params_, idx(local + ".proj", k), in, cfg_.node_dim);
      Linear::create(params_, idx(local + ".head", k), cfg_.node_dim, kAttributeClasses[k]);
      if (cfg_.local_branch == LocalBranch::cal_adl) {
        Linear::create(params_, idx(local + ".head_bar", k), cfg_.node_dim, kAttributeClasses[k]);
      }
    }
  }
  const std::size_t flat = cfg_.node_count() * cfg_.node_dim;
  if (cfg_.fusion == Fusion::gcn) {
    for (std::size_t l = 0; l < 3; ++l) Linear::create(params_, idx("fusion.gcn.layer", l), cfg_.node_dim, cfg_.node_dim);
    Linear::create(params_, "fusion.gcn.head", cfg_.node_dim, 2);
  }
  if (cfg_.fusion == Fusion::concat) Linear::create(params_, "fusion.concat", flat, 2);
  if (cfg_.fusion != Fusion::none) Linear::create(params_, "fusion.all", flat, 2);
}

// ---- ViT ----

Tensor DeepFan::patch_tokenize(const Tensor& x, const std::string& pre, Tensor* embed_map) const {
  const std::size_t n = cfg_.input_vox, g = cfg_.patch_grid, patch = n / g;
  if (x.shape() != Shape{1, n, n, n}) {
    throw std::invalid_argument("patch_tokenize: expected input [1, " + std::to_string(n) + "^3], got " + shape_str(x.shape()));
  }
  const Tensor& kernel = p(pre + ".embed.conv.kernel");
  std::vector<Tensor> convs;
  for (std::size_t z = 0; z < g; ++z)
    for (std::size_t y = 0; y < g; ++y)
      for (std::size_t w = 0; w < g; ++w) {
        convs.push_back(conv3d(crop3d(x, {z * patch, y * patch, w * patch}, {patch, patch, patch}), kernel, 2, 1));
      }
  const Tensor embed = assemble3d(convs, {g, g, g});
  if (embed_map) *embed_map = embed;
  const std::size_t half = patch / 2;
  std::vector<Tensor> rows{p(pre + ".class_token")};
  for (std::size_t z = 0; z < g; ++z)
    for (std::size_t y = 0; y < g; ++y)
      for (std::size_t w = 0; w < g; ++w) {
        const Tensor pooled = avg_pool3d(crop3d(embed, {z * half, y * half, w * half}, {half, half, half}), 2);
        rows.push_back(linear(pre + ".embed.proj", pooled));
      }
  return add(concat_rows(rows), p(pre + ".pos_embed"));
}

Tensor DeepFan::transformer_block(const Tensor& x, const std::string& blk, Rng& rng, bool training) const {
  const std::size_t d = cfg_.token_dim;
  const std::size_t groups = std::min<std::size_t>(8, d);
  const double drop = training ? cfg_.dropout : 0.0;
  const Tensor h = row_group_norm(x, groups, p(blk + ".norm1.gain"), p(blk + ".norm1.bias"));
  const Linear out_proj{p(blk + ".attn.out.weight"), p(blk + ".attn.out.bias")};
  const Tensor attn = multi_head_attention(linear(blk + ".attn.q", h), linear(blk + ".attn.k", h),
                                           linear(blk + ".attn.v", h), cfg_.heads, out_proj);
  const Tensor x1 = add(x, dropout(attn, drop, rng));
  const Tensor h2 = row_group_norm(x1, groups, p(blk + ".norm2.gain"), p(blk + ".norm2.bias"));
  const Tensor mlp = linear(blk + ".mlp.fc2", gelu(linear(blk + ".mlp.fc1", h2)));
  return add(x1, dropout(mlp, drop, rng));
}

Tensor DeepFan::vit_stack(const Tensor& tokens, const std::string& pre, Rng& rng, bool training) const {
  Tensor x = tokens;
  for (std::size_t b = 0; b < cfg_.vit_blocks; ++b) x = transformer_block(x, idx(pre + ".block", b), rng, training);
  return row_group_norm(x, std::min<std::size_t>(8, cfg_.token_dim), p(pre + ".norm.gain"), p(pre + ".norm.bias"));
}

GlobalFeatures DeepFan::vit_heads(const Tensor& encoded) const {
  GlobalFeatures f;
  const Tensor cls = slice_rows(encoded, 0, 1);
  f.logits = linear("global.vit.head_cls", cls);
  std::vector<Tensor> nodes;
  for (std::size_t i = 0; i <= cfg_.patch_count(); ++i) {
    nodes.push_back(linear(idx("global.vit.node", i), slice_rows(encoded, i, 1)));
  }
  f.nodes = concat_rows(nodes);
  f.probability = malignancy_probability(f.logits);
  return f;
}

// ---- residual backbone ----

Tensor DeepFan::residual_block(const Tensor& x, const std::string& blk, std::size_t stride, bool project) const {
  auto norm = [&](const std::string& name, const Tensor& t) {
    const Tensor& gain = p(name + ".gain");
    return group_norm(t, std::min<std::size_t>(8, gain.numel()), gain, p(name + ".bias"));
  };
  Tensor h = relu(norm(blk + ".norm1", conv3d(x, p(blk + ".conv1.kernel"), stride, 1)));
  h = norm(blk + ".norm2", conv3d(h, p(blk + ".conv2.kernel"), 1, 1));
  const Tensor shortcut = project ? conv3d(x, p(blk + ".shortcut.kernel"), stride, 0) : x;
  return relu(add(h, shortcut));
}

Tensor DeepFan::fg_backbone(const Tensor& x, const std::string& pre, std::map<std::string, Tensor>* taps,
                            const std::string& tap) const {
  const Tensor& stem_gain = p(pre + ".stem.norm.gain");
  Tensor h = relu(group_norm(conv3d(x, p(pre + ".stem.conv.kernel"), kStemStride, 1), std::min<std::size_t>(8, stem_gain.numel()),
                             stem_gain, p(pre + ".stem.norm.bias")));
  if (taps) (*taps)[tap + ".stem"] = h;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = pre + ".stage" + std::to_string(s + 1);
    for (std::size_t b = 0; b < cfg_.resnet_blocks[s]; ++b) {
      const std::string blk = stage + ".block" + std::to_string(b);
      h = residual_block(h, blk, b == 0 ? kStageStrides[s] : 1, params_.contains(blk + ".shortcut.kernel"));
    }
    if (taps) (*taps)[tap + ".stage" + std::to_string(s + 1)] = h;
  }
  if (taps) (*taps)[tap + ".F"] = h;
  return h;
}

// ---- fine-grained attention ----

AdlResult DeepFan::fg_attention(const Tensor& F, Rng& rng, bool training) const {
  AdlResult r;
  r.A = peak_normalize(relu(channel_mean(F)));
  std::vector<double> random(r.A.numel());
  for (double& v : random) v = rng.uniform();
  r.A_bar = peak_normalize(Tensor::from(r.A.shape(), std::move(random)));
  if (!training) {
    r.F_attended = F;
  } else if (rng.bernoulli(cfg_.adl_drop_prob)) {
    r.F_attended = weight_spatial(F, adl_drop_mask(r.A.detach(), cfg_.adl_gamma));
  } else {
    r.F_attended = weight_spatial(F, r.A);
  }
  return r;
}

FineGrainedFeatures DeepFan::attribute_heads(const Tensor& pooled, const Tensor& pooled_bar) const {
  if (cfg_.local_branch != LocalBranch::cal_adl) throw std::logic_error("attribute_heads needs the CAL-ADL local branch");
  FineGrainedFeatures f;
  for (std::size_t k = 0; k < kAttributeCount; ++k) {
    const std::string proj = idx("local.cal_adl.proj", k);
    f.h_c[k] = linear(proj, pooled);
    f.h_c_bar[k] = linear(proj, pooled_bar);
    f.h_diff[k] = sub(f.h_c[k], f.h_c_bar[k]);
    f.logits[k] = sub(linear(idx("local.cal_adl.head", k), f.h_c[k]), linear(idx("local.cal_adl.head_bar", k), f.h_c_bar[k]));
  }
  return f;
}

// ---- fusion ----

Tensor DeepFan::assemble_feature_graph(const Tensor& global_nodes, const FineGrainedFeatures& fine) const {
  std::vector<Tensor> rows{global_nodes};
  for (const auto& h : fine.h_diff) {
    if (h.numel() != global_nodes.dim(1)) throw std::invalid_argument("feature graph: node width mismatch");
    rows.push_back(reshape(h, {1, h.numel()}));
  }
  return concat_rows(rows);
}

FeatureGraph DeepFan::gcn_forward(const Tensor& h_all) const {
  FeatureGraph g;
  g.h_all = h_all;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(h_all.dim(1)));
  Tensor h = h_all;
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor adj = softmax_rows(scale(matmul(h, transpose(h)), inv_sqrt_d));
    g.adjacency.push_back(adj);
    h = add(h, linear(idx("fusion.gcn.layer", l), matmul(adj, h)));
  }
  g.node_features = h;
  g.logits_gcn = linear("fusion.gcn.head", mean_rows(h));
  g.logits_all = linear("fusion.all", reshape(h_all, {1, h_all.numel()}));
  g.p_gcn = malignancy_probability(g.logits_gcn);
  g.p_all = malignancy_probability(g.logits_all);
  return g;
}

Tensor DeepFan::octant_nodes(const Tensor& F, const Tensor& first, const std::string& pre) const {
  const std::size_t g = cfg_.patch_grid, part = F.dim(1) / g;
  std::vector<Tensor> nodes{linear(pre + ".node0", first)};
  std::size_t i = 1;
  for (std::size_t z = 0; z < g; ++z)
    for (std::size_t y = 0; y < g; ++y)
      for (std::size_t w = 0; w < g; ++w, ++i) {
        const Tensor region = crop3d(F, {z * part, y * part, w * part}, {part, part, part});
        nodes.push_back(linear(idx(pre + ".node", i), spatial_mean(region)));
      }
  return concat_rows(nodes);
}

GlobalFeatures DeepFan::global_forward(const Tensor& x, Rng& rng, bool training, ForwardOutputs& out) const {
  GlobalFeatures f;
  switch (cfg_.global_branch) {
    case GlobalBranch::vit: {
      Tensor embed;
      const Tensor tokens = patch_tokenize(x, "global.vit", &embed);
      const Tensor encoded = vit_stack(tokens, "global.vit", rng, training);
      out.taps["global.embed"] = embed;
      out.taps["global.tokens"] = tokens;
      out.taps["global.encoded"] = encoded;
      f = vit_heads(encoded);
      break;
    }
    case GlobalBranch::resnet50: {
      const Tensor F = fg_backbone(x, "global.resnet50.backbone", &out.taps, "global");
      const Tensor pooled = spatial_mean(F);
      f.logits = linear("global.resnet50.head", pooled);
      f.nodes = octant_nodes(F, pooled, "global.resnet50");
      break;
    }
    case GlobalBranch::cal_adl: {
      const Tensor F = fg_backbone(x, "global.cal_adl.backbone", &out.taps, "global");
      const AdlResult adl = fg_attention(F, rng, training);
      const Tensor pooled = bap_pool(adl.F_attended, adl.A);
      const Tensor pooled_bar = bap_pool(adl.F_attended, adl.A_bar);
      f.logits = sub(linear("global.cal_adl.head", pooled), linear("global.cal_adl.head_bar", pooled_bar));
      f.nodes = octant_nodes(adl.F_attended, pooled, "global.cal_adl");
      out.taps["global.A"] = adl.A;
      if (cfg_.local_branch != LocalBranch::cal_adl) out.activations = FineGrainedActivations{F, adl.A, adl.A_bar};
      break;
    }
  }
  f.probability = malignancy_probability(f.logits);
  out.taps["global.nodes"] = f.nodes;
  out.taps["global.logits"] = f.logits;
  return f;
}

FineGrainedFeatures DeepFan::local_forward(const Tensor& x, Rng& rng, bool training, ForwardOutputs& out) const {
  FineGrainedFeatures f;
  const std::string pre = "local." + to_string(cfg_.local_branch);
  Tensor summary;
  switch (cfg_.local_branch) {
    case LocalBranch::cal_adl: {
      const Tensor F = fg_backbone(x, pre + ".backbone", &out.taps, "local");
      const AdlResult adl = fg_attention(F, rng, training);
      out.activations = FineGrainedActivations{F, adl.A, adl.A_bar};
      out.taps["local.A"] = adl.A;
      f = attribute_heads(bap_pool(adl.F_attended, adl.A), bap_pool(adl.F_attended, adl.A_bar));
      break;
    }
    case LocalBranch::resnet50:
      summary = spatial_mean(fg_backbone(x, pre + ".backbone", &out.taps, "local"));
      break;
    case LocalBranch::vit: {
      Tensor embed;
      const Tensor tokens = patch_tokenize(x, pre, &embed);
      const Tensor encoded = vit_stack(tokens, pre, rng, training);
      out.taps["local.embed"] = embed;
      out.taps["local.tokens"] = tokens;
      out.taps["local.encoded"] = encoded;
      summary = slice_rows(encoded, 0, 1);
      break;
    }
    case LocalBranch::none: throw std::logic_error("local_forward without a local branch");
  }
  if (cfg_.local_branch != LocalBranch::cal_adl) {
    for (std::size_t k = 0; k < kAttributeCount; ++k) {
      f.h_c[k] = linear(idx(pre + ".proj", k), summary);
      f.h_diff[k] = f.h_c[k];
      f.logits[k] = linear(idx(pre + ".head", k), f.h_c[k]);
    }
  }
  std::vector<Tensor> rows;
  for (const auto& h : f.h_diff) rows.push_back(h);
  out.taps["local.h_diff"] = concat_rows(rows);
  return f;
}

ForwardOutputs DeepFan::forward(const Tensor& x, Rng& rng, bool training, ForwardScope scope) const {
  const std::size_t n = cfg_.input_vox;
  if (x.shape() != Shape{1, n, n, n}) {
    throw std::invalid_argument("model input must be [1, " + std::to_string(n) + "^3], got " + shape_str(x.shape()));
  }
  ForwardOutputs out;
  out.taps["input"] = x;
  if (scope != ForwardScope::local_only) out.global = global_forward(x, rng, training, out);
  if (scope != ForwardScope::global_only && cfg_.local_branch != LocalBranch::none) {
    out.fine = local_forward(x, rng, training, out);
  }
  if (scope != ForwardScope::full) {
    if (out.global) {
      out.decision_logits = out.global->logits;
      out.score = out.global->probability;
    }
    return out;
  }

  switch (cfg_.fusion) {
    case Fusion::gcn: {
      out.graph = gcn_forward(assemble_feature_graph(out.global->nodes, *out.fine));
      out.decision_logits = out.graph->logits_gcn;
      out.taps["fusion.adjacency"] = out.graph->adjacency.front();
      out.taps["fusion.logits_gcn"] = out.graph->logits_gcn;
      break;
    }
    case Fusion::concat: {
      FeatureGraph g;
      g.h_all = assemble_feature_graph(out.global->nodes, *out.fine);
      const Tensor flat = reshape(g.h_all, {1, g.h_all.numel()});
      g.logits_all = linear("fusion.all", flat);
      g.p_all = malignancy_probability(g.logits_all);
      out.decision_logits = linear("fusion.concat", flat);
      out.taps["fusion.logits_concat"] = out.decision_logits;
      out.graph = std::move(g);
      break;
    }
    case Fusion::none: out.decision_logits = out.global->logits; break;
  }
  if (out.graph) {
    out.taps["fusion.h_all"] = out.graph->h_all;
    out.taps["fusion.logits_all"] = out.graph->logits_all;
  }
  out.score = malignancy_probability(out.decision_logits);
  return out;
}

}  // namespace nb
