#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nodulebench/model/config.hpp"
#include "nodulebench/tensor/nn.hpp"

namespace nb {

/// Output of the global branch. For the ViT branch rows are H_T^0..H_T^8 and
/// `logits` is the class-token malignancy head (p_vit).
struct GlobalFeatures {
  Tensor nodes;   // [patch_count + 1, node_dim]
  Tensor logits;  // [1, 2]
  double probability = 0.0;
};

struct FineGrainedActivations {
  Tensor F;      // [C, S, S, S]
  Tensor A;      // [S, S, S]
  Tensor A_bar;  // [S, S, S]
};

struct FineGrainedFeatures {
  std::array<Tensor, kAttributeCount> h_c;
  std::array<Tensor, kAttributeCount> h_c_bar;  // undefined for non-counterfactual branches
  std::array<Tensor, kAttributeCount> h_diff;
  /// Lobulation, spiculation, density.
  std::array<Tensor, kAttributeCount> logits;
};

struct FeatureGraph {
  Tensor h_all;                     // [nodes, node_dim]
  std::vector<Tensor> adjacency;    // one [nodes, nodes] matrix per GCN layer
  Tensor node_features;             // after the last GCN layer
  Tensor logits_gcn;                // [1, 2]; undefined under concat fusion
  Tensor logits_all;                // [1, 2]
  double p_gcn = 0.0;
  double p_all = 0.0;
};

struct ForwardOutputs {
  std::optional<GlobalFeatures> global;
  std::optional<FineGrainedActivations> activations;
  std::optional<FineGrainedFeatures> fine;
  std::optional<FeatureGraph> graph;
  /// Logits of the configuration's decision head: p_gcn, the concat head, or
  /// the global branch score.
  Tensor decision_logits;
  double score = 0.0;
  std::map<std::string, Tensor> taps;
};

/// Malignancy probability from a [.., 2] logit pair.
double malignancy_probability(const Tensor& logits);
std::vector<double> softmax_probabilities(const Tensor& logits);

struct AdlResult {
  Tensor A;
  Tensor A_bar;
  Tensor F_attended;
};

/// Which parts of the network a forward pass evaluates. Partial scopes skip
/// fusion; the score of a global-only pass is the global branch probability.
enum class ForwardScope { full, global_only, local_only };

/// Seed of the forward rng in evaluation. Eval mode still draws the
/// counterfactual map, so every scored input gets this same draw.
inline constexpr std::uint64_t kEvalSeed = 0x5eed;

class DeepFan {
 public:
  DeepFan(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// x is [1, N, N, N] with intensities in [0, 1].
  ForwardOutputs forward(const Tensor& x, Rng& rng, bool training, ForwardScope scope = ForwardScope::full) const;

  // Building blocks, exposed for testing and explanation.

  /// Class token followed by patch tokens, positional embeddings added: [g^3 + 1, token_dim].
  /// When `embed_map` is given it receives the assembled patch-embedding conv output.
  Tensor patch_tokenize(const Tensor& x, const std::string& prefix, Tensor* embed_map = nullptr) const;
  Tensor vit_stack(const Tensor& tokens, const std::string& prefix, Rng& rng, bool training) const;
  GlobalFeatures vit_heads(const Tensor& encoded) const;
  Tensor fg_backbone(const Tensor& x, const std::string& prefix, std::map<std::string, Tensor>* taps = nullptr,
                     const std::string& tap_prefix = "") const;
  AdlResult fg_attention(const Tensor& F, Rng& rng, bool training) const;
  FineGrainedFeatures attribute_heads(const Tensor& pooled, const Tensor& pooled_bar) const;
  Tensor assemble_feature_graph(const Tensor& global_nodes, const FineGrainedFeatures& fine) const;
  FeatureGraph gcn_forward(const Tensor& h_all) const;

 private:
  void build();
  void build_vit(const std::string& prefix, bool with_heads);
  void build_backbone(const std::string& prefix);
  void build_octant_nodes(const std::string& prefix);

  Tensor transformer_block(const Tensor& x, const std::string& prefix, Rng& rng, bool training) const;
  Tensor residual_block(const Tensor& x, const std::string& prefix, std::size_t stride, bool project) const;
  Tensor octant_nodes(const Tensor& F, const Tensor& first_node_input, const std::string& prefix) const;
  GlobalFeatures global_forward(const Tensor& x, Rng& rng, bool training, ForwardOutputs& out) const;
  FineGrainedFeatures local_forward(const Tensor& x, Rng& rng, bool training, ForwardOutputs& out) const;

  const Tensor& p(const std::string& name) const { return params_.get(name); }
  Tensor linear(const std::string& name, const Tensor& x) const;

  ModelConfig cfg_;
  ParameterSet params_;
};

/// BAP: mean over space of F weighted by A, signed square root, L2 normalized.
Tensor bap_pool(const Tensor& F_attended, const Tensor& attention);

/// ADL drop mask: 1 where a < gamma * max(a), else 0.
Tensor adl_drop_mask(const Tensor& a, double gamma);

}  // namespace nb
