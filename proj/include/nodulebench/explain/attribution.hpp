#pragma once

#include <array>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "nodulebench/model/deepfan.hpp"

namespace nb {

inline constexpr std::size_t kGraphNodes = 12;
inline constexpr std::size_t kGlobalNodes = 9;

/// Per-node share of the GCN decision, in feature-graph row order: nine
/// global nodes (class token or pooled summary first, then the eight
/// patches), then lobulation, spiculation and density.
struct NodeAttribution {
  std::array<double, kGraphNodes> weights{};
  double global_weight = 0.0;  // weights[0] + ... + weights[8]
};

/// raw_i = |sum_d grad[i, d] * h_all[i, d]| * (column sum i of adjacency) / 12,
/// then normalized to sum to 1. Throws std::domain_error when every raw
/// value is zero.
NodeAttribution attribution_from(const Tensor& h_all, std::span<const double> grad, const Tensor& adjacency);

/// Attribution of p_gcn on the eval-mode forward pass, using the first GCN
/// layer's adjacency. Throws std::invalid_argument unless fusion is gcn.
NodeAttribution gcn_node_attribution(const DeepFan& model, const Tensor& input);

/// "global0".."global8", "lobulation", "spiculation", "density".
std::string node_label(std::size_t row);

void to_json(nlohmann::json& j, const NodeAttribution& a);

}  // namespace nb
