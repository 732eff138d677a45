#include "nodulebench/explain/attribution.hpp"

#include <cmath>
#include <stdexcept>

namespace nb {

NodeAttribution attribution_from(const Tensor& h_all, std::span<const double> grad, const Tensor& adjacency) {
  if (h_all.rank() != 2 || h_all.dim(0) != kGraphNodes) {
    throw std::invalid_argument("attribution: expected 12 graph rows, got " + shape_str(h_all.shape()));
  }
  if (adjacency.shape() != Shape{kGraphNodes, kGraphNodes}) throw std::invalid_argument("attribution: adjacency must be 12x12");
  if (grad.size() != h_all.numel()) throw std::invalid_argument("attribution: gradient size does not match h_all");
  const std::size_t d = h_all.dim(1);
  const auto h = h_all.values();
  const auto a = adjacency.values();
  std::array<double, kGraphNodes> raw{};
  double total = 0.0;
  for (std::size_t i = 0; i < kGraphNodes; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += grad[i * d + k] * h[i * d + k];
    double in_degree = 0.0;
    for (std::size_t r = 0; r < kGraphNodes; ++r) in_degree += a[r * kGraphNodes + i];
    raw[i] = std::abs(dot) * (in_degree / static_cast<double>(kGraphNodes));
    total += raw[i];
  }
  if (!(total > 0.0)) throw std::domain_error("attribution: every node has zero contribution");
  NodeAttribution out;
  for (std::size_t i = 0; i < kGraphNodes; ++i) out.weights[i] = raw[i] / total;
  for (std::size_t i = 0; i < kGlobalNodes; ++i) out.global_weight += out.weights[i];
  return out;
}

NodeAttribution gcn_node_attribution(const DeepFan& model, const Tensor& input) {
  if (model.config().fusion != Fusion::gcn) throw std::invalid_argument("gcn_node_attribution: the model has no GCN");
  Rng rng(kEvalSeed);
  const auto out = model.forward(input, rng, false);
  const auto& g = *out.graph;
  backward(sum(slice_cols(softmax_rows(g.logits_gcn), 1, 1)));
  std::vector<double> grad(g.h_all.numel(), 0.0);
  if (g.h_all.has_grad()) std::copy(g.h_all.grad().begin(), g.h_all.grad().end(), grad.begin());
  for (const auto& [name, t] : model.parameters().items()) Tensor(t).zero_grad();
  return attribution_from(g.h_all, grad, g.adjacency.front());
}

std::string node_label(std::size_t row) {
  static const char* const attributes[] = {"lobulation", "spiculation", "density"};
  if (row < kGlobalNodes) return "global" + std::to_string(row);
  if (row < kGraphNodes) return attributes[row - kGlobalNodes];
  throw std::out_of_range("node_label: row " + std::to_string(row));
}

void to_json(nlohmann::json& j, const NodeAttribution& a) {
  j = nlohmann::json::object();
  j["global_weight"] = a.global_weight;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < kGraphNodes; ++i) nodes.push_back({{"row", i}, {"label", node_label(i)}, {"weight", a.weights[i]}});
}

}  // namespace nb
