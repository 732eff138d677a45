#pragma once

#include <array>

#include "nodulebench/data/annotation.hpp"
#include "nodulebench/model/deepfan.hpp"

namespace nb {

struct LossWeights {
  double w0 = 0.2;  // global malignancy head
  double w1 = 0.2;  // each attribute head
  double w2 = 0.2;  // FC over the flattened feature graph
  double w3 = 0.4;  // GCN (or concat) decision head
};

struct LossTarget {
  Pathology pathology = Pathology::benign;
  bool has_attributes = true;
  /// Lobulation, spiculation, density class indices.
  std::array<std::size_t, kAttributeCount> attributes{0, 0, 0};

  static LossTarget from(const NoduleAnnotation& a);
};

/// Cross-entropy terms of one sample. Terms whose head is absent from the
/// outputs are 0. `total_tensor` is the differentiable total; it is
/// undefined when every weighted term is absent.
struct LossBreakdown {
  double l_t0 = 0.0;
  double l_c0 = 0.0;
  double l_c1 = 0.0;
  double l_c2 = 0.0;
  double l_all = 0.0;
  double l_g = 0.0;
  double total = 0.0;
  Tensor total_tensor;
};

/// w0*l_t0 + w1*((l_c0 + l_c1) + l_c2) + w2*l_all + w3*l_g, evaluated left to right.
double compose_total(const LossBreakdown& terms, const LossWeights& w);

/// Throws std::invalid_argument when attribute heads are present but the
/// target has no attribute labels.
LossBreakdown composite_loss(const ForwardOutputs& outputs, const LossTarget& target, const LossWeights& w);

}  // namespace nb
