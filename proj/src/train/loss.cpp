#include "nodulebench/train/loss.hpp"

#include <stdexcept>

namespace nb {

LossTarget LossTarget::from(const NoduleAnnotation& a) {
  LossTarget t;
  t.pathology = a.pathology;
  t.attributes = {a.lobulation ? 1u : 0u, a.spiculation ? 1u : 0u, static_cast<std::size_t>(a.density)};
  return t;
}

double compose_total(const LossBreakdown& t, const LossWeights& w) {
  return w.w0 * t.l_t0 + w.w1 * ((t.l_c0 + t.l_c1) + t.l_c2) + w.w2 * t.l_all + w.w3 * t.l_g;
}

namespace {

// Appends weight * term to the running sum when the weight is nonzero.
// Skipping a zero-weighted term leaves the value unchanged bitwise.
void accumulate(Tensor& sum, const Tensor& term, double weight) {
  if (weight == 0.0 || !term.defined()) return;
  const Tensor scaled = scale(term, weight);
  sum = sum.defined() ? add(sum, scaled) : scaled;
}

}  // namespace

LossBreakdown composite_loss(const ForwardOutputs& out, const LossTarget& target, const LossWeights& w) {
  const auto label = static_cast<std::size_t>(target.pathology);
  LossBreakdown b;
  Tensor t0, attrs, all, g;
  if (out.global) {
    t0 = softmax_cross_entropy(out.global->logits, label);
    b.l_t0 = t0.item();
  }
  if (out.fine) {
    if (!target.has_attributes) throw std::invalid_argument("composite_loss: attribute labels required by the local branch");
    std::array<Tensor, kAttributeCount> c;
    for (std::size_t k = 0; k < kAttributeCount; ++k) c[k] = softmax_cross_entropy(out.fine->logits[k], target.attributes[k]);
    b.l_c0 = c[0].item();
    b.l_c1 = c[1].item();
    b.l_c2 = c[2].item();
    attrs = add(add(c[0], c[1]), c[2]);
  }
  if (out.graph) {
    all = softmax_cross_entropy(out.graph->logits_all, label);
    b.l_all = all.item();
    // Under concat fusion the decision head takes the GCN slot.
    g = softmax_cross_entropy(out.decision_logits, label);
    b.l_g = g.item();
  }
  b.total = compose_total(b, w);
  accumulate(b.total_tensor, t0, w.w0);
  accumulate(b.total_tensor, attrs, w.w1);
  accumulate(b.total_tensor, all, w.w2);
  accumulate(b.total_tensor, g, w.w3);
  return b;
}

}  // namespace nb
