#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "nodulebench/tensor/tensor.hpp"

namespace nb {

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates where forward and backward one-sided differences disagree
  /// (a kink such as ReLU at zero); they are not compared.
  std::vector<std::size_t> excluded;
};

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the autodiff gradient of f at x against central differences for
/// every coordinate of x. f must return a scalar and must not keep state
/// between calls. Throws std::domain_error if f is non-finite.
FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

/// A single coordinate of a leaf tensor to probe.
struct Probe {
  Tensor leaf;
  std::size_t index;
};

/// Same comparison for selected coordinates of existing leaves (for example
/// model parameters). `loss` recomputes the scalar from current leaf values.
/// Probe `i` of the report corresponds to probes[i].
FiniteDiffReport finite_diff_check_probes(const std::function<Tensor()>& loss, std::vector<Probe> probes, double eps);

}  // namespace nb
