#include "nodulebench/tensor/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace nb {

AdamState AdamState::for_parameters(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.numel(), 0.0);
    s.second_moment.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                                " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() || state.second_moment[i].size() != params[i].numel()) {
      throw std::invalid_argument("adam_step: moment shape does not match parameter " + std::to_string(i));
    }
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) {
      // Zero gradient: moments decay, and the step uses the decayed moments.
      auto& m = state.first_moment[i];
      auto& v = state.second_moment[i];
      auto w = p.mutable_values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] *= state.beta1;
        v[j] *= state.beta2;
        w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
      }
      continue;
    }
    const auto g = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto w = p.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

}  // namespace nb
