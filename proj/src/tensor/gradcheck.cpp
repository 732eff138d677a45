#include "nodulebench/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nb {

namespace {

constexpr double kKinkTolerance = 1e-3;

double checked_scalar(const Tensor& t) {
  const double v = t.item();
  if (!std::isfinite(v)) throw std::domain_error("finite_diff_check: function value is not finite");
  return v;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

FiniteDiffReport finite_diff_check_probes(const std::function<Tensor()>& loss, std::vector<Probe> probes, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  for (auto& p : probes) p.leaf.zero_grad();
  const Tensor out = loss();
  const double base = checked_scalar(out);
  backward(out);

  FiniteDiffReport report;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    auto& probe = probes[i];
    const double analytic = probe.leaf.has_grad() ? probe.leaf.grad()[probe.index] : 0.0;
    auto values = probe.leaf.mutable_values();
    const double original = values[probe.index];
    double plus = 0.0, minus = 0.0;
    {
      NoGradGuard guard;
      values[probe.index] = original + eps;
      plus = checked_scalar(loss());
      values[probe.index] = original - eps;
      minus = checked_scalar(loss());
      values[probe.index] = original;
    }
    const double forward_diff = (plus - base) / eps;
    const double backward_diff = (base - minus) / eps;
    const double scale = std::max({std::abs(forward_diff), std::abs(backward_diff), 1e-8});
    if (std::abs(forward_diff - backward_diff) > kKinkTolerance * scale) {
      report.excluded.push_back(i);
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric));
    ++report.checked;
  }
  return report;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  std::vector<Probe> probes;
  probes.reserve(leaf.numel());
  for (std::size_t i = 0; i < leaf.numel(); ++i) probes.push_back({leaf, i});
  return finite_diff_check_probes([&] { return f(leaf); }, std::move(probes), eps);
}

}  // namespace nb
