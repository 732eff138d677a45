#include "nodulebench/explain/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nb {

namespace {

// Backward sweeps accumulate into parameter grads; explanations leave none behind.
void clear_parameter_grads(const DeepFan& model) {
  for (const auto& [name, t] : model.parameters().items()) Tensor(t).zero_grad();
}

}  // namespace

Tensor upsample_trilinear(const Tensor& grid, std::size_t size) {
  if (grid.rank() != 3) throw std::invalid_argument("upsample_trilinear: expected [D, H, W], got " + shape_str(grid.shape()));
  const std::array<std::size_t, 3> in{grid.dim(0), grid.dim(1), grid.dim(2)};
  const auto v = grid.values();
  // Source coordinate of output voxel i along an axis, clamped to the grid.
  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [&](std::size_t extent) {
    std::vector<Tap> out(size);
    const double ratio = static_cast<double>(extent) / static_cast<double>(size);
    for (std::size_t i = 0; i < size; ++i) {
      const double c = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(extent - 1));
      const auto lo = static_cast<std::size_t>(std::floor(c));
      out[i] = {lo, std::min(lo + 1, extent - 1), c - static_cast<double>(lo)};
    }
    return out;
  };
  const auto tz = taps(in[0]), ty = taps(in[1]), tx = taps(in[2]);
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) { return v[(z * in[1] + y) * in[2] + x]; };
  std::vector<double> out(size * size * size);
  for (std::size_t z = 0; z < size; ++z) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const auto [z0, z1, wz] = tz[z];
        const auto [y0, y1, wy] = ty[y];
        const auto [x0, x1, wx] = tx[x];
        const double c00 = at(z0, y0, x0) * (1 - wx) + at(z0, y0, x1) * wx;
        const double c01 = at(z0, y1, x0) * (1 - wx) + at(z0, y1, x1) * wx;
        const double c10 = at(z1, y0, x0) * (1 - wx) + at(z1, y0, x1) * wx;
        const double c11 = at(z1, y1, x0) * (1 - wx) + at(z1, y1, x1) * wx;
        const double c0 = c00 * (1 - wy) + c01 * wy;
        const double c1 = c10 * (1 - wy) + c11 * wy;
        out[(z * size + y) * size + x] = c0 * (1 - wz) + c1 * wz;
      }
    }
  }
  return Tensor::from({size, size, size}, std::move(out));
}

Heatmap grad_cam_from(const Tensor& feature, std::span<const double> grad, std::size_t input_vox, std::string layer) {
  if (feature.rank() != 4) {
    throw std::invalid_argument("grad_cam: layer '" + layer + "' is not a spatial [C, D, H, W] map, got " +
                                shape_str(feature.shape()));
  }
  if (grad.size() != feature.numel()) throw std::invalid_argument("grad_cam: gradient size does not match the feature map");
  const std::size_t channels = feature.dim(0), voxels = feature.numel() / channels;
  const auto f = feature.values();
  std::vector<double> map(voxels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double w = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) w += grad[c * voxels + i];
    w /= static_cast<double>(voxels);
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < voxels; ++i) map[i] += w * f[c * voxels + i];
  }
  double peak = 0.0;
  for (double& m : map) {
    m = std::max(m, 0.0);
    peak = std::max(peak, m);
  }
  if (peak > 0.0)
    for (double& m : map) m /= peak;
  Heatmap h;
  h.values = Tensor::from({feature.dim(1), feature.dim(2), feature.dim(3)}, std::move(map));
  h.upsampled = upsample_trilinear(h.values, input_vox);
  // Interpolation stays inside the hull of the samples, but guard the bounds bitwise.
  for (double& u : h.upsampled.mutable_values()) u = std::clamp(u, 0.0, 1.0);
  h.target_layer = std::move(layer);
  return h;
}

Heatmap grad_cam_map(const DeepFan& model, const Tensor& input, const std::string& target_layer, Pathology cls) {
  Rng rng(kEvalSeed);
  const auto out = model.forward(input, rng, false);
  const auto it = out.taps.find(target_layer);
  if (it == out.taps.end()) throw std::invalid_argument("grad_cam: model has no layer '" + target_layer + "'");
  const Tensor& feature = it->second;
  if (feature.rank() != 4) {
    throw std::invalid_argument("grad_cam: layer '" + target_layer + "' is not spatial (" + shape_str(feature.shape()) + ")");
  }
  const Tensor score = sum(slice_cols(out.decision_logits, static_cast<std::size_t>(cls), 1));
  backward(score);
  std::vector<double> grad(feature.numel(), 0.0);
  if (feature.has_grad()) std::copy(feature.grad().begin(), feature.grad().end(), grad.begin());
  clear_parameter_grads(model);
  return grad_cam_from(feature, grad, model.config().input_vox, target_layer);
}

std::string default_cam_layer(const ModelConfig& cfg) {
  if (cfg.local_branch == LocalBranch::cal_adl || cfg.local_branch == LocalBranch::resnet50) return "local.F";
  if (cfg.global_branch != GlobalBranch::vit) return "global.F";
  return "global.embed";
}

}  // namespace nb
