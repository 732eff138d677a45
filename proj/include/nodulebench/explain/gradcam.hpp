#pragma once

#include <span>
#include <string>

#include "nodulebench/data/annotation.hpp"
#include "nodulebench/model/deepfan.hpp"

namespace nb {

struct Heatmap {
  Tensor values;     // [D, H, W] at feature-map resolution, in [0, 1]
  Tensor upsampled;  // [N, N, N] at input resolution
  std::string target_layer;
};

/// Grad-CAM from a [C, D, H, W] feature map and the gradient of the class
/// score with respect to it: weight_c = spatial mean of the gradient,
/// map = relu(sum_c weight_c * feature_c), peak-normalized (skipped when the
/// map is identically zero), then trilinearly upsampled to input_vox^3.
Heatmap grad_cam_from(const Tensor& feature, std::span<const double> grad, std::size_t input_vox, std::string layer);

/// Grad-CAM of the decision logit of `cls` with respect to a spatial tap of
/// the eval-mode forward pass ("local.F", "global.embed", "local.stage2", ...).
/// Throws std::invalid_argument for unknown or non-spatial layers.
Heatmap grad_cam_map(const DeepFan& model, const Tensor& input, const std::string& target_layer, Pathology cls);

/// The last ResNet stage when the model has one, else the patch-embedding conv.
std::string default_cam_layer(const ModelConfig& cfg);

/// Trilinear resize of a [D, H, W] grid to size^3, sampling at voxel centres.
Tensor upsample_trilinear(const Tensor& grid, std::size_t size);

}  // namespace nb
