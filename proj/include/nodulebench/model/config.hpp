#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "nodulebench/tensor/tensor.hpp"

namespace nb {

enum class GlobalBranch { vit, resnet50, cal_adl };
enum class LocalBranch { cal_adl, resnet50, vit, none };
enum class Fusion { gcn, concat, none };
enum class Scale { paper, desk };

std::string to_string(GlobalBranch b);
std::string to_string(LocalBranch b);
std::string to_string(Fusion f);
std::string to_string(Scale s);
GlobalBranch global_branch_from_string(const std::string& s);
LocalBranch local_branch_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);
Scale scale_from_string(const std::string& s);

inline constexpr std::size_t kAttributeCount = 3;
/// Class counts of the lobulation, spiculation and density heads.
inline constexpr std::array<std::size_t, kAttributeCount> kAttributeClasses{2, 2, 3};

struct ModelConfig {
  std::size_t input_vox = 32;
  std::size_t patch_grid = 2;
  std::size_t token_dim = 256;
  std::size_t node_dim = 64;
  std::size_t vit_blocks = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::array<std::size_t, 3> resnet_blocks{2, 2, 2};
  std::size_t backbone_channels = 64;
  std::size_t fg_spatial = 4;
  GlobalBranch global_branch = GlobalBranch::vit;
  LocalBranch local_branch = LocalBranch::cal_adl;
  Fusion fusion = Fusion::gcn;
  Scale scale = Scale::desk;
  double dropout = 0.1;
  double adl_gamma = 0.8;
  double adl_drop_prob = 0.25;
  /// Isotropic voxel spacing of the input patch (0.6 mm at 128^3 covers the
  /// same 76.8 mm field as the paper; the desk patch covers 38.4 mm).
  double spacing_mm = 1.2;

  static ModelConfig desk();
  static ModelConfig paper();
  /// Model 1..9 of the ablation table at the given scale.
  static ModelConfig ablation(int model_id, Scale scale);

  std::size_t patch_count() const { return patch_grid * patch_grid * patch_grid; }
  std::size_t global_node_count() const { return patch_count() + 1; }
  std::size_t local_node_count() const { return local_branch == LocalBranch::none ? 0 : kAttributeCount; }
  std::size_t node_count() const { return global_node_count() + local_node_count(); }
  /// Stem, stage widths of the residual backbone.
  std::size_t stem_channels() const { return backbone_channels / 8; }
  std::array<std::size_t, 3> stage_channels() const {
    return {backbone_channels / 4, backbone_channels / 2, backbone_channels};
  }

  /// Throws std::invalid_argument for inconsistent geometry or ablations.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Strides of the backbone: stem, then the three stages.
inline constexpr std::size_t kStemStride = 2;
inline constexpr std::array<std::size_t, 3> kStageStrides{2, 2, 1};

/// Named activation shapes of a forward pass, derived arithmetically from the
/// config without allocating parameters. Keys match ForwardOutputs::taps.
std::map<std::string, Shape> trace_shapes(const ModelConfig& cfg);

}  // namespace nb
