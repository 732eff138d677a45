#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "nodulebench/tensor/rng.hpp"
#include "nodulebench/tensor/tensor.hpp"

namespace nb {

inline constexpr double kAirHu = -1024.0;
inline constexpr double kWindowLowHu = -1000.0;
inline constexpr double kWindowHighHu = 400.0;

/// Scalar grid in Hounsfield-like units. dims = (nx, ny, nz); voxel (x, y, z)
/// lives at index (z * ny + y) * nx + x, so x varies fastest. Voxel centers
/// sit at physical position (x * sx, y * sy, z * sz).
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<double> voxels;

  Volume() = default;
  Volume(std::array<std::size_t, 3> dims, std::array<double, 3> spacing, double fill);

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * dims[1] + y) * dims[0] + x; }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
  bool is_isotropic(double tol = 1e-9) const;
  /// Throws std::invalid_argument unless dims and spacing are valid and sized.
  void validate() const;
};

/// `.vol` files: one JSON line {"dims":[nx,ny,nz],"spacing":[..],"dtype":"float32le"}
/// followed by raw little-endian float32 voxels.
void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

/// Trilinear resampling onto an isotropic grid with the same origin. Output
/// extent per axis is floor((n - 1) * s / t) + 1 samples.
Volume resample_isotropic(const Volume& v, double target_spacing_mm);

/// size_vox^3 patch centered on the voxel nearest center_mm (the voxel at
/// offset size_vox / 2 in the patch); outside voxels are air.
Volume crop_patch(const Volume& v, std::array<double, 3> center_mm, std::size_t size_vox);

struct Augmentation {
  std::array<bool, 3> flip{false, false, false};
  /// Content shift per axis in voxels; vacated voxels are filled with air.
  std::array<int, 3> shift{0, 0, 0};
};

Augmentation draw_augmentation(Rng& rng, int max_jitter);
Volume apply_augmentation(const Volume& patch, const Augmentation& aug);
/// Random flips (p = 0.5 per axis) and a jitter of at most max_jitter voxels.
Volume augment(const Volume& patch, Rng& rng, int max_jitter);

/// Clips to the [-1000, 400] HU window and maps it to [0, 1]; returns a
/// [1, nz, ny, nx] tensor.
Tensor normalize_intensity(const Volume& patch);
double normalize_hu(double hu);

}  // namespace nb
