#pragma once

#include <string>

#include "nodulebench/data/volume.hpp"

namespace nb {

struct WindowPreset {
  double level = 0.0;
  double width = 1.0;
};

/// "lung" (L -600, W 1500) or "mediastinum" (L 50, W 350); throws std::invalid_argument otherwise.
WindowPreset window_preset(const std::string& name);

/// Display gray in 0..255 of a HU value: round(255 * clamp((hu - (L - W/2)) / W, 0, 1)).
std::uint8_t window_gray(double hu, const WindowPreset& w);

/// Number of slices along "axial" (z), "coronal" (y) or "sagittal" (x).
std::size_t slice_count(const Volume& v, const std::string& axis);

/// Grayscale PNG of one slice. Axial images are nx wide and ny tall, coronal
/// nx by nz, sagittal ny by nz. Throws std::out_of_range for a bad index and
/// std::invalid_argument for an unknown axis or window.
std::string render_slice_png(const Volume& v, const std::string& axis, std::size_t index, const std::string& window);

}  // namespace nb
