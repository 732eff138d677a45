#include "nodulebench/trial/slices.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nodulebench/explain/overlay.hpp"

namespace nb {

WindowPreset window_preset(const std::string& name) {
  if (name == "lung") return {-600.0, 1500.0};
  if (name == "mediastinum") return {50.0, 350.0};
  throw std::invalid_argument("unknown window '" + name + "'");
}

std::uint8_t window_gray(double hu, const WindowPreset& w) {
  const double t = std::clamp((hu - (w.level - 0.5 * w.width)) / w.width, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * t));
}

std::size_t slice_count(const Volume& v, const std::string& axis) {
  if (axis == "axial") return v.dims[2];
  if (axis == "coronal") return v.dims[1];
  if (axis == "sagittal") return v.dims[0];
  throw std::invalid_argument("unknown axis '" + axis + "'");
}

std::string render_slice_png(const Volume& v, const std::string& axis, std::size_t index, const std::string& window) {
  const WindowPreset w = window_preset(window);
  if (index >= slice_count(v, axis)) throw std::out_of_range(axis + " slice " + std::to_string(index) + " out of range");
  std::size_t width = 0, height = 0;
  std::vector<Rgb> pixels;
  auto put = [&](double hu) {
    const auto g = window_gray(hu, w);
    pixels.push_back({g, g, g});
  };
  const auto [nx, ny, nz] = v.dims;
  if (axis == "axial") {
    width = nx, height = ny;
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) put(v.at(x, y, index));
  } else if (axis == "coronal") {
    // Superior at the top.
    width = nx, height = nz;
    for (std::size_t z = nz; z-- > 0;)
      for (std::size_t x = 0; x < nx; ++x) put(v.at(x, index, z));
  } else {
    width = ny, height = nz;
    for (std::size_t z = nz; z-- > 0;)
      for (std::size_t y = 0; y < ny; ++y) put(v.at(index, y, z));
  }
  return encode_png(width, height, pixels);
}

}  // namespace nb
