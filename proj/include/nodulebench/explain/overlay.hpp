#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nodulebench/tensor/tensor.hpp"

namespace nb {

/// A 2D grid of values, row-major.
struct Slice {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;
};

/// Axial slice z of a [D, H, W] or [1, D, H, W] grid.
Slice axial_slice(const Tensor& grid, std::size_t z);

using Rgb = std::array<std::uint8_t, 3>;

enum class Palette { jet };

/// Blue at 0 through cyan, yellow and red to dark red at 1.
Rgb palette_color(Palette p, double t);

/// Blends a grayscale slice (values in [0, 1]) with the palette colour of a
/// heatmap slice (values in [0, 1]), using the heat value as opacity.
/// Returns RGB pixels row-major. Throws std::invalid_argument on extent mismatch.
std::vector<Rgb> blend_overlay(const Slice& gray, const Slice& heat, Palette p = Palette::jet);

/// PNG bytes of the blended overlay. The encoder settings are fixed, so equal
/// inputs give equal bytes.
std::string render_overlay(const Slice& gray, const Slice& heat, Palette p = Palette::jet);

/// 8-bit RGB PNG, no interlace, filter 0 on every row.
std::string encode_png(std::size_t width, std::size_t height, const std::vector<Rgb>& pixels);

}  // namespace nb
