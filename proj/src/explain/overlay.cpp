#include "nodulebench/explain/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <zlib.h>

namespace nb {

Slice axial_slice(const Tensor& grid, std::size_t z) {
  const Shape& s = grid.shape();
  const bool batched = s.size() == 4 && s[0] == 1;
  if (s.size() != 3 && !batched) throw std::invalid_argument("axial_slice: expected [D, H, W], got " + shape_str(s));
  const std::size_t off = batched ? 1 : 0;
  const std::size_t d = s[off], h = s[off + 1], w = s[off + 2];
  if (z >= d) throw std::out_of_range("axial_slice: z " + std::to_string(z) + " outside depth " + std::to_string(d));
  const auto v = grid.values();
  Slice out{w, h, {}};
  out.values.assign(v.begin() + static_cast<std::ptrdiff_t>(z * h * w), v.begin() + static_cast<std::ptrdiff_t>((z + 1) * h * w));
  return out;
}

Rgb palette_color(Palette, double t) {
  t = std::clamp(t, 0.0, 1.0);
  // Piecewise-linear jet: each channel is a trapezoid over [0, 1].
  auto ramp = [&](double centre) { return std::clamp(1.5 - std::abs(4.0 * t - centre), 0.0, 1.0); };
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  return {byte(ramp(3.0)), byte(ramp(2.0)), byte(ramp(1.0))};
}

std::vector<Rgb> blend_overlay(const Slice& gray, const Slice& heat, Palette p) {
  if (gray.width != heat.width || gray.height != heat.height) {
    throw std::invalid_argument("overlay: slice is " + std::to_string(gray.width) + "x" + std::to_string(gray.height) +
                                " but heatmap is " + std::to_string(heat.width) + "x" + std::to_string(heat.height));
  }
  const std::size_t n = gray.width * gray.height;
  if (gray.values.size() != n || heat.values.size() != n) throw std::invalid_argument("overlay: value count does not match extent");
  std::vector<Rgb> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = 255.0 * std::clamp(gray.values[i], 0.0, 1.0);
    const double a = std::clamp(heat.values[i], 0.0, 1.0);
    const Rgb c = palette_color(p, a);
    for (std::size_t k = 0; k < 3; ++k) px[i][k] = static_cast<std::uint8_t>(std::lround((1.0 - a) * g + a * c[k]));
  }
  return px;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::string body = std::string(type, 4) + data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(std::size_t width, std::size_t height, const std::vector<Rgb>& pixels) {
  if (width == 0 || height == 0 || pixels.size() != width * height) throw std::invalid_argument("encode_png: bad extent");
  std::string raw;
  raw.reserve(height * (1 + 3 * width));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back('\0');
    for (std::size_t x = 0; x < width; ++x)
      for (std::uint8_t c : pixels[y * width + x]) raw.push_back(static_cast<char>(c));
  }
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::string deflated(size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(deflated.data()), &size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("encode_png: deflate failed");
  }
  deflated.resize(size);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB, deflate, filter 0, no interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", deflated);
  put_chunk(png, "IEND", "");
  return png;
}

std::string render_overlay(const Slice& gray, const Slice& heat, Palette p) {
  return encode_png(gray.width, gray.height, blend_overlay(gray, heat, p));
}

}  // namespace nb
