#include "nodulebench/data/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace nb {

Volume::Volume(std::array<std::size_t, 3> d, std::array<double, 3> s, double fill)
    : dims(d), spacing(s), voxels(d[0] * d[1] * d[2], fill) {
  validate();
}

bool Volume::is_isotropic(double tol) const {
  return std::abs(spacing[0] - spacing[1]) <= tol && std::abs(spacing[0] - spacing[2]) <= tol;
}

void Volume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] == 0) throw std::invalid_argument("volume has an empty axis");
    if (!(spacing[a] > 0.0)) throw std::invalid_argument("volume spacing must be positive");
  }
  if (voxels.size() != size()) throw std::invalid_argument("volume voxel count does not match dims");
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  v.validate();
  nlohmann::json header{{"dims", v.dims}, {"spacing", v.spacing}, {"dtype", "float32le"}};
  std::string bytes = header.dump();
  bytes.push_back('\n');
  const std::size_t start = bytes.size();
  bytes.resize(start + v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v.voxels[i]));
    for (int b = 0; b < 4; ++b) bytes[start + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write volume " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing volume " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read volume " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);
  if (header.value("dtype", "") != "float32le") throw std::runtime_error("unsupported volume dtype in " + path.string());
  Volume v;
  v.dims = header.at("dims").get<std::array<std::size_t, 3>>();
  v.spacing = header.at("spacing").get<std::array<double, 3>>();
  std::string raw(v.dims[0] * v.dims[1] * v.dims[2] * 4, '\0');
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw std::runtime_error("truncated volume " + path.string());
  v.voxels.resize(raw.size() / 4);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
    v.voxels[i] = std::bit_cast<float>(bits);
  }
  v.validate();
  return v;
}

namespace {

// Source index and weight of the upper neighbour for output sample j.
struct Tap {
  std::size_t lo;
  double frac;
};

std::vector<Tap> taps_for_axis(std::size_t n_in, double s_in, std::size_t n_out, double t) {
  std::vector<Tap> taps(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    const double pos = static_cast<double>(j) * t / s_in;
    auto lo = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(lo);
    if (lo >= n_in - 1) {
      lo = n_in - 1;
      frac = 0.0;
    }
    if (frac < 1e-12) frac = 0.0;
    taps[j] = {lo, frac};
  }
  return taps;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("target spacing must be positive");
  if (v.voxels.empty()) throw std::invalid_argument("cannot resample an empty volume");
  v.validate();
  std::array<std::size_t, 3> out_dims{};
  std::array<std::vector<Tap>, 3> taps;
  for (int a = 0; a < 3; ++a) {
    const double span = static_cast<double>(v.dims[a] - 1) * v.spacing[a];
    out_dims[a] = static_cast<std::size_t>(std::floor(span / t + 1e-9)) + 1;
    taps[a] = taps_for_axis(v.dims[a], v.spacing[a], out_dims[a], t);
  }
  Volume out(out_dims, {t, t, t}, 0.0);
  auto sample = [&](std::size_t x, std::size_t y, std::size_t z) {
    return v.at(std::min(x, v.dims[0] - 1), std::min(y, v.dims[1] - 1), std::min(z, v.dims[2] - 1));
  };
  for (std::size_t z = 0; z < out_dims[2]; ++z) {
    const Tap tz = taps[2][z];
    for (std::size_t y = 0; y < out_dims[1]; ++y) {
      const Tap ty = taps[1][y];
      for (std::size_t x = 0; x < out_dims[0]; ++x) {
        const Tap tx = taps[0][x];
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          const double wz = dz ? tz.frac : 1.0 - tz.frac;
          if (wz == 0.0) continue;
          for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? ty.frac : 1.0 - ty.frac;
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const double wx = dx ? tx.frac : 1.0 - tx.frac;
              if (wx == 0.0) continue;
              acc += wz * wy * wx * sample(tx.lo + dx, ty.lo + dy, tz.lo + dz);
            }
          }
        }
        out.at(x, y, z) = acc;
      }
    }
  }
  return out;
}

Volume crop_patch(const Volume& v, std::array<double, 3> center_mm, std::size_t size_vox) {
  v.validate();
  if (!v.is_isotropic(1e-6)) throw std::invalid_argument("crop_patch expects an isotropic volume");
  if (size_vox == 0) throw std::invalid_argument("patch size must be positive");
  std::array<long, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(v.dims[a] - 1) * v.spacing[a];
    if (center_mm[a] < -0.5 * v.spacing[a] || center_mm[a] > extent + 0.5 * v.spacing[a]) {
      throw std::invalid_argument("crop center lies outside the volume");
    }
    const long c = std::lround(center_mm[a] / v.spacing[a]);
    origin[a] = c - static_cast<long>(size_vox / 2);
  }
  Volume out({size_vox, size_vox, size_vox}, v.spacing, kAirHu);
  for (std::size_t z = 0; z < size_vox; ++z) {
    const long sz = origin[2] + static_cast<long>(z);
    if (sz < 0 || sz >= static_cast<long>(v.dims[2])) continue;
    for (std::size_t y = 0; y < size_vox; ++y) {
      const long sy = origin[1] + static_cast<long>(y);
      if (sy < 0 || sy >= static_cast<long>(v.dims[1])) continue;
      for (std::size_t x = 0; x < size_vox; ++x) {
        const long sx = origin[0] + static_cast<long>(x);
        if (sx < 0 || sx >= static_cast<long>(v.dims[0])) continue;
        out.at(x, y, z) = v.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), static_cast<std::size_t>(sz));
      }
    }
  }
  return out;
}

Augmentation draw_augmentation(Rng& rng, int max_jitter) {
  if (max_jitter < 0) throw std::invalid_argument("jitter bound must be non-negative");
  Augmentation aug;
  for (int a = 0; a < 3; ++a) aug.flip[a] = rng.bernoulli(0.5);
  for (int a = 0; a < 3; ++a) aug.shift[a] = static_cast<int>(rng.integer(-max_jitter, max_jitter));
  return aug;
}

Volume apply_augmentation(const Volume& patch, const Augmentation& aug) {
  patch.validate();
  Volume out(patch.dims, patch.spacing, kAirHu);
  const std::array<long, 3> n{static_cast<long>(patch.dims[0]), static_cast<long>(patch.dims[1]),
                              static_cast<long>(patch.dims[2])};
  for (long z = 0; z < n[2]; ++z) {
    for (long y = 0; y < n[1]; ++y) {
      for (long x = 0; x < n[0]; ++x) {
        std::array<long, 3> src{x - aug.shift[0], y - aug.shift[1], z - aug.shift[2]};
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          if (src[a] < 0 || src[a] >= n[a]) inside = false;
          else if (aug.flip[a]) src[a] = n[a] - 1 - src[a];
        }
        if (!inside) continue;
        out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) =
            patch.at(static_cast<std::size_t>(src[0]), static_cast<std::size_t>(src[1]), static_cast<std::size_t>(src[2]));
      }
    }
  }
  return out;
}

Volume augment(const Volume& patch, Rng& rng, int max_jitter) {
  return apply_augmentation(patch, draw_augmentation(rng, max_jitter));
}

double normalize_hu(double hu) {
  const double c = std::clamp(hu, kWindowLowHu, kWindowHighHu);
  return (c - kWindowLowHu) / (kWindowHighHu - kWindowLowHu);
}

Tensor normalize_intensity(const Volume& patch) {
  patch.validate();
  std::vector<double> values(patch.size());
  std::transform(patch.voxels.begin(), patch.voxels.end(), values.begin(), normalize_hu);
  return Tensor::from({1, patch.dims[2], patch.dims[1], patch.dims[0]}, std::move(values));
}

}  // namespace nb
