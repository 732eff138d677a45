#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/data/annotation.hpp"
#include "nodulebench/data/volume.hpp"

namespace nb {

struct PhantomSpec {
  Density density = Density::SN;
  bool lobulation = false;
  bool spiculation = false;
  double diameter_mm = 10.0;
  Pathology pathology = Pathology::benign;
  Lobe lobe = Lobe::RUL;
  double background_noise_sd = 25.0;
  std::uint64_t rng_seed = 0;
  /// Edge of the simulated cube and its (anisotropic) scanner spacing.
  double cube_mm = 48.0;
  std::array<double, 3> spacing{1.0, 1.0, 1.5};
};

/// One rendered shape. Positions are in mm relative to the cube origin.
struct Primitive {
  std::string kind;  // body, lobe, core, spike
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> axes{0, 0, 0};       // body semi-axes; lobe/core use axes[0] as radius
  std::array<double, 3> direction{0, 0, 0};  // spike only
  double length = 0.0;                       // spike only
};

struct GeometryLog {
  std::vector<Primitive> primitives;
  std::size_t count(const std::string& kind) const;
};

void to_json(nlohmann::json& j, const Primitive& p);
void to_json(nlohmann::json& j, const GeometryLog& g);

inline constexpr double kLungBackgroundHu = -850.0;
inline constexpr double kSolidHu = 0.0;
inline constexpr double kGroundGlassHu = -600.0;
inline constexpr double kSpikeHu = -100.0;

struct Phantom {
  Volume volume;
  NoduleAnnotation annotation;
  GeometryLog geometry;
};

/// Renders a single nodule into a lung-background cube. Identical specs give
/// bit-identical volumes.
Phantom generate_phantom(const PhantomSpec& spec);

/// Draws attributes from the class-conditional phantom distribution:
/// malignant nodules are mostly spiculated, larger and part-solid leaning;
/// benign nodules are small, smooth and mostly solid or ground glass.
PhantomSpec draw_phantom_spec(Pathology pathology, Rng& rng);

/// Mean HU inside a ball of 0.6 * radius around the annotated center.
double core_mean_hu(const Volume& v, const NoduleAnnotation& a);

/// Hand-coded reference classifier used to calibrate separability:
/// malignant iff the nodule has at least 4 spikes or a part-solid core.
Pathology phantom_rule_call(const Volume& v, const NoduleAnnotation& a, const GeometryLog& g);

}  // namespace nb
