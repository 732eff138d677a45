#include "nodulebench/data/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nb {

namespace {

using Vec3 = std::array<double, 3>;

constexpr double kEdgeMm = 1.0;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 axpy(const Vec3& base, double s, const Vec3& dir) {
  return {base[0] + s * dir[0], base[1] + s * dir[1], base[2] + s * dir[2]};
}

Vec3 random_direction(Rng& rng) {
  for (;;) {
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(d);
    if (n > 1e-6) return {d[0] / n, d[1] / n, d[2] / n};
  }
}

// Linear ramp of width kEdgeMm across the surface (approximate signed distance d).
double soft(double d) { return std::clamp(0.5 - d / kEdgeMm, 0.0, 1.0); }

double ellipsoid_distance(const Vec3& p, const Primitive& e) {
  const Vec3 r = sub(p, e.center);
  const Vec3 q{r[0] / e.axes[0], r[1] / e.axes[1], r[2] / e.axes[2]};
  const double min_axis = std::min({e.axes[0], e.axes[1], e.axes[2]});
  return (norm(q) - 1.0) * min_axis;
}

double sphere_distance(const Vec3& p, const Primitive& s) { return norm(sub(p, s.center)) - s.axes[0]; }

// Tapered capsule from `center` along `direction`; radius shrinks to 40% at the tip.
double spike_distance(const Vec3& p, const Primitive& s) {
  const double t = std::clamp(dot(sub(p, s.center), s.direction) / s.length, 0.0, 1.0);
  const Vec3 closest = axpy(s.center, t * s.length, s.direction);
  return norm(sub(p, closest)) - s.axes[0] * (1.0 - 0.6 * t);
}

double body_hu(Density d) { return d == Density::SN ? kSolidHu : kGroundGlassHu; }

}  // namespace

std::size_t GeometryLog::count(const std::string& kind) const {
  return static_cast<std::size_t>(
      std::count_if(primitives.begin(), primitives.end(), [&](const Primitive& p) { return p.kind == kind; }));
}

void to_json(nlohmann::json& j, const Primitive& p) {
  j = {{"kind", p.kind}, {"center", p.center}, {"axes", p.axes}};
  if (p.kind == "spike") {
    j["direction"] = p.direction;
    j["length"] = p.length;
  }
}

void to_json(nlohmann::json& j, const GeometryLog& g) {
  j = nlohmann::json::array();
  for (const auto& p : g.primitives) j.push_back(p);
}

Phantom generate_phantom(const PhantomSpec& spec) {
  const double r = spec.diameter_mm / 2.0;
  if (spec.diameter_mm < kMinDiameterMm || spec.diameter_mm > kMaxDiameterMm) {
    throw std::invalid_argument("phantom diameter outside [4, 30] mm");
  }
  if (r + 4.0 > spec.cube_mm / 2.0) throw std::invalid_argument("phantom diameter exceeds the cube extent");
  if (!(spec.background_noise_sd >= 0.0)) throw std::invalid_argument("noise sd must be non-negative");

  Rng rng(spec.rng_seed);
  Phantom out;
  std::array<std::size_t, 3> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = static_cast<std::size_t>(std::lround(spec.cube_mm / spec.spacing[a]));
  out.volume = Volume(dims, spec.spacing, kLungBackgroundHu);

  Vec3 center{};
  for (int a = 0; a < 3; ++a) center[a] = static_cast<double>(dims[a] - 1) * spec.spacing[a] / 2.0 + rng.uniform(-2.0, 2.0);

  Primitive body{"body", center, {r * rng.uniform(0.85, 1.15), r * rng.uniform(0.85, 1.15), r * rng.uniform(0.85, 1.15)}};
  std::vector<Primitive> blobs{body};
  if (spec.lobulation) {
    const auto lobes = rng.integer(2, 4);
    for (std::int64_t i = 0; i < lobes; ++i) {
      const Vec3 dir = random_direction(rng);
      blobs.push_back({"lobe", axpy(center, 0.75 * r, dir), {r * rng.uniform(0.45, 0.6), 0, 0}});
    }
  }
  std::vector<Primitive> cores;
  if (spec.density == Density::PSN) cores.push_back({"core", center, {r * rng.uniform(0.4, 0.55), 0, 0}});
  std::vector<Primitive> spikes;
  if (spec.spiculation) {
    const auto n = rng.integer(4, 8);
    const double reach_cap = spec.cube_mm / 2.0 - 1.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const Vec3 dir = random_direction(rng);
      const double length = std::min(0.2 * r + r * rng.uniform(0.5, 0.9), reach_cap - 0.8 * r);
      spikes.push_back({"spike", axpy(center, 0.8 * r, dir), {1.0, 0, 0}, dir, length});
    }
  }

  const double target = body_hu(spec.density);
  auto& vol = out.volume;
  for (std::size_t z = 0; z < dims[2]; ++z) {
    for (std::size_t y = 0; y < dims[1]; ++y) {
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const Vec3 p{static_cast<double>(x) * spec.spacing[0], static_cast<double>(y) * spec.spacing[1],
                     static_cast<double>(z) * spec.spacing[2]};
        double v = kLungBackgroundHu;
        double m = soft(ellipsoid_distance(p, body));
        for (std::size_t i = 1; i < blobs.size(); ++i) m = std::max(m, soft(sphere_distance(p, blobs[i])));
        v += m * (target - v);
        for (const auto& c : cores) v += soft(sphere_distance(p, c)) * (kSolidHu - v);
        double ms = 0.0;
        for (const auto& s : spikes) ms = std::max(ms, soft(spike_distance(p, s)));
        v += ms * (std::max(kSpikeHu, v) - v);
        vol.at(x, y, z) = v + spec.background_noise_sd * rng.normal();
      }
    }
  }

  auto& g = out.geometry.primitives;
  g.insert(g.end(), blobs.begin(), blobs.end());
  g.insert(g.end(), cores.begin(), cores.end());
  g.insert(g.end(), spikes.begin(), spikes.end());

  auto& a = out.annotation;
  a.center_mm = center;
  a.diameter_mm = spec.diameter_mm;
  a.density = spec.density;
  a.lobulation = spec.lobulation;
  a.spiculation = spec.spiculation;
  a.lobe = spec.lobe;
  a.pathology = spec.pathology;
  return out;
}

PhantomSpec draw_phantom_spec(Pathology pathology, Rng& rng) {
  PhantomSpec s;
  s.pathology = pathology;
  const double u = rng.uniform();
  if (pathology == Pathology::malignant) {
    s.spiculation = rng.bernoulli(0.96);
    s.lobulation = rng.bernoulli(0.75);
    s.density = u < 0.2 ? Density::SN : (u < 0.7 ? Density::PSN : Density::GGN);
    s.diameter_mm = rng.uniform(12.0, 24.0);
  } else {
    s.spiculation = rng.bernoulli(0.01);
    s.lobulation = rng.bernoulli(0.2);
    s.density = u < 0.65 ? Density::SN : (u < 0.67 ? Density::PSN : Density::GGN);
    s.diameter_mm = rng.uniform(5.0, 14.0);
  }
  s.lobe = static_cast<Lobe>(rng.integer(0, 4));
  s.rng_seed = rng.next_u64();
  return s;
}

double core_mean_hu(const Volume& v, const NoduleAnnotation& a) {
  const double radius = 0.6 * a.diameter_mm / 2.0;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t z = 0; z < v.dims[2]; ++z) {
    for (std::size_t y = 0; y < v.dims[1]; ++y) {
      for (std::size_t x = 0; x < v.dims[0]; ++x) {
        const Vec3 p{static_cast<double>(x) * v.spacing[0], static_cast<double>(y) * v.spacing[1],
                     static_cast<double>(z) * v.spacing[2]};
        if (norm(sub(p, a.center_mm)) <= radius) {
          total += v.at(x, y, z);
          ++n;
        }
      }
    }
  }
  if (n == 0) throw std::invalid_argument("core ball contains no voxel centers");
  return total / static_cast<double>(n);
}

Pathology phantom_rule_call(const Volume& v, const NoduleAnnotation& a, const GeometryLog& g) {
  if (g.count("spike") >= 4) return Pathology::malignant;
  const double core = core_mean_hu(v, a);
  const bool part_solid = core > -500.0 && core < -100.0;
  return part_solid ? Pathology::malignant : Pathology::benign;
}

}  // namespace nb
