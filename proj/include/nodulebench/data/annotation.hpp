#pragma once

#include <array>
#include <string>

#include <nlohmann/json.hpp>

namespace nb {

// Index order matches the density head's class order.
enum class Density { SN = 0, PSN = 1, GGN = 2 };
enum class Lobe { RUL, RML, RLL, LUL, LLL };
enum class Pathology { benign = 0, malignant = 1 };

std::string to_string(Density d);
std::string to_string(Lobe l);
std::string to_string(Pathology p);
Density density_from_string(const std::string& s);
Lobe lobe_from_string(const std::string& s);
Pathology pathology_from_string(const std::string& s);

inline constexpr double kMinDiameterMm = 4.0;
inline constexpr double kMaxDiameterMm = 30.0;

struct NoduleAnnotation {
  std::string nodule_id;
  std::array<double, 3> center_mm{0, 0, 0};
  double diameter_mm = 10.0;
  Density density = Density::SN;
  bool lobulation = false;
  bool spiculation = false;
  Lobe lobe = Lobe::RUL;
  Pathology pathology = Pathology::benign;

  void validate() const;
};

void to_json(nlohmann::json& j, const NoduleAnnotation& n);
void from_json(const nlohmann::json& j, NoduleAnnotation& n);

}  // namespace nb
