#include "nodulebench/data/annotation.hpp"

#include <stdexcept>

namespace nb {

std::string to_string(Density d) {
  switch (d) {
    case Density::SN: return "SN";
    case Density::PSN: return "PSN";
    case Density::GGN: return "GGN";
  }
  throw std::invalid_argument("bad density");
}

std::string to_string(Lobe l) {
  switch (l) {
    case Lobe::RUL: return "RUL";
    case Lobe::RML: return "RML";
    case Lobe::RLL: return "RLL";
    case Lobe::LUL: return "LUL";
    case Lobe::LLL: return "LLL";
  }
  throw std::invalid_argument("bad lobe");
}

std::string to_string(Pathology p) { return p == Pathology::malignant ? "malignant" : "benign"; }

Density density_from_string(const std::string& s) {
  if (s == "SN") return Density::SN;
  if (s == "PSN") return Density::PSN;
  if (s == "GGN") return Density::GGN;
  throw std::invalid_argument("unknown density '" + s + "'");
}

Lobe lobe_from_string(const std::string& s) {
  for (Lobe l : {Lobe::RUL, Lobe::RML, Lobe::RLL, Lobe::LUL, Lobe::LLL}) {
    if (to_string(l) == s) return l;
  }
  throw std::invalid_argument("unknown lobe '" + s + "'");
}

Pathology pathology_from_string(const std::string& s) {
  if (s == "benign") return Pathology::benign;
  if (s == "malignant") return Pathology::malignant;
  throw std::invalid_argument("unknown pathology '" + s + "'");
}

void NoduleAnnotation::validate() const {
  if (diameter_mm < kMinDiameterMm || diameter_mm > kMaxDiameterMm) {
    throw std::invalid_argument("nodule diameter " + std::to_string(diameter_mm) + " mm outside [4, 30]");
  }
}

void to_json(nlohmann::json& j, const NoduleAnnotation& n) {
  j = {{"nodule_id", n.nodule_id},
       {"center_mm", n.center_mm},
       {"diameter_mm", n.diameter_mm},
       {"density", to_string(n.density)},
       {"lobulation", n.lobulation},
       {"spiculation", n.spiculation},
       {"lobe", to_string(n.lobe)},
       {"pathology", to_string(n.pathology)}};
}

void from_json(const nlohmann::json& j, NoduleAnnotation& n) {
  n.nodule_id = j.at("nodule_id").get<std::string>();
  n.center_mm = j.at("center_mm").get<std::array<double, 3>>();
  n.diameter_mm = j.at("diameter_mm").get<double>();
  n.density = density_from_string(j.at("density").get<std::string>());
  n.lobulation = j.at("lobulation").get<bool>();
  n.spiculation = j.at("spiculation").get<bool>();
  n.lobe = lobe_from_string(j.at("lobe").get<std::string>());
  n.pathology = pathology_from_string(j.at("pathology").get<std::string>());
}

}  // namespace nb
