#include "nodulebench/trial/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>
#include <stdexcept>

namespace nb {

std::string to_string(Group g) { return g == Group::A ? "A" : "B"; }
std::string to_string(Arm a) { return a == Arm::assisted ? "assisted" : "unassisted"; }
std::string to_string(Call c) { return c == Call::malignant ? "malignant" : "benign"; }

Group group_from_string(const std::string& s) {
  if (s == "A") return Group::A;
  if (s == "B") return Group::B;
  throw std::invalid_argument("unknown group '" + s + "'");
}

Arm arm_from_string(const std::string& s) {
  if (s == "unassisted") return Arm::unassisted;
  if (s == "assisted") return Arm::assisted;
  throw std::invalid_argument("unknown arm '" + s + "'");
}

Call call_from_string(const std::string& s) {
  if (s == "benign") return Call::benign;
  if (s == "malignant") return Call::malignant;
  throw std::invalid_argument("unknown call '" + s + "'");
}

Arm arm_for(Group g, int round) {
  if (round != 1 && round != 2) throw std::invalid_argument("round must be 1 or 2");
  const bool first_unassisted = g == Group::A;
  return (round == 1) == first_unassisted ? Arm::unassisted : Arm::assisted;
}

bool Box::inside(const std::array<std::size_t, 3>& dims) const {
  for (std::size_t k = 0; k < 3; ++k) {
    if (lo[k] < 0 || hi[k] <= lo[k] || hi[k] > static_cast<std::int64_t>(dims[k])) return false;
  }
  return true;
}

std::array<double, 3> Box::center_mm(const std::array<double, 3>& spacing) const {
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = 0.5 * static_cast<double>(lo[k] + hi[k] - 1) * spacing[k];
  return c;
}

Box box_around(const NoduleAnnotation& a, const std::array<double, 3>& spacing) {
  Box b;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto centre = static_cast<std::int64_t>(std::lround(a.center_mm[k] / spacing[k]));
    const auto half = static_cast<std::int64_t>(std::ceil(0.5 * a.diameter_mm / spacing[k]));
    b.lo[k] = centre - half;
    b.hi[k] = centre + half + 1;
  }
  return b;
}

void TrialConfig::validate() const {
  if (readers.size() < 2) throw std::invalid_argument("trial needs at least two readers");
  if (cases.empty()) throw std::invalid_argument("trial case pool is empty");
  if (washout_days < 0) throw std::invalid_argument("washout_days must be non-negative");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must lie in [0, 1]");
  std::set<std::string> ids;
  for (const auto& r : readers) {
    if (r.reader_id.empty()) throw std::invalid_argument("empty reader id");
    if (!ids.insert(r.reader_id).second) throw std::invalid_argument("reader '" + r.reader_id + "' listed more than once");
  }
  ids.clear();
  for (const auto& c : cases) {
    if (c.case_id.empty()) throw std::invalid_argument("empty case id");
    if (!ids.insert(c.case_id).second) throw std::invalid_argument("duplicate case '" + c.case_id + "'");
  }
}

std::uint64_t TrialConfig::order_seed(std::size_t reader_index) const {
  const auto& r = readers.at(reader_index);
  return r.order_seed ? *r.order_seed : splitmix64(seed ^ fnv1a64(r.reader_id));
}

bool score_in_band(Call call, int score) {
  return call == Call::benign ? (score >= 1 && score <= 5) : (score >= 6 && score <= 10);
}

void to_json(nlohmann::json& j, const Box& b) { j = {{"lo", b.lo}, {"hi", b.hi}}; }

void from_json(const nlohmann::json& j, Box& b) {
  j.at("lo").get_to(b.lo);
  j.at("hi").get_to(b.hi);
}

void to_json(nlohmann::json& j, const TrialCase& c) {
  j = {{"case_id", c.case_id},         {"patient_id", c.patient_id}, {"nodule_id", c.nodule_id},
       {"volume_path", c.volume_path}, {"hint_box", c.hint_box},     {"malignant", c.malignant},
       {"diameter_mm", c.diameter_mm}, {"density", c.density},       {"lobe", c.lobe}};
}

void from_json(const nlohmann::json& j, TrialCase& c) {
  j.at("case_id").get_to(c.case_id);
  c.patient_id = j.value("patient_id", c.case_id);
  c.nodule_id = j.value("nodule_id", c.case_id);
  c.volume_path = j.value("volume_path", "");
  j.at("hint_box").get_to(c.hint_box);
  j.at("malignant").get_to(c.malignant);
  c.diameter_mm = j.value("diameter_mm", 0.0);
  c.density = j.value("density", "");
  c.lobe = j.value("lobe", "");
}

void to_json(nlohmann::json& j, const ReaderSpec& r) {
  j = {{"reader_id", r.reader_id}, {"group", to_string(r.group)}};
  if (r.order_seed) j["order_seed"] = *r.order_seed;
}

void from_json(const nlohmann::json& j, ReaderSpec& r) {
  j.at("reader_id").get_to(r.reader_id);
  r.group = group_from_string(j.at("group").get<std::string>());
  if (j.contains("order_seed")) r.order_seed = j.at("order_seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const TrialConfig& c) {
  j = {{"name", c.name},       {"cases", c.cases},           {"readers", c.readers},     {"washout_days", c.washout_days},
       {"seed", c.seed},       {"checkpoint", c.checkpoint}, {"threshold", c.threshold}};
}

void from_json(const nlohmann::json& j, TrialConfig& c) {
  c.name = j.value("name", "");
  j.at("cases").get_to(c.cases);
  j.at("readers").get_to(c.readers);
  c.washout_days = j.value("washout_days", 28);
  c.seed = j.value("seed", std::uint64_t{0});
  c.checkpoint = j.value("checkpoint", "");
  c.threshold = j.value("threshold", 0.5);
}

void to_json(nlohmann::json& j, const ReadingEvent& e) {
  j = {{"reader_id", e.reader_id}, {"round", e.round},         {"arm", to_string(e.arm)}, {"case_id", e.case_id},
       {"nodule_id", e.nodule_id}, {"box", e.box},             {"call", to_string(e.call)}, {"score", e.score},
       {"ai_shown", e.ai_shown},   {"served_at", e.served_at}, {"submitted_at", e.submitted_at}};
}

void from_json(const nlohmann::json& j, ReadingEvent& e) {
  j.at("reader_id").get_to(e.reader_id);
  j.at("round").get_to(e.round);
  e.arm = arm_from_string(j.at("arm").get<std::string>());
  j.at("case_id").get_to(e.case_id);
  e.nodule_id = j.value("nodule_id", e.case_id);
  j.at("box").get_to(e.box);
  e.call = call_from_string(j.at("call").get<std::string>());
  j.at("score").get_to(e.score);
  e.ai_shown = j.value("ai_shown", false);
  e.served_at = j.value("served_at", std::int64_t{0});
  e.submitted_at = j.value("submitted_at", std::int64_t{0});
}

std::string iso8601(std::int64_t seconds) {
  const std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

TrialConfig trial_config_from_manifest(const DatasetManifest& m, const std::filesystem::path& dataset_dir, Split split,
                                       std::size_t case_count, std::size_t readers, std::uint64_t seed) {
  TrialConfig cfg;
  cfg.name = "phantom-" + to_string(split);
  cfg.seed = seed;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    const Volume v = read_volume(dataset_dir / e.volume_path);
    for (const auto& n : e.nodules) {
      if (cfg.cases.size() == case_count) break;
      TrialCase c;
      c.case_id = n.nodule_id;
      c.patient_id = e.patient_id;
      c.nodule_id = n.nodule_id;
      c.volume_path = e.volume_path;
      c.hint_box = box_around(n, v.spacing);
      for (std::size_t k = 0; k < 3; ++k) {
        c.hint_box.lo[k] = std::max<std::int64_t>(c.hint_box.lo[k], 0);
        c.hint_box.hi[k] = std::min<std::int64_t>(c.hint_box.hi[k], static_cast<std::int64_t>(v.dims[k]));
      }
      c.malignant = n.pathology == Pathology::malignant;
      c.diameter_mm = n.diameter_mm;
      c.density = to_string(n.density);
      c.lobe = to_string(n.lobe);
      cfg.cases.push_back(std::move(c));
    }
    if (cfg.cases.size() == case_count) break;
  }
  if (cfg.cases.size() < case_count) {
    throw std::invalid_argument("split " + to_string(split) + " has only " + std::to_string(cfg.cases.size()) + " nodules");
  }
  for (std::size_t i = 0; i < readers; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "r%02zu", i + 1);
    cfg.readers.push_back({id, i % 2 == 0 ? Group::A : Group::B, std::nullopt});
  }
  return cfg;
}

}  // namespace nb
