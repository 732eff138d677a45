#include "nodulebench/trial/readings.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nb {

std::string serialize_readings(const ReadingsFile& f) {
  nlohmann::json header = {{"type", "header"},      {"schema", kReadingsSchema}, {"trial_id", f.trial_id},
                           {"name", f.name},        {"readers", f.readers},      {"cases", f.case_ids},
                           {"readings", f.rows.size()}};
  std::string out = header.dump() + "\n";
  for (const auto& r : f.rows) {
    nlohmann::json j = r.event;
    j["type"] = "reading";
    j["group"] = to_string(r.group);
    j["patient_id"] = r.patient_id;
    j["malignant"] = r.malignant;
    j["diameter_mm"] = r.diameter_mm;
    j["density"] = r.density;
    j["lobe"] = r.lobe;
    if (r.ai_class) j["ai_class"] = to_string(*r.ai_class);
    out += j.dump() + "\n";
  }
  return out;
}

ReadingsFile parse_readings(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  ReadingsFile f;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t declared = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (!have_header) {
        if (type != "header") throw std::invalid_argument("first line is not a header");
        if (j.at("schema").get<std::string>() != kReadingsSchema) throw std::invalid_argument("unsupported schema");
        j.at("trial_id").get_to(f.trial_id);
        f.name = j.value("name", "");
        j.at("readers").get_to(f.readers);
        j.at("cases").get_to(f.case_ids);
        declared = j.value("readings", std::size_t{0});
        have_header = true;
        continue;
      }
      if (type != "reading") throw std::invalid_argument("unknown record type '" + type + "'");
      ReadingRow r;
      r.event = j.get<ReadingEvent>();
      r.group = group_from_string(j.at("group").get<std::string>());
      j.at("patient_id").get_to(r.patient_id);
      j.at("malignant").get_to(r.malignant);
      r.diameter_mm = j.value("diameter_mm", 0.0);
      r.density = j.value("density", "");
      r.lobe = j.value("lobe", "");
      if (j.contains("ai_class")) r.ai_class = call_from_string(j.at("ai_class").get<std::string>());
      if (!score_in_band(r.event.call, r.event.score)) throw std::invalid_argument("score outside the band of its call");
      f.rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("readings line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("readings line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw std::invalid_argument("readings file has no header");
  if (declared != f.rows.size()) throw std::invalid_argument("header declares " + std::to_string(declared) + " readings, found " +
                                                             std::to_string(f.rows.size()));
  return f;
}

std::vector<ScoredCase> reader_cases(const ReadingsFile& f, const std::string& reader_id, Arm arm) {
  std::vector<ScoredCase> out;
  for (const auto& r : f.rows) {
    if (r.event.reader_id != reader_id || r.event.arm != arm) continue;
    out.push_back({r.event.case_id, r.patient_id, r.malignant, static_cast<double>(r.event.score), r.event.call == Call::malignant});
  }
  std::sort(out.begin(), out.end(), [](const ScoredCase& a, const ScoredCase& b) { return a.id < b.id; });
  return out;
}

std::vector<std::string> complete_readers(const ReadingsFile& f) {
  const std::set<std::string> pool(f.case_ids.begin(), f.case_ids.end());
  std::map<std::pair<std::string, Arm>, std::multiset<std::string>> seen;
  for (const auto& r : f.rows) seen[{r.event.reader_id, r.event.arm}].insert(r.event.case_id);
  std::vector<std::string> out;
  for (const auto& spec : f.readers) {
    bool complete = !pool.empty();
    for (Arm arm : {Arm::unassisted, Arm::assisted}) {
      const auto& got = seen[{spec.reader_id, arm}];
      complete = complete && got.size() == pool.size() && std::set<std::string>(got.begin(), got.end()) == pool;
    }
    if (complete) out.push_back(spec.reader_id);
  }
  return out;
}

}  // namespace nb
