#include "nodulebench/data/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nodulebench/data/phantom.hpp"

namespace nb {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  throw std::invalid_argument("bad split");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void DatasetManifest::validate() const {
  std::set<std::string> patients, nodules;
  for (const auto& e : entries) {
    if (!patients.insert(e.patient_id).second) throw std::invalid_argument("duplicate patient " + e.patient_id);
    for (const auto& n : e.nodules) {
      n.validate();
      if (!nodules.insert(n.nodule_id).second) throw std::invalid_argument("duplicate nodule " + n.nodule_id);
    }
  }
}

std::size_t DatasetManifest::nodule_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.nodules.size();
  return n;
}

std::size_t DatasetManifest::nodule_count(Split s) const {
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (e.split == s) n += e.nodules.size();
  }
  return n;
}

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"patient_id", e.patient_id}, {"volume", e.volume_path}, {"split", to_string(e.split)}, {"nodules", e.nodules}};
}

void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.patient_id = j.at("patient_id").get<std::string>();
  e.volume_path = j.at("volume").get<std::string>();
  e.split = split_from_string(j.at("split").get<std::string>());
  e.nodules = j.at("nodules").get<std::vector<NoduleAnnotation>>();
}

std::string serialize_manifest(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    out += nlohmann::json(e).dump();
    out.push_back('\n');
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.entries.push_back(nlohmann::json::parse(line).get<ManifestEntry>());
  }
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw std::runtime_error("cannot read manifest in " + dir.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"nodules", c.nodules},   {"malignant_fraction", c.malignant_fraction}, {"paired_fraction", c.paired_fraction},
       {"noise_sd", c.noise_sd}, {"cube_mm", c.cube_mm},                       {"spacing", c.spacing},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  DatasetConfig d;
  c.nodules = j.value("nodules", d.nodules);
  c.malignant_fraction = j.value("malignant_fraction", d.malignant_fraction);
  c.paired_fraction = j.value("paired_fraction", d.paired_fraction);
  c.noise_sd = j.value("noise_sd", d.noise_sd);
  c.cube_mm = j.value("cube_mm", d.cube_mm);
  c.spacing = j.value("spacing", d.spacing);
  c.seed = j.value("seed", d.seed);
}

std::vector<Split> assign_splits(const std::vector<bool>& patient_malignant, Rng& rng) {
  std::vector<Split> splits(patient_malignant.size(), Split::train);
  for (bool stratum : {false, true}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < patient_malignant.size(); ++i) {
      if (patient_malignant[i] == stratum) members.push_back(i);
    }
    rng.shuffle(members.begin(), members.end());
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::lround(0.7 * n));
    const auto n_val = static_cast<std::size_t>(std::lround(0.1 * n));
    for (std::size_t k = 0; k < members.size(); ++k) {
      splits[members[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::validation : Split::test);
    }
  }
  return splits;
}

namespace {

std::string padded_id(const char* prefix, std::size_t i) {
  std::ostringstream ss;
  ss << prefix << std::setw(4) << std::setfill('0') << i;
  return ss.str();
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& c, const std::filesystem::path& out_dir) {
  if (c.nodules == 0) throw std::invalid_argument("dataset needs at least one nodule");
  if (c.malignant_fraction < 0.0 || c.malignant_fraction > 1.0 || c.paired_fraction < 0.0 || c.paired_fraction > 1.0) {
    throw std::invalid_argument("dataset fractions must lie in [0, 1]");
  }
  Rng rng(c.seed);
  std::vector<Pathology> classes(c.nodules, Pathology::benign);
  const auto n_malignant = static_cast<std::size_t>(std::lround(c.malignant_fraction * static_cast<double>(c.nodules)));
  for (std::size_t i = 0; i < n_malignant; ++i) classes[i] = Pathology::malignant;
  rng.shuffle(classes.begin(), classes.end());

  // Patient sizes: the first paired nodules go to two-nodule patients.
  std::size_t paired = static_cast<std::size_t>(std::lround(c.paired_fraction * static_cast<double>(c.nodules)));
  paired -= paired % 2;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < paired / 2; ++i) sizes.push_back(2);
  for (std::size_t i = paired; i < c.nodules; ++i) sizes.push_back(1);

  std::filesystem::create_directories(out_dir / "volumes");
  DatasetManifest manifest;
  std::vector<bool> malignant;
  std::string geometry_lines;
  std::size_t next = 0;
  for (std::size_t p = 0; p < sizes.size(); ++p) {
    ManifestEntry entry;
    entry.patient_id = padded_id("P", p + 1);
    entry.volume_path = "volumes/" + entry.patient_id + ".vol";
    Volume patient;
    bool any_malignant = false;
    for (std::size_t k = 0; k < sizes[p]; ++k, ++next) {
      Rng nodule_rng = rng.split(next);
      PhantomSpec spec = draw_phantom_spec(classes[next], nodule_rng);
      spec.background_noise_sd = c.noise_sd;
      spec.cube_mm = c.cube_mm;
      spec.spacing = c.spacing;
      Phantom ph = generate_phantom(spec);
      const auto& cube = ph.volume;
      if (k == 0) {
        patient = Volume({cube.dims[0] * sizes[p], cube.dims[1], cube.dims[2]}, cube.spacing, 0.0);
      }
      const std::size_t x0 = k * cube.dims[0];
      for (std::size_t z = 0; z < cube.dims[2]; ++z)
        for (std::size_t y = 0; y < cube.dims[1]; ++y)
          for (std::size_t x = 0; x < cube.dims[0]; ++x) patient.at(x0 + x, y, z) = cube.at(x, y, z);
      NoduleAnnotation a = ph.annotation;
      a.nodule_id = entry.patient_id + "-N" + std::to_string(k + 1);
      a.center_mm[0] += static_cast<double>(x0) * cube.spacing[0];
      any_malignant = any_malignant || a.pathology == Pathology::malignant;
      geometry_lines += nlohmann::json{{"nodule_id", a.nodule_id}, {"primitives", ph.geometry}}.dump() + "\n";
      entry.nodules.push_back(a);
    }
    write_volume(out_dir / entry.volume_path, patient);
    malignant.push_back(any_malignant);
    manifest.entries.push_back(std::move(entry));
  }
  Rng split_rng = rng.split(0xC0FFEE);
  const auto splits = assign_splits(malignant, split_rng);
  for (std::size_t p = 0; p < splits.size(); ++p) manifest.entries[p].split = splits[p];
  manifest.validate();

  auto write_text = [&](const char* name, const std::string& text) {
    std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(std::string("cannot write ") + name);
    out << text;
  };
  write_text(kManifestFile, serialize_manifest(manifest));
  write_text(kGeometryFile, geometry_lines);
  write_text("dataset.json", nlohmann::json(c).dump(2) + "\n");
  return manifest;
}

std::vector<PreparedNodule> prepare_patient(const Volume& patient_volume, const ManifestEntry& entry, double spacing_mm,
                                            std::size_t size_vox) {
  const Volume iso = resample_isotropic(patient_volume, spacing_mm);
  std::vector<PreparedNodule> out;
  for (const auto& a : entry.nodules) out.push_back({entry.patient_id, a, crop_patch(iso, a.center_mm, size_vox)});
  return out;
}

std::vector<PreparedNodule> prepare_split(const DatasetManifest& m, const std::filesystem::path& dir, Split split,
                                          double spacing_mm, std::size_t size_vox) {
  std::vector<PreparedNodule> out;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    auto nodules = prepare_patient(read_volume(dir / e.volume_path), e, spacing_mm, size_vox);
    for (auto& n : nodules) out.push_back(std::move(n));
  }
  return out;
}

}  // namespace nb
