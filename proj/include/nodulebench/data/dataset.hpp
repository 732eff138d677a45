#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nodulebench/data/annotation.hpp"
#include "nodulebench/data/volume.hpp"

namespace nb {

enum class Split { train, validation, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string patient_id;
  std::string volume_path;  // relative to the dataset directory
  std::vector<NoduleAnnotation> nodules;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  /// Throws std::invalid_argument on duplicate patients or nodule ids.
  void validate() const;
  std::size_t nodule_count() const;
  std::size_t nodule_count(Split s) const;
};

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kGeometryFile = "geometry.jsonl";

/// One patient per line, in patient order.
std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

struct DatasetConfig {
  std::size_t nodules = 400;
  double malignant_fraction = 0.5;
  /// Fraction of nodules that belong to two-nodule patients.
  double paired_fraction = 0.0;
  double noise_sd = 25.0;
  double cube_mm = 48.0;
  std::array<double, 3> spacing{1.0, 1.0, 1.5};
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

/// Generates phantoms, writes volumes/<patient>.vol, manifest.jsonl,
/// geometry.jsonl and dataset.json under `out_dir`, and returns the manifest.
/// Patients are split 7:1:2 per class stratum (a patient is malignant when
/// any of its nodules is).
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

/// Patient-level stratified 7:1:2 assignment; exposed for testing.
std::vector<Split> assign_splits(const std::vector<bool>& patient_malignant, Rng& rng);

/// A preprocessed nodule-centered patch ready for the model.
struct PreparedNodule {
  std::string patient_id;
  NoduleAnnotation annotation;
  Volume patch;  // HU, isotropic, size^3
};

/// Loads each patient volume in `split`, resamples it to `spacing_mm`, and
/// crops a `size_vox`^3 patch around every nodule.
std::vector<PreparedNodule> prepare_split(const DatasetManifest& m, const std::filesystem::path& dataset_dir,
                                          Split split, double spacing_mm, std::size_t size_vox);
/// Same for one patient volume (any spacing).
std::vector<PreparedNodule> prepare_patient(const Volume& patient_volume, const ManifestEntry& entry,
                                            double spacing_mm, std::size_t size_vox);

}  // namespace nb
