#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/data/dataset.hpp"

namespace nb {

enum class Group { A, B };
enum class Arm { unassisted, assisted };
enum class Call { benign, malignant };

std::string to_string(Group g);
std::string to_string(Arm a);
std::string to_string(Call c);
Group group_from_string(const std::string& s);
Arm arm_from_string(const std::string& s);
Call call_from_string(const std::string& s);

inline constexpr int kRounds = 2;
inline constexpr std::int64_t kSecondsPerDay = 86400;

/// Group A reads unassisted in round 1 and assisted in round 2; group B the reverse.
Arm arm_for(Group g, int round);

/// Axis-aligned box in voxel indices of the case volume; hi is exclusive.
struct Box {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{0, 0, 0};

  bool operator==(const Box&) const = default;
  /// Nonempty and inside dims.
  bool inside(const std::array<std::size_t, 3>& dims) const;
  /// Physical centre in mm for the given voxel spacing.
  std::array<double, 3> center_mm(const std::array<double, 3>& spacing) const;
};

/// Box of the nodule's diameter around its centre, rounded outward to voxels.
Box box_around(const NoduleAnnotation& a, const std::array<double, 3>& spacing);

/// One trial case is one nodule. Ground truth and covariates never reach readers.
struct TrialCase {
  std::string case_id;
  std::string patient_id;
  std::string nodule_id;
  std::string volume_path;  // relative to the dataset directory
  Box hint_box;             // handbook location shown to readers
  bool malignant = false;
  double diameter_mm = 0.0;
  std::string density;
  std::string lobe;
};

struct ReaderSpec {
  std::string reader_id;
  Group group = Group::A;
  /// Seed of this reader's case orders; derived from the trial seed when absent.
  std::optional<std::uint64_t> order_seed;
};

struct TrialConfig {
  std::string name;
  std::vector<TrialCase> cases;
  std::vector<ReaderSpec> readers;
  int washout_days = 28;
  std::uint64_t seed = 0;
  std::string checkpoint;   // reference to the model checkpoint used for AI cards
  double threshold = 0.5;   // validation-selected decision threshold

  /// Throws std::invalid_argument on fewer than two readers, an empty case
  /// pool, duplicate reader or case ids, or a negative washout.
  void validate() const;
  std::uint64_t order_seed(std::size_t reader_index) const;
};

/// Risk score bands: 1-5 benign, 6-10 malignant.
bool score_in_band(Call call, int score);

struct ReadingEvent {
  std::string reader_id;
  int round = 1;
  Arm arm = Arm::unassisted;
  std::string case_id;
  std::string nodule_id;
  Box box;
  Call call = Call::benign;
  int score = 1;
  bool ai_shown = false;
  std::int64_t served_at = 0;     // seconds since the epoch
  std::int64_t submitted_at = 0;
};

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);
void to_json(nlohmann::json& j, const TrialCase& c);
void from_json(const nlohmann::json& j, TrialCase& c);
void to_json(nlohmann::json& j, const ReaderSpec& r);
void from_json(const nlohmann::json& j, ReaderSpec& r);
void to_json(nlohmann::json& j, const TrialConfig& c);
void from_json(const nlohmann::json& j, TrialConfig& c);
void to_json(nlohmann::json& j, const ReadingEvent& e);
void from_json(const nlohmann::json& j, ReadingEvent& e);

/// UTC "YYYY-MM-DDTHH:MM:SSZ".
std::string iso8601(std::int64_t seconds);

/// A trial over the first `case_count` nodules of `split`, readers r01..rNN
/// alternating between groups A and B.
TrialConfig trial_config_from_manifest(const DatasetManifest& m, const std::filesystem::path& dataset_dir, Split split,
                                       std::size_t case_count, std::size_t readers, std::uint64_t seed);

}  // namespace nb
