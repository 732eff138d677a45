#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nodulebench/stats/metrics.hpp"
#include "nodulebench/trial/types.hpp"

namespace nb {

inline constexpr const char* kReadingsSchema = "nodulebench-readings/1";

/// One reading joined with the truth and covariates of its case.
struct ReadingRow {
  ReadingEvent event;
  Group group = Group::A;
  std::string patient_id;
  bool malignant = false;
  double diameter_mm = 0.0;
  std::string density;
  std::string lobe;
  std::optional<Call> ai_class;  // present only when ai_shown
};

/// The readings file handed to the statistics layer: a header line, then
/// one JSON object per reading in log order.
struct ReadingsFile {
  std::string trial_id;
  std::string name;
  std::vector<ReaderSpec> readers;
  std::vector<std::string> case_ids;  // the full case pool, in config order
  std::vector<ReadingRow> rows;
};

std::string serialize_readings(const ReadingsFile& f);
/// Throws std::invalid_argument on a missing header, a foreign schema or a malformed row.
ReadingsFile parse_readings(const std::string& text);

/// One reader's readings in an arm as scored cases, ordered by case id.
/// Reader scores 1..10 are the ranking score; the call is the binary decision.
std::vector<ScoredCase> reader_cases(const ReadingsFile& f, const std::string& reader_id, Arm arm);

/// Readers holding exactly one reading per case in both arms.
std::vector<std::string> complete_readers(const ReadingsFile& f);

}  // namespace nb
