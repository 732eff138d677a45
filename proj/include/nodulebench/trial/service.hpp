#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/trial/ai.hpp"
#include "nodulebench/trial/clock.hpp"
#include "nodulebench/trial/readings.hpp"
#include "nodulebench/trial/report.hpp"

namespace nb {

enum class TrialErrorCode { bad_request, not_found, conflict, washout, complete, unauthorized };

std::string to_string(TrialErrorCode c);

class TrialError : public std::runtime_error {
 public:
  TrialError(TrialErrorCode code, const std::string& what, std::optional<std::int64_t> eligible_at = std::nullopt)
      : std::runtime_error(what), code(code), eligible_at(eligible_at) {}
  TrialErrorCode code;
  std::optional<std::int64_t> eligible_at;  // set for washout refusals
};

/// What a reader is shown for one case. Holds no ground truth and no AI score.
struct Assignment {
  std::string trial_id;
  std::string reader_id;
  int round = 1;
  Arm arm = Arm::unassisted;
  std::string case_id;
  std::string nodule_id;
  Box hint_box;
  std::array<std::size_t, 3> dims{};
  std::array<double, 3> spacing{};
  std::optional<Call> ai_card;  // assisted arm only
  std::int64_t served_at = 0;
  std::size_t position = 0;  // 1-based within the round
  std::size_t total = 0;
};

/// Reader-facing JSON. The unassisted arm carries "ai_card": null.
nlohmann::json assignment_payload(const Assignment& a);

struct ReadingSubmission {
  std::string trial_id;
  std::string reader_id;
  int round = 1;
  std::string case_id;
  std::string nodule_id;  // defaults to the case's nodule when empty
  Box box;
  Call call = Call::benign;
  int score = 1;
};

void from_json(const nlohmann::json& j, ReadingSubmission& s);

struct Receipt {
  std::string trial_id;
  std::string reader_id;
  int round = 1;
  std::string case_id;
  std::uint64_t sequence = 0;  // line number of the record in the event log
  std::int64_t submitted_at = 0;
  std::size_t remaining = 0;   // cases left in this round
};

void to_json(nlohmann::json& j, const Receipt& r);

/// Per-reader session derived from the log.
struct SessionState {
  std::string reader_id;
  Group group = Group::A;
  int current_round = 1;  // 3 once both rounds are complete
  std::optional<std::int64_t> round1_completed_at;
  std::array<std::vector<std::string>, kRounds> order;  // seeded case order per round
  std::array<std::set<std::string>, kRounds> completed;
};

/// Operates crossover trials. Each trial is an append-only JSON-lines log at
/// state_dir/trials/<id>/events.jsonl; in-memory state is a fold over it and
/// is rebuilt on construction. All mutations go through one writer lock.
class TrialService {
 public:
  TrialService(std::filesystem::path state_dir, std::filesystem::path dataset_dir, std::shared_ptr<AiProvider> ai,
               std::shared_ptr<const Clock> clock, std::uint64_t token_secret = 0);
  ~TrialService();

  /// Throws TrialError(bad_request) for an invalid config.
  std::string create_trial(const TrialConfig& config);
  std::vector<std::string> trial_ids() const;
  TrialConfig config(const std::string& trial_id) const;
  SessionState session(const std::string& trial_id, const std::string& reader_id) const;

  std::string reader_token(const std::string& trial_id, const std::string& reader_id) const;
  bool token_valid(const std::string& trial_id, const std::string& reader_id, const std::string& token) const;

  /// Next uncompleted case in the reader's order, serving it on first request.
  /// Throws TrialError: washout (with eligible_at), complete, not_found.
  Assignment next_assignment(const std::string& trial_id, const std::string& reader_id);
  /// Throws TrialError: bad_request (band, box, round), conflict (duplicate),
  /// not_found (no such trial, reader or open assignment).
  Receipt record_reading(const ReadingSubmission& s);

  ReadingsFile readings(const std::string& trial_id) const;
  std::string export_trial(const std::string& trial_id) const;
  /// Runs the AI on every case's hint box for the model rows.
  TrialReport trial_report(const std::string& trial_id, const BootstrapOptions& options = {});
  /// AI result on the hint box of every case, in config order.
  std::vector<std::pair<TrialCase, AiResult>> ai_results(const std::string& trial_id);

  /// PNG of a slice of the volume holding `case_id` (searched across trials).
  std::string slice_png(const std::string& case_id, const std::string& axis, std::size_t index, const std::string& window);

 private:
  struct Trial;
  Trial& trial(const std::string& id);
  const Trial& trial(const std::string& id) const;
  void load(const std::filesystem::path& dir);
  void apply(Trial& t, const nlohmann::json& record);
  void append(Trial& t, const nlohmann::json& record);
  std::shared_ptr<const Volume> volume(const std::string& relative_path);
  AiResult ai_for(Trial& t, std::size_t case_index);

  std::filesystem::path state_dir_;
  std::filesystem::path dataset_dir_;
  std::shared_ptr<AiProvider> ai_;
  std::shared_ptr<const Clock> clock_;
  std::uint64_t token_secret_;
  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<Trial>> trials_;
  std::mutex volume_mutex_;
  std::map<std::string, std::shared_ptr<const Volume>> volumes_;
};

}  // namespace nb
