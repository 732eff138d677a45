#pragma once

#include <string>
#include <vector>

#include "nodulebench/trial/clock.hpp"
#include "nodulebench/trial/types.hpp"

namespace nb {

/// How a simulated reader uses the AI card in the assisted arm.
///   copy:   takes the AI class (score 8 malignant, 3 benign)
///   ignore: repeats the reading it would give without AI
///   noisy:  switches to a disagreeing AI class with probability adopt_probability
enum class ReaderProfile { copy, ignore, noisy };

std::string to_string(ReaderProfile p);
ReaderProfile profile_from_string(const std::string& s);

struct SimulationOptions {
  std::vector<ReaderProfile> profiles{ReaderProfile::noisy};  // cycled over the readers
  std::uint64_t seed = 0;
  double adopt_probability = 0.4;
  /// Reader accuracy without AI is Phi(skill).
  double skill = 1.0;
  std::int64_t seconds_per_reading = 60;
};

/// The unassisted reading of a case: latent = +-skill + N(0, 1) (sign from the
/// truth), score = clamp(round(5.5 + 2 latent), 1, 10), call from the score band.
/// Deterministic in (seed, reader, case).
struct SimulatedCall {
  Call call = Call::benign;
  int score = 1;
};
SimulatedCall base_reading(std::uint64_t seed, const std::string& reader_id, const TrialCase& c, double skill);
SimulatedCall assisted_reading(ReaderProfile p, const SimulatedCall& base, Call ai_card, std::uint64_t seed,
                               const std::string& reader_id, const std::string& case_id, double adopt_probability);

struct ServedPayload {
  std::string reader_id;
  int round = 1;
  Arm arm = Arm::unassisted;
  std::string body;  // raw HTTP response body
};

struct WashoutProbe {
  std::string reader_id;
  std::int64_t round1_completed_at = 0;
  int early_status = 0;          // request one day before the washout ends
  std::int64_t eligible_at = 0;  // as reported by the refusal
  int on_time_status = 0;        // request exactly when the washout ends
};

struct SimulationTranscript {
  std::string trial_id;
  std::vector<ServedPayload> payloads;
  std::vector<WashoutProbe> washout;
  std::size_t readings = 0;
};

/// Creates `config` on the server at host:port and runs every reader through
/// both rounds over HTTP. The server must share `clock`: the simulator moves it
/// forward by seconds_per_reading per reading, probes each reader one day
/// before and exactly at the end of its washout, then runs round 2.
/// Throws std::runtime_error on any unexpected HTTP response.
SimulationTranscript simulate_trial(const std::string& host, int port, const TrialConfig& config, ManualClock& clock,
                                    const SimulationOptions& options);

}  // namespace nb
