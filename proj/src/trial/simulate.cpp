#include "nodulebench/trial/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "nodulebench/tensor/rng.hpp"

namespace nb {

std::string to_string(ReaderProfile p) {
  switch (p) {
    case ReaderProfile::copy: return "copy";
    case ReaderProfile::ignore: return "ignore";
    case ReaderProfile::noisy: return "noisy";
  }
  return "unknown";
}

ReaderProfile profile_from_string(const std::string& s) {
  if (s == "copy") return ReaderProfile::copy;
  if (s == "ignore") return ReaderProfile::ignore;
  if (s == "noisy") return ReaderProfile::noisy;
  throw std::invalid_argument("unknown reader profile '" + s + "'");
}

SimulatedCall base_reading(std::uint64_t seed, const std::string& reader_id, const TrialCase& c, double skill) {
  Rng rng(splitmix64(seed ^ fnv1a64(reader_id + "/" + c.case_id)));
  const double latent = (c.malignant ? skill : -skill) + rng.normal();
  const int score = static_cast<int>(std::clamp<long>(std::lround(5.5 + 2.0 * latent), 1, 10));
  return {score >= 6 ? Call::malignant : Call::benign, score};
}

SimulatedCall assisted_reading(ReaderProfile p, const SimulatedCall& base, Call ai_card, std::uint64_t seed,
                               const std::string& reader_id, const std::string& case_id, double adopt_probability) {
  switch (p) {
    case ReaderProfile::copy: return {ai_card, ai_card == Call::malignant ? 8 : 3};
    case ReaderProfile::ignore: return base;
    case ReaderProfile::noisy: {
      Rng rng(splitmix64(seed ^ fnv1a64("assist/" + reader_id + "/" + case_id)));
      if (base.call != ai_card && rng.bernoulli(adopt_probability)) return {ai_card, ai_card == Call::malignant ? 6 : 5};
      return base;
    }
  }
  return base;
}

namespace {

class Session {
 public:
  Session(const std::string& host, int port) : client_(host, port) {
    client_.set_read_timeout(600, 0);
  }

  httplib::Result get(const std::string& path, const std::string& token) {
    return check(client_.Get(path, {{"Authorization", "Bearer " + token}}), path);
  }

  httplib::Result post(const std::string& path, const nlohmann::json& body, const std::string& token) {
    return check(client_.Post(path, {{"Authorization", "Bearer " + token}}, body.dump(), "application/json"), path);
  }

 private:
  static httplib::Result check(httplib::Result r, const std::string& path) {
    if (!r) throw std::runtime_error("request to " + path + " failed: " + httplib::to_string(r.error()));
    return r;
  }
  httplib::Client client_;
};

[[noreturn]] void unexpected(const std::string& what, const httplib::Result& r) {
  throw std::runtime_error(what + ": HTTP " + std::to_string(r->status) + " " + r->body);
}

}  // namespace

SimulationTranscript simulate_trial(const std::string& host, int port, const TrialConfig& config, ManualClock& clock,
                                    const SimulationOptions& options) {
  if (options.profiles.empty()) throw std::invalid_argument("simulate_trial: no reader profiles");
  Session http(host, port);
  SimulationTranscript out;

  auto created = http.post("/trials", nlohmann::json(config), "");
  if (created->status != 201) unexpected("create trial", created);
  const auto created_body = nlohmann::json::parse(created->body);
  out.trial_id = created_body.at("trial_id").get<std::string>();
  std::map<std::string, std::string> tokens;
  for (const auto& r : created_body.at("readers")) tokens[r.at("reader_id").get<std::string>()] = r.at("token").get<std::string>();

  std::map<std::string, const TrialCase*> cases;
  for (const auto& c : config.cases) cases[c.case_id] = &c;
  std::map<std::string, ReaderProfile> profile;
  for (std::size_t i = 0; i < config.readers.size(); ++i) {
    profile[config.readers[i].reader_id] = options.profiles[i % options.profiles.size()];
  }

  auto next_path = [&](const std::string& reader) { return "/trials/" + out.trial_id + "/readers/" + reader + "/next"; };

  // Reads one served payload and submits. Returns the receipt.
  auto read_and_submit = [&](const std::string& reader, const std::string& body) {
    const auto a = nlohmann::json::parse(body);
    const int round = a.at("round").get<int>();
    const Arm arm = arm_from_string(a.at("arm").get<std::string>());
    out.payloads.push_back({reader, round, arm, body});
    const TrialCase& c = *cases.at(a.at("case_id").get<std::string>());
    SimulatedCall call = base_reading(options.seed, reader, c, options.skill);
    if (arm == Arm::assisted) {
      const Call card = call_from_string(a.at("ai_card").get<std::string>());
      call = assisted_reading(profile.at(reader), call, card, options.seed, reader, c.case_id, options.adopt_probability);
    }
    clock.advance(options.seconds_per_reading);
    const nlohmann::json sub = {{"trial_id", out.trial_id}, {"reader_id", reader},
                                {"round", round},           {"case_id", c.case_id},
                                {"nodule_id", a.at("nodule_id")}, {"box", a.at("hint_boxes").at(0).at("box")},
                                {"call", to_string(call.call)},   {"score", call.score}};
    auto r = http.post("/readings", sub, tokens.at(reader));
    if (r->status != 201) unexpected("submit reading", r);
    ++out.readings;
    return nlohmann::json::parse(r->body);
  };

  // Runs the reader's current round to its end; returns the last receipt time.
  auto run_round = [&](const std::string& reader, std::optional<std::string> first_body) {
    std::int64_t last = 0;
    for (;;) {
      std::string body;
      if (first_body) {
        body = std::move(*first_body);
        first_body.reset();
      } else {
        auto r = http.get(next_path(reader), tokens.at(reader));
        if (r->status == 425 || r->status == 410) break;
        if (r->status != 200) unexpected("next assignment", r);
        body = r->body;
      }
      const auto receipt = read_and_submit(reader, body);
      last = receipt.at("submitted_at").get<std::int64_t>();
      if (receipt.at("remaining").get<std::size_t>() == 0) break;
    }
    return last;
  };

  std::vector<std::int64_t> completed;
  for (const auto& spec : config.readers) completed.push_back(run_round(spec.reader_id, std::nullopt));

  const std::int64_t washout = config.washout_days * kSecondsPerDay;
  std::vector<std::string> first_round2(config.readers.size());
  for (std::size_t i = 0; i < config.readers.size(); ++i) {
    WashoutProbe p;
    p.reader_id = config.readers[i].reader_id;
    p.round1_completed_at = completed[i];
    if (config.washout_days > 0) {
      clock.set(std::max(clock.now(), completed[i] + washout - kSecondsPerDay));
      auto early = http.get(next_path(p.reader_id), tokens.at(p.reader_id));
      p.early_status = early->status;
      if (early->status == 425) p.eligible_at = nlohmann::json::parse(early->body).at("eligible_at").get<std::int64_t>();
    }
    out.washout.push_back(p);
  }
  for (std::size_t i = 0; i < config.readers.size(); ++i) {
    auto& p = out.washout[i];
    clock.set(std::max(clock.now(), completed[i] + washout));
    auto on_time = http.get(next_path(p.reader_id), tokens.at(p.reader_id));
    p.on_time_status = on_time->status;
    if (on_time->status != 200) unexpected("round 2 after washout", on_time);
    first_round2[i] = on_time->body;
  }
  for (std::size_t i = 0; i < config.readers.size(); ++i) run_round(config.readers[i].reader_id, first_round2[i]);
  return out;
}

}  // namespace nb
