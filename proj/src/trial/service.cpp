#include "nodulebench/trial/service.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nodulebench/trial/slices.hpp"

namespace nb {

namespace fs = std::filesystem;

std::string to_string(TrialErrorCode c) {
  switch (c) {
    case TrialErrorCode::bad_request: return "bad_request";
    case TrialErrorCode::not_found: return "not_found";
    case TrialErrorCode::conflict: return "conflict";
    case TrialErrorCode::washout: return "washout";
    case TrialErrorCode::complete: return "complete";
    case TrialErrorCode::unauthorized: return "unauthorized";
  }
  return "unknown";
}

nlohmann::json assignment_payload(const Assignment& a) {
  nlohmann::json j = {
      {"trial_id", a.trial_id},
      {"reader_id", a.reader_id},
      {"round", a.round},
      {"arm", to_string(a.arm)},
      {"case_id", a.case_id},
      {"nodule_id", a.nodule_id},
      {"position", a.position},
      {"total", a.total},
      {"served_at", a.served_at},
      {"volume", {{"dims", a.dims}, {"spacing", a.spacing}}},
      {"slices",
       {{"axial", a.dims[2]},
        {"coronal", a.dims[1]},
        {"sagittal", a.dims[0]},
        {"url", "/cases/" + a.case_id + "/slices/{axis}/{index}"},
        {"windows", {"lung", "mediastinum"}}}},
      {"hint_boxes", {{{"nodule_id", a.nodule_id}, {"box", a.hint_box}}}},
  };
  j["ai_card"] = a.ai_card ? nlohmann::json(to_string(*a.ai_card)) : nlohmann::json(nullptr);
  return j;
}

void from_json(const nlohmann::json& j, ReadingSubmission& s) {
  j.at("trial_id").get_to(s.trial_id);
  j.at("reader_id").get_to(s.reader_id);
  j.at("round").get_to(s.round);
  j.at("case_id").get_to(s.case_id);
  s.nodule_id = j.value("nodule_id", "");
  j.at("box").get_to(s.box);
  s.call = call_from_string(j.at("call").get<std::string>());
  j.at("score").get_to(s.score);
}

void to_json(nlohmann::json& j, const Receipt& r) {
  j = {{"trial_id", r.trial_id}, {"reader_id", r.reader_id},       {"round", r.round},
       {"case_id", r.case_id},   {"sequence", r.sequence},         {"submitted_at", r.submitted_at},
       {"remaining", r.remaining}};
}

namespace {

struct Served {
  std::int64_t at = 0;
  std::optional<AiResult> ai;
};

}  // namespace

struct TrialService::Trial {
  std::string id;
  fs::path log_path;
  TrialConfig config;
  std::map<std::string, std::size_t> case_index;
  std::map<std::string, std::size_t> reader_index;
  std::vector<SessionState> sessions;
  std::vector<std::array<std::map<std::string, Served>, kRounds>> served;
  std::vector<ReadingEvent> events;
  std::map<std::size_t, AiResult> ai;  // by case index, hint box only
  std::uint64_t records = 0;
};

TrialService::TrialService(fs::path state_dir, fs::path dataset_dir, std::shared_ptr<AiProvider> ai,
                           std::shared_ptr<const Clock> clock, std::uint64_t token_secret)
    : state_dir_(std::move(state_dir)),
      dataset_dir_(std::move(dataset_dir)),
      ai_(std::move(ai)),
      clock_(std::move(clock)),
      token_secret_(token_secret) {
  if (!ai_ || !clock_) throw std::invalid_argument("TrialService needs an AI provider and a clock");
  const fs::path root = state_dir_ / "trials";
  fs::create_directories(root);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) load(d);
}

TrialService::~TrialService() = default;

void TrialService::load(const fs::path& dir) {
  const fs::path log = dir / "events.jsonl";
  if (!fs::exists(log)) return;
  std::ifstream in(log, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  // A record is durable once its newline is written; a torn tail from a crash
  // mid-append is cut off so later appends start on a clean line.
  const auto last_newline = text.rfind('\n');
  const std::size_t durable = last_newline == std::string::npos ? 0 : last_newline + 1;
  if (durable < text.size()) {
    fs::resize_file(log, durable);
    text.resize(durable);
  }
  auto t = std::make_unique<Trial>();
  t->id = dir.filename().string();
  t->log_path = log;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("corrupt record " + std::to_string(t->records) + " in " + log.string() + ": " + e.what());
    }
    apply(*t, record);
    ++t->records;
  }
  if (t->records == 0) return;
  trials_[t->id] = std::move(t);
}

void TrialService::apply(Trial& t, const nlohmann::json& record) {
  const auto type = record.at("type").get<std::string>();
  if (type == "created") {
    t.config = record.at("config").get<TrialConfig>();
    for (std::size_t i = 0; i < t.config.cases.size(); ++i) t.case_index[t.config.cases[i].case_id] = i;
    t.sessions.resize(t.config.readers.size());
    t.served.resize(t.config.readers.size());
    for (std::size_t r = 0; r < t.config.readers.size(); ++r) {
      const auto& spec = t.config.readers[r];
      t.reader_index[spec.reader_id] = r;
      auto& s = t.sessions[r];
      s.reader_id = spec.reader_id;
      s.group = spec.group;
      Rng rng(t.config.order_seed(r));
      for (int round = 1; round <= kRounds; ++round) {
        auto& order = s.order[round - 1];
        for (const auto& c : t.config.cases) order.push_back(c.case_id);
        Rng sub = rng.split(static_cast<std::uint64_t>(round));
        sub.shuffle(order.begin(), order.end());
      }
    }
    return;
  }
  if (t.sessions.empty()) throw std::runtime_error("trial log " + t.log_path.string() + " does not start with its config");
  const std::size_t r = t.reader_index.at(record.at("reader_id").get<std::string>());
  if (type == "served") {
    Served s;
    s.at = record.at("at").get<std::int64_t>();
    if (record.contains("ai")) {
      s.ai = AiResult{call_from_string(record["ai"].at("class").get<std::string>()), record["ai"].at("score").get<double>()};
      t.ai[t.case_index.at(record.at("case_id").get<std::string>())] = *s.ai;
    }
    t.served[r][record.at("round").get<int>() - 1][record.at("case_id").get<std::string>()] = s;
    return;
  }
  if (type == "reading") {
    const auto e = record.at("event").get<ReadingEvent>();
    auto& s = t.sessions[r];
    s.completed[e.round - 1].insert(e.case_id);
    if (s.completed[e.round - 1].size() == t.config.cases.size()) {
      if (e.round == 1) s.round1_completed_at = e.submitted_at;
      s.current_round = e.round + 1;
    }
    t.events.push_back(e);
    return;
  }
  throw std::runtime_error("unknown record type '" + type + "' in " + t.log_path.string());
}

void TrialService::append(Trial& t, const nlohmann::json& record) {
  std::ofstream out(t.log_path, std::ios::binary | std::ios::app);
  out << record.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed to append to " + t.log_path.string());
  apply(t, record);
  ++t.records;
}

TrialService::Trial& TrialService::trial(const std::string& id) {
  const auto it = trials_.find(id);
  if (it == trials_.end()) throw TrialError(TrialErrorCode::not_found, "unknown trial '" + id + "'");
  return *it->second;
}

const TrialService::Trial& TrialService::trial(const std::string& id) const {
  return const_cast<TrialService*>(this)->trial(id);
}

std::string TrialService::create_trial(const TrialConfig& config) {
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw TrialError(TrialErrorCode::bad_request, e.what());
  }
  std::lock_guard lock(mutex_);
  std::string id;
  for (std::size_t n = trials_.size() + 1;; ++n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "T%04zu", n);
    id = buf;
    if (!trials_.count(id) && !fs::exists(state_dir_ / "trials" / id / "events.jsonl")) break;
  }
  const fs::path dir = state_dir_ / "trials" / id;
  fs::create_directories(dir);
  auto t = std::make_unique<Trial>();
  t->id = id;
  t->log_path = dir / "events.jsonl";
  const nlohmann::json cfg = config;
  append(*t, {{"type", "created"}, {"trial_id", id}, {"at", clock_->now()}, {"config", cfg}});
  // Snapshot for humans; the log stays authoritative.
  std::ofstream(dir / "config.json", std::ios::binary) << cfg.dump(2) << '\n';
  trials_[id] = std::move(t);
  return id;
}

std::vector<std::string> TrialService::trial_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, t] : trials_) ids.push_back(id);
  return ids;
}

TrialConfig TrialService::config(const std::string& trial_id) const {
  std::lock_guard lock(mutex_);
  return trial(trial_id).config;
}

SessionState TrialService::session(const std::string& trial_id, const std::string& reader_id) const {
  std::lock_guard lock(mutex_);
  const Trial& t = trial(trial_id);
  const auto it = t.reader_index.find(reader_id);
  if (it == t.reader_index.end()) throw TrialError(TrialErrorCode::not_found, "unknown reader '" + reader_id + "'");
  return t.sessions[it->second];
}

std::string TrialService::reader_token(const std::string& trial_id, const std::string& reader_id) const {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(splitmix64(token_secret_ ^ fnv1a64(trial_id + "/" + reader_id))));
  return buf;
}

bool TrialService::token_valid(const std::string& trial_id, const std::string& reader_id, const std::string& token) const {
  return token == reader_token(trial_id, reader_id);
}

std::shared_ptr<const Volume> TrialService::volume(const std::string& relative_path) {
  std::lock_guard lock(volume_mutex_);
  auto it = volumes_.find(relative_path);
  if (it == volumes_.end()) {
    auto v = std::make_shared<const Volume>(read_volume(dataset_dir_ / relative_path));
    it = volumes_.emplace(relative_path, std::move(v)).first;
  }
  return it->second;
}

AiResult TrialService::ai_for(Trial& t, std::size_t case_index) {
  const auto it = t.ai.find(case_index);
  if (it != t.ai.end()) return it->second;
  const auto& c = t.config.cases[case_index];
  AiResult r;
  try {
    r = ai_->classify(c, c.hint_box);
  } catch (const std::invalid_argument& e) {
    throw TrialError(TrialErrorCode::bad_request, e.what());
  }
  t.ai[case_index] = r;
  return r;
}

Assignment TrialService::next_assignment(const std::string& trial_id, const std::string& reader_id) {
  std::lock_guard lock(mutex_);
  Trial& t = trial(trial_id);
  const auto rit = t.reader_index.find(reader_id);
  if (rit == t.reader_index.end()) throw TrialError(TrialErrorCode::not_found, "unknown reader '" + reader_id + "'");
  const std::size_t r = rit->second;
  const SessionState& s = t.sessions[r];
  if (s.current_round > kRounds) throw TrialError(TrialErrorCode::complete, "reader '" + reader_id + "' has completed both rounds");
  const std::int64_t now = clock_->now();
  if (s.current_round == 2) {
    const std::int64_t eligible = *s.round1_completed_at + t.config.washout_days * kSecondsPerDay;
    if (now < eligible) {
      throw TrialError(TrialErrorCode::washout, "washout not elapsed; round 2 opens at " + iso8601(eligible), eligible);
    }
  }
  const int round = s.current_round;
  const auto& order = s.order[round - 1];
  std::size_t pos = 0;
  while (s.completed[round - 1].count(order[pos])) ++pos;
  const std::string& case_id = order[pos];
  const std::size_t ci = t.case_index.at(case_id);
  const TrialCase& c = t.config.cases[ci];
  const Arm arm = arm_for(s.group, round);

  auto served = t.served[r][round - 1].find(case_id);
  if (served == t.served[r][round - 1].end()) {
    nlohmann::json record = {{"type", "served"}, {"reader_id", reader_id}, {"round", round}, {"case_id", case_id}, {"at", now}};
    if (arm == Arm::assisted) {
      const AiResult ai = ai_for(t, ci);
      record["ai"] = {{"class", to_string(ai.cls)}, {"score", ai.score}};
    }
    append(t, record);
    served = t.served[r][round - 1].find(case_id);
  }
  const auto v = volume(c.volume_path);
  Assignment a;
  a.trial_id = trial_id;
  a.reader_id = reader_id;
  a.round = round;
  a.arm = arm;
  a.case_id = case_id;
  a.nodule_id = c.nodule_id;
  a.hint_box = c.hint_box;
  a.dims = v->dims;
  a.spacing = v->spacing;
  if (arm == Arm::assisted) a.ai_card = served->second.ai->cls;
  a.served_at = served->second.at;
  a.position = pos + 1;
  a.total = order.size();
  return a;
}

Receipt TrialService::record_reading(const ReadingSubmission& sub) {
  std::lock_guard lock(mutex_);
  Trial& t = trial(sub.trial_id);
  const auto rit = t.reader_index.find(sub.reader_id);
  if (rit == t.reader_index.end()) throw TrialError(TrialErrorCode::not_found, "unknown reader '" + sub.reader_id + "'");
  const std::size_t r = rit->second;
  if (sub.score < 1 || sub.score > 10 || !score_in_band(sub.call, sub.score)) {
    throw TrialError(TrialErrorCode::bad_request, "score " + std::to_string(sub.score) + " is outside the " + to_string(sub.call) +
                                                      " band (1-5 benign, 6-10 malignant)");
  }
  if (sub.round < 1 || sub.round > kRounds) throw TrialError(TrialErrorCode::bad_request, "round must be 1 or 2");
  const auto cit = t.case_index.find(sub.case_id);
  if (cit == t.case_index.end()) throw TrialError(TrialErrorCode::not_found, "unknown case '" + sub.case_id + "'");
  const TrialCase& c = t.config.cases[cit->second];
  const SessionState& s = t.sessions[r];
  if (s.completed[sub.round - 1].count(sub.case_id)) {
    throw TrialError(TrialErrorCode::conflict, "duplicate reading of case '" + sub.case_id + "' in round " + std::to_string(sub.round));
  }
  const auto served = t.served[r][sub.round - 1].find(sub.case_id);
  if (sub.round != s.current_round || served == t.served[r][sub.round - 1].end()) {
    throw TrialError(TrialErrorCode::not_found, "no open assignment for case '" + sub.case_id + "' in round " + std::to_string(sub.round));
  }
  const std::string nodule = sub.nodule_id.empty() ? c.nodule_id : sub.nodule_id;
  if (nodule != c.nodule_id) throw TrialError(TrialErrorCode::bad_request, "nodule '" + nodule + "' is not part of this case");
  if (!sub.box.inside(volume(c.volume_path)->dims)) throw TrialError(TrialErrorCode::bad_request, "box lies outside the volume");

  ReadingEvent e;
  e.reader_id = sub.reader_id;
  e.round = sub.round;
  e.arm = arm_for(s.group, sub.round);
  e.case_id = sub.case_id;
  e.nodule_id = nodule;
  e.box = sub.box;
  e.call = sub.call;
  e.score = sub.score;
  e.ai_shown = e.arm == Arm::assisted;
  e.served_at = served->second.at;
  e.submitted_at = clock_->now();
  Receipt receipt{sub.trial_id, sub.reader_id, sub.round, sub.case_id, t.records, e.submitted_at, 0};
  append(t, {{"type", "reading"}, {"reader_id", sub.reader_id}, {"event", e}});
  receipt.remaining = t.config.cases.size() - t.sessions[r].completed[sub.round - 1].size();
  return receipt;
}

ReadingsFile TrialService::readings(const std::string& trial_id) const {
  std::lock_guard lock(mutex_);
  const Trial& t = trial(trial_id);
  ReadingsFile f;
  f.trial_id = t.id;
  f.name = t.config.name;
  f.readers = t.config.readers;
  for (const auto& c : t.config.cases) f.case_ids.push_back(c.case_id);
  for (const auto& e : t.events) {
    const std::size_t ci = t.case_index.at(e.case_id);
    const TrialCase& c = t.config.cases[ci];
    ReadingRow row;
    row.event = e;
    row.group = t.sessions[t.reader_index.at(e.reader_id)].group;
    row.patient_id = c.patient_id;
    row.malignant = c.malignant;
    row.diameter_mm = c.diameter_mm;
    row.density = c.density;
    row.lobe = c.lobe;
    if (e.ai_shown) row.ai_class = t.ai.at(ci).cls;
    f.rows.push_back(std::move(row));
  }
  return f;
}

std::string TrialService::export_trial(const std::string& trial_id) const { return serialize_readings(readings(trial_id)); }

std::vector<std::pair<TrialCase, AiResult>> TrialService::ai_results(const std::string& trial_id) {
  std::lock_guard lock(mutex_);
  Trial& t = trial(trial_id);
  std::vector<std::pair<TrialCase, AiResult>> out;
  for (std::size_t i = 0; i < t.config.cases.size(); ++i) out.emplace_back(t.config.cases[i], ai_for(t, i));
  return out;
}

TrialReport TrialService::trial_report(const std::string& trial_id, const BootstrapOptions& options) {
  std::vector<ScoredCase> model;
  for (const auto& [c, ai] : ai_results(trial_id)) model.push_back({c.case_id, c.patient_id, c.malignant, ai.score, ai.cls == Call::malignant});
  const ReadingsFile f = readings(trial_id);
  return build_trial_report(f, &model, config(trial_id).seed, options);
}

std::string TrialService::slice_png(const std::string& case_id, const std::string& axis, std::size_t index, const std::string& window) {
  std::string path;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, t] : trials_) {
      const auto it = t->case_index.find(case_id);
      if (it != t->case_index.end()) {
        path = t->config.cases[it->second].volume_path;
        break;
      }
    }
  }
  if (path.empty()) throw TrialError(TrialErrorCode::not_found, "unknown case '" + case_id + "'");
  try {
    return render_slice_png(*volume(path), axis, index, window);
  } catch (const std::out_of_range& e) {
    throw TrialError(TrialErrorCode::not_found, e.what());
  } catch (const std::invalid_argument& e) {
    throw TrialError(TrialErrorCode::bad_request, e.what());
  }
}

}  // namespace nb
