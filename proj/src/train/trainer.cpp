#include "nodulebench/train/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <openssl/evp.h>

#include "nodulebench/tensor/adam.hpp"

namespace nb {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::vit: return "vit";
    case Stage::fine_grained: return "fine_grained";
    case Stage::gcn: return "gcn";
    case Stage::joint: return "joint";
  }
  throw std::invalid_argument("bad stage");
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::vit, Stage::fine_grained, Stage::gcn, Stage::joint})
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

StagePlan StagePlan::paper(Stage stage) {
  StagePlan p;
  p.stage = stage;
  switch (stage) {
    case Stage::vit:
      p.epochs = 1200;
      p.initial_lr = 2e-4;
      p.decay_epochs = {400, 800};
      p.frozen = {"local", "fusion"};
      break;
    case Stage::fine_grained:
      p.epochs = 1200;
      p.initial_lr = 1e-2;
      p.decay_epochs = {400, 800};
      p.frozen = {"global", "fusion"};
      break;
    case Stage::gcn:
      p.epochs = 200;
      p.initial_lr = 1e-2;
      p.decay_epochs = {80, 160};
      p.frozen = {"global", "local"};
      break;
    case Stage::joint:
      p.epochs = 1400;
      p.initial_lr = 1e-5;
      p.decay_epochs = {300, 600, 900};
      break;
  }
  return p;
}

StagePlan StagePlan::desk(Stage stage) {
  StagePlan p = paper(stage);
  p.epochs /= kDeskEpochDivisor;
  for (auto& e : p.decay_epochs) e /= kDeskEpochDivisor;
  return p;
}

StagePlan StagePlan::for_scale(Stage stage, Scale scale) { return scale == Scale::paper ? paper(stage) : desk(stage); }

LossWeights StagePlan::stage_weights(const LossWeights& w) const {
  switch (stage) {
    case Stage::vit: return {w.w0, 0.0, 0.0, 0.0};
    case Stage::fine_grained: return {0.0, w.w1, 0.0, 0.0};
    case Stage::gcn: return {0.0, 0.0, w.w2, w.w3};
    case Stage::joint: return w;
  }
  return w;
}

ForwardScope StagePlan::scope() const {
  switch (stage) {
    case Stage::vit: return ForwardScope::global_only;
    case Stage::fine_grained: return ForwardScope::local_only;
    default: return ForwardScope::full;
  }
}

double lr_schedule(const StagePlan& plan, std::size_t epoch) {
  if (epoch >= plan.epochs) {
    throw std::invalid_argument("lr_schedule: epoch " + std::to_string(epoch) + " outside a " + std::to_string(plan.epochs) +
                                "-epoch stage");
  }
  int decades = 0;
  for (std::size_t d : plan.decay_epochs) decades += d <= epoch;
  if (decades == 0) return plan.initial_lr;
  // Shift the decimal exponent instead of multiplying by 0.1, which drifts
  // (1e-5 * 0.1 != 1e-6 in binary). The result is the double nearest the
  // exact decimal rate.
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15e", plan.initial_lr);
  std::string text(buf);
  const auto e = text.find('e');
  const int exponent = std::stoi(text.substr(e + 1)) - decades;
  return std::strtod((text.substr(0, e) + "e" + std::to_string(exponent)).c_str(), nullptr);
}

Tensor model_input(const PreparedNodule& n) { return normalize_intensity(n.patch); }

bool stage_applies(const ModelConfig& cfg, Stage stage) {
  switch (stage) {
    case Stage::fine_grained: return cfg.local_branch != LocalBranch::none;
    case Stage::gcn: return cfg.fusion != Fusion::none;
    default: return true;
  }
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

// Clears requires_grad on frozen parameters for the lifetime of the guard,
// so frozen branches record no history and receive no gradient.
class FreezeGuard {
 public:
  FreezeGuard(ParameterSet& params, const std::set<std::string>& frozen) {
    for (const auto& [name, t] : params.items()) {
      if (!frozen.count(group_of(name))) continue;
      Tensor handle = t;
      saved_.emplace_back(handle, handle.requires_grad());
      handle.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (auto& [t, flag] : saved_) t.set_requires_grad(flag);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"l_t0", b.l_t0}, {"l_c0", b.l_c0}, {"l_c1", b.l_c1}, {"l_c2", b.l_c2},
          {"l_all", b.l_all}, {"l_g", b.l_g},   {"total", b.total}};
}

std::string checkpoint_name(Stage stage, std::size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-e%04zu.ckpt", to_string(stage).c_str(), epoch);
  return buf;
}

}  // namespace

std::vector<CheckpointRecord> train_stage(DeepFan& model, std::span<const PreparedNodule> data, const StagePlan& plan,
                                          Rng& rng, const TrainOptions& options) {
  if (data.empty()) throw std::invalid_argument("train_stage: empty training split");
  if (plan.checkpoint_every == 0 || options.batch_size == 0) throw std::invalid_argument("train_stage: zero period");
  for (const auto& g : plan.frozen) {
    if (g != "global" && g != "local" && g != "fusion") throw std::invalid_argument("train_stage: unknown group '" + g + "'");
  }
  ParameterSet& params = model.parameters();
  std::vector<Tensor> trainable;
  for (const auto& [name, t] : params.items())
    if (!plan.frozen.count(group_of(name))) trainable.push_back(t);
  if (trainable.empty()) throw std::invalid_argument("train_stage: every parameter of " + to_string(plan.stage) + " is frozen");

  FreezeGuard freeze(params, plan.frozen);
  AdamState adam = AdamState::for_parameters(trainable);
  const LossWeights w = plan.stage_weights(options.weights);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<CheckpointRecord> records;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const double lr = lr_schedule(plan, epoch);
    rng.shuffle(order.begin(), order.end());
    LossBreakdown mean;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      for (auto& t : trainable) t.zero_grad();
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& n = data[order[i]];
        const Tensor x = normalize_intensity(augment(n.patch, rng, options.max_jitter));
        const auto out = model.forward(x, rng, true, plan.scope());
        const auto b = composite_loss(out, LossTarget::from(n.annotation), w);
        if (b.total_tensor.defined()) backward(scale(b.total_tensor, inv));
        mean.l_t0 += b.l_t0;
        mean.l_c0 += b.l_c0;
        mean.l_c1 += b.l_c1;
        mean.l_c2 += b.l_c2;
        mean.l_all += b.l_all;
        mean.l_g += b.l_g;
      }
      adam_step(trainable, adam, lr);
    }
    const double n = static_cast<double>(data.size());
    for (double* v : {&mean.l_t0, &mean.l_c0, &mean.l_c1, &mean.l_c2, &mean.l_all, &mean.l_g}) *v /= n;
    mean.total = compose_total(mean, w);
    if (options.log) {
      *options.log << nlohmann::json{{"stage", to_string(plan.stage)}, {"epoch", epoch + 1}, {"lr", lr}, {"loss", breakdown_json(mean)}}.dump()
                   << '\n';
    }

    const std::size_t done = epoch + 1;
    if (done % plan.checkpoint_every == 0 || done == plan.epochs) {
      CheckpointRecord rec;
      rec.stage = plan.stage;
      rec.epoch = done;
      nlohmann::json meta = options.meta;
      meta["stage"] = to_string(plan.stage);
      meta["epoch"] = done;
      rec.snapshot = Checkpoint::capture(params, model.config(), meta);
      const std::string bytes = rec.snapshot.serialize();
      rec.sha256 = sha256_hex(bytes);
      if (!options.checkpoint_dir.empty()) {
        std::filesystem::create_directories(options.checkpoint_dir);
        rec.path = options.checkpoint_dir / checkpoint_name(plan.stage, done);
        std::ofstream f(rec.path, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("cannot write checkpoint " + rec.path.string());
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::vector<double> score_nodules(const DeepFan& model, std::span<const PreparedNodule> data) {
  NoGradGuard no_grad;
  std::vector<double> scores;
  scores.reserve(data.size());
  for (const auto& n : data) {
    // Every nodule sees the same counterfactual draw, so a score does not
    // depend on its position in the split.
    Rng rng(kEvalSeed);
    scores.push_back(model.forward(model_input(n), rng, false).score);
  }
  return scores;
}

Selection select_best_checkpoint(DeepFan& model, std::span<const CheckpointRecord> checkpoints,
                                 std::span<const PreparedNodule> validation) {
  if (checkpoints.empty()) throw std::invalid_argument("select_best_checkpoint: no checkpoints");
  std::vector<bool> truth;
  for (const auto& n : validation) truth.push_back(n.annotation.pathology == Pathology::malignant);
  if (std::count(truth.begin(), truth.end(), true) == 0 || std::count(truth.begin(), truth.end(), false) == 0) {
    throw UndefinedStatistic("validation AUC is undefined: the split holds a single class");
  }
  Selection sel;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    checkpoints[i].snapshot.restore_into(model.parameters());
    const auto scores = score_nodules(model, validation);
    const double auc = mann_whitney_auc(scores, truth);
    sel.aucs.push_back(auc);
    if (i == 0 || auc >= sel.validation_auc) {
      sel.index = i;
      sel.validation_auc = auc;
    }
  }
  checkpoints[sel.index].snapshot.restore_into(model.parameters());
  return sel;
}

Evaluation evaluate_split(const DeepFan& model, std::span<const PreparedNodule> data, double threshold, Rng& rng,
                          const BootstrapOptions& options) {
  if (data.empty()) throw std::invalid_argument("evaluate_split: empty split");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("evaluate_split: threshold must lie in [0, 1]");
  Evaluation ev;
  std::size_t density_hits = 0;
  {
    NoGradGuard no_grad;
    for (const auto& n : data) {
      Rng eval_rng(kEvalSeed);
      const auto out = model.forward(model_input(n), eval_rng, false);
      const bool malignant = n.annotation.pathology == Pathology::malignant;
      ev.nodules.push_back({n.annotation.nodule_id, n.patient_id, malignant, out.score, out.score > threshold});
      if (out.fine) {
        const auto p = softmax_probabilities(out.fine->logits[2]);
        const auto k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        ev.density_predictions.push_back(k);
        density_hits += k == static_cast<std::size_t>(n.annotation.density);
      }
    }
  }
  if (!ev.density_predictions.empty()) ev.density_accuracy = static_cast<double>(density_hits) / static_cast<double>(data.size());
  ev.patients = patient_aggregate(ev.nodules);
  ev.nodule_report = metric_report(ev.nodules, Level::nodule, rng, options);
  ev.patient_report = metric_report(ev.patients, Level::patient, rng, options);
  return ev;
}

}  // namespace nb
