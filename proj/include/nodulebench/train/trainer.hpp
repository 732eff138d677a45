#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nodulebench/data/dataset.hpp"
#include "nodulebench/model/deepfan.hpp"
#include "nodulebench/stats/report.hpp"
#include "nodulebench/tensor/checkpoint.hpp"
#include "nodulebench/train/loss.hpp"

namespace nb {

enum class Stage { vit, fine_grained, gcn, joint };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StagePlan {
  Stage stage = Stage::vit;
  std::size_t epochs = 0;
  double initial_lr = 0.0;
  /// The rate is multiplied by 0.1 at each of these (0-based) epochs.
  std::vector<std::size_t> decay_epochs;
  /// Parameter groups ("global", "local", "fusion") held fixed.
  std::set<std::string> frozen;
  std::size_t checkpoint_every = 30;

  /// The paper's schedule; the desk profile divides every epoch count by 20.
  static StagePlan paper(Stage stage);
  static StagePlan desk(Stage stage);
  static StagePlan for_scale(Stage stage, Scale scale);

  /// Loss weights restricted to the terms this stage optimizes.
  LossWeights stage_weights(const LossWeights& w) const;
  /// The forward pass this stage needs.
  ForwardScope scope() const;
};

inline constexpr std::size_t kDeskEpochDivisor = 20;

/// initial_lr * 0.1^(number of decay epochs <= epoch), exact in decimal.
double lr_schedule(const StagePlan& plan, std::size_t epoch);

/// Model input for a prepared nodule: normalized [1, N, N, N] intensities.
Tensor model_input(const PreparedNodule& n);

struct TrainOptions {
  std::size_t batch_size = 8;
  int max_jitter = 2;
  LossWeights weights;
  /// Checkpoints go here; nothing is written when empty.
  std::filesystem::path checkpoint_dir;
  /// JSON-lines epoch log; optional.
  std::ostream* log = nullptr;
  nlohmann::json meta = nlohmann::json::object();
};

struct CheckpointRecord {
  Stage stage = Stage::vit;
  std::size_t epoch = 0;  // 1-based count of completed epochs
  std::filesystem::path path;
  std::string sha256;
  Checkpoint snapshot;
};

/// Whether a stage has anything to train for this configuration.
bool stage_applies(const ModelConfig& cfg, Stage stage);

/// Adam over shuffled mini-batches of `data`. Only unfrozen groups change.
/// A checkpoint is taken every `checkpoint_every` epochs and after the final
/// epoch (once when the two coincide). Throws std::invalid_argument on an
/// empty split or frozen groups that leave nothing to train.
std::vector<CheckpointRecord> train_stage(DeepFan& model, std::span<const PreparedNodule> data, const StagePlan& plan,
                                          Rng& rng, const TrainOptions& options = {});

/// Eval-mode decision scores of the current parameters, one per nodule.
std::vector<double> score_nodules(const DeepFan& model, std::span<const PreparedNodule> data);

struct Selection {
  std::size_t index = 0;
  double validation_auc = 0.0;
  std::vector<double> aucs;  // one per checkpoint
};

/// Highest nodule-level validation AUC; ties go to the later checkpoint.
/// Restores the chosen parameters into `model`. Throws UndefinedStatistic
/// when the validation split has a single class.
Selection select_best_checkpoint(DeepFan& model, std::span<const CheckpointRecord> checkpoints,
                                 std::span<const PreparedNodule> validation);

struct Evaluation {
  std::vector<ScoredCase> nodules;  // score = decision probability, call = score > threshold
  std::vector<ScoredCase> patients;
  /// Argmax of the density head per nodule, when the local branch exists.
  std::vector<std::size_t> density_predictions;
  std::optional<double> density_accuracy;
  MetricReport nodule_report;
  MetricReport patient_report;
};

Evaluation evaluate_split(const DeepFan& model, std::span<const PreparedNodule> data, double threshold, Rng& rng,
                          const BootstrapOptions& options = {});

std::string sha256_hex(const std::string& bytes);

}  // namespace nb
