#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nodulebench/train/trainer.hpp"

namespace nb {

/// Invalid configuration or input file (exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A pipeline stage failed (exit code 3). Earlier artifacts stay in place.
class StageFailure : public std::runtime_error {
 public:
  StageFailure(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + " failed: " + what), stage(std::move(stage)) {}
  std::string stage;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  Scale scale = Scale::desk;
  int ablation = 9;
  DatasetConfig data;
  /// Dataset location; <out>/data when absent.
  std::optional<std::filesystem::path> data_dir;
  /// Multiplies every stage's epoch count and decay epochs (at least one epoch per stage).
  double epoch_scale = 1.0;
  std::size_t batch_size = 8;
  std::size_t bootstrap_resamples = 1000;
  /// Test nodules explained with Grad-CAM and node attribution.
  std::size_t explain_samples = 2;
  /// Where artifacts go. Not serialized: a run is reproducible wherever it lives.
  std::filesystem::path out_dir;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Unknown keys are rejected so typos do not silently fall back to defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// The stage plan after the epoch_scale override.
StagePlan scaled_plan(Stage stage, Scale scale, double epoch_scale);

/// Generates the dataset unless `dir` already holds a manifest. Returns true when it ran.
bool ensure_dataset(const DatasetConfig& config, const std::filesystem::path& dir);

struct TrainedModel {
  std::filesystem::path checkpoint;  // selected parameters, threshold in the meta
  Selection selection;
  double threshold = 0.5;
  std::vector<std::string> stages;
};

/// Trains every applicable stage, selects the best checkpoint on validation and
/// the max-F1 threshold on validation scores, and writes <out>/model.ckpt.
TrainedModel train_model(const ExperimentConfig& config, const DatasetManifest& manifest, const std::filesystem::path& data_dir,
                         const std::filesystem::path& out_dir);

/// Loads a checkpoint written by train_model.
std::unique_ptr<DeepFan> load_model(const std::filesystem::path& checkpoint, double* threshold = nullptr);

/// Scores a split and writes <out>/scores.jsonl and <out>/metrics.json.
Evaluation evaluate_model(const DeepFan& model, double threshold, const DatasetManifest& manifest,
                          const std::filesystem::path& data_dir, Split split, std::uint64_t seed, std::size_t resamples,
                          const std::filesystem::path& out_dir);

/// Grad-CAM overlays (axial centre slice, both classes) and, for GCN fusion,
/// the node attribution record of one nodule: <out>/<id>.cam-{benign,malignant}.png, <out>/<id>.json.
/// Throws ConfigError for an unknown nodule id.
nlohmann::json explain_nodule(const DeepFan& model, const DatasetManifest& manifest, const std::filesystem::path& data_dir,
                              const std::string& nodule_id, const std::filesystem::path& out_dir);

/// SHA-256 of every regular file under `dir` except manifest.json, keyed by relative path.
std::map<std::string, std::string> hash_tree(const std::filesystem::path& dir);

struct ExperimentResult {
  TrainedModel model;
  Evaluation test;
  bool generated_data = false;
  nlohmann::json manifest;
};

/// gen-data (if absent), training, threshold selection, test evaluation,
/// explanations and report; then <out>/manifest.json with every artifact hash.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Tables and plots of one or more experiment directories (one row per run
/// and level). Runs are labelled by directory name unless `labels` is given.
/// Returns the files written.
std::vector<std::filesystem::path> emit_run_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out_dir,
                                                   const std::vector<std::string>& labels = {});

/// Tables and plots of a readings export. An export without readings writes
/// empty tables and no plots; `notice` then says so.
std::vector<std::filesystem::path> emit_readings_report(const std::filesystem::path& readings, const std::filesystem::path& out_dir,
                                                        std::uint64_t seed, std::size_t resamples, std::string* notice = nullptr);

}  // namespace nb
