#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>

#include "nodulebench/model/deepfan.hpp"
#include "nodulebench/trial/types.hpp"

namespace nb {

struct AiResult {
  Call cls = Call::benign;
  double score = 0.0;  // kept server-side; never sent to readers
};

/// Produces the AI card for a nodule box. Implementations must be
/// deterministic: the same case and box give the same result.
class AiProvider {
 public:
  virtual ~AiProvider() = default;
  /// Throws std::invalid_argument when the box lies outside the case volume.
  virtual AiResult classify(const TrialCase& c, const Box& box) = 0;
};

/// Runs the model on a patch cropped at the box centre: resample to the model
/// spacing, crop, normalize, eval-mode forward; malignant when score > threshold.
class ModelAiProvider : public AiProvider {
 public:
  ModelAiProvider(std::shared_ptr<const DeepFan> model, std::filesystem::path dataset_dir, double threshold);
  AiResult classify(const TrialCase& c, const Box& box) override;

 private:
  std::shared_ptr<const DeepFan> model_;
  std::filesystem::path dataset_dir_;
  double threshold_;
  std::mutex mutex_;  // one inference at a time over the shared model
  struct Cached {
    std::array<std::size_t, 3> dims;
    std::array<double, 3> spacing;
    Volume resampled;
  };
  std::map<std::string, Cached> volumes_;
};

/// Fixed scores per case id; for tests and dry runs without a model.
class TableAiProvider : public AiProvider {
 public:
  TableAiProvider(std::map<std::string, double> scores, double threshold);
  AiResult classify(const TrialCase& c, const Box& box) override;

 private:
  std::map<std::string, double> scores_;
  double threshold_;
};

}  // namespace nb
