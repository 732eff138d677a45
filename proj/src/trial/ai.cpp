#include "nodulebench/trial/ai.hpp"

#include <stdexcept>

namespace nb {

ModelAiProvider::ModelAiProvider(std::shared_ptr<const DeepFan> model, std::filesystem::path dataset_dir, double threshold)
    : model_(std::move(model)), dataset_dir_(std::move(dataset_dir)), threshold_(threshold) {
  if (!model_) throw std::invalid_argument("ModelAiProvider: no model");
}

AiResult ModelAiProvider::classify(const TrialCase& c, const Box& box) {
  std::lock_guard lock(mutex_);
  auto it = volumes_.find(c.volume_path);
  if (it == volumes_.end()) {
    const Volume original = read_volume(dataset_dir_ / c.volume_path);
    Cached entry{original.dims, original.spacing, resample_isotropic(original, model_->config().spacing_mm)};
    it = volumes_.emplace(c.volume_path, std::move(entry)).first;
  }
  if (!box.inside(it->second.dims)) throw std::invalid_argument("box lies outside the volume of case '" + c.case_id + "'");
  // The resampled grid shares the original origin, so physical centres carry over.
  const auto centre = box.center_mm(it->second.spacing);
  const Volume patch = crop_patch(it->second.resampled, centre, model_->config().input_vox);
  NoGradGuard no_grad;
  Rng rng(kEvalSeed);
  const double p = model_->forward(normalize_intensity(patch), rng, false).score;
  return {p > threshold_ ? Call::malignant : Call::benign, p};
}

TableAiProvider::TableAiProvider(std::map<std::string, double> scores, double threshold)
    : scores_(std::move(scores)), threshold_(threshold) {}

AiResult TableAiProvider::classify(const TrialCase& c, const Box&) {
  const auto it = scores_.find(c.case_id);
  if (it == scores_.end()) throw std::invalid_argument("no AI score for case '" + c.case_id + "'");
  return {it->second > threshold_ ? Call::malignant : Call::benign, it->second};
}

}  // namespace nb
