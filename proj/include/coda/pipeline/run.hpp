#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coda/data/manifest.hpp"
#include "coda/eval/metrics.hpp"
#include "coda/nn/models.hpp"
#include "coda/pipeline/plan.hpp"
#include "coda/pipeline/record.hpp"
#include "coda/ssl/distill.hpp"
#include "coda/views/views.hpp"

namespace coda::pipe {

// Architecture + augmentation settings for one experiment.
struct ModelSpec {
  nn::ViTConfig fe;
  nn::ClassifierConfig classifier;       // in_dim forced to fe.dim
  nn::DinoHeadConfig dino;               // in forced to fe.dim
  nn::MaeConfig mae;
  ssl::DistillConfig distill;
  views::ViewConfig views_single;        // 2 global + 6 local per image
  views::ViewConfig views_pair;          // 1 global + 3 local per pair member
  views::ViewConfig supervised_aug;      // light crop/flip train augmentation

  static ModelSpec defaults();
  void finalize();  // propagate derived fields, validate
};

// Label-free view of a record: the adaptation code path is constructed
// over these, so target labels are unreachable by that code.
struct AdaptRecord {
  std::string id, source, batch, plate, well, treatment;
  int site = 0;
};
std::vector<AdaptRecord> strip_labels(const std::vector<data::ImageRecord>& records);

// Student + teacher + projection heads for one distillation run.
struct DistillBundle {
  nn::VisionTransformer fe;   // student; becomes the dual model's extractor
  nn::DinoHead head;
  ssl::DistillState state;

  DistillBundle(const ModelSpec& spec, Rng rng);
  DistillBundle(const DistillBundle& other);  // deep copy (teacher + center included)
};

struct MaeBundle {
  nn::VisionTransformer fe;
  nn::MaeHead mae;
  MaeBundle(const ModelSpec& spec, Rng rng);
  MaeBundle(const MaeBundle& other);
};

// ------------------------------------------------------------------ phases

// Self-distillation pretraining (objective dino or dino_cb) on the given
// records. Throws PairIneligible when dino_cb finds no cross-batch
// treatment. Logs per-epoch loss into `rec` when given.
void run_pretrain(DistillBundle& bundle, Objective objective,
                  const std::vector<data::ImageRecord>& records, const data::ImageCache& cache,
                  const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec);

void run_pretrain_mae(MaeBundle& bundle, const std::vector<data::ImageRecord>& records,
                      const data::ImageCache& cache, const ModelSpec& spec, const TrainPlan& plan,
                      RunRecord* rec);

struct HeadResult {
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = -1;
  int plateau_steps = 0;
};

// Classifier stacking on a frozen extractor (cross-entropy over labeled
// records; unlabeled records are excluded). Restores the best-validation
// classifier before returning. Throws NoLabels when nothing is labeled.
HeadResult run_head(nn::DualModel& dual, const std::vector<data::ImageRecord>& train,
                    const std::vector<data::ImageRecord>& val, const data::ImageCache& cache,
                    const TrainPlan& plan, RunRecord* rec);

// Standalone supervised baseline, best-validation weights restored.
HeadResult run_supervised(nn::SupervisedViT& model, const std::vector<data::ImageRecord>& train,
                          const std::vector<data::ImageRecord>& val, const data::ImageCache& cache,
                          const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec);

// ---------------------------------------------------------------- adaptation

struct AdaptScope {
  data::Scope level = data::Scope::source;
  std::vector<std::string> target_ids;  // empty -> every id present at the level
};

struct AdaptedModel {
  std::string scope_id;
  std::shared_ptr<DistillBundle> bundle;  // adapted student extractor inside
  bool fell_back_to_single_image = false;
  int64_t optimizer_steps = 0;
};

// Online adaptation of the extractor on unlabeled target records; one
// adapted model per scope id. The classifier is never passed in, let alone
// updated. `objective` dino -> single-image adaptation, dino_cb ->
// cross-batch adaptation (plate/batch scopes without eligible pairs fall
// back to single-image with a logged warning; an ineligible source scope
// throws PairIneligible).
std::vector<AdaptedModel> run_adapt(const DistillBundle& start, Objective objective,
                                    const std::vector<AdaptRecord>& records,
                                    const data::ImageCache& cache, const AdaptScope& scope,
                                    const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec);

// --------------------------------------------------------------------- TTT

struct TttResult {
  std::vector<int> predictions;  // aligned with `records`
  int steps_per_image = 0;
};

// Per-image test-time training: reset extractor to the checkpoint, take
// plan.ttt_steps reconstruction-loss gradient steps on that image alone,
// predict through the frozen classifier, discard the adapted weights.
TttResult run_ttt(const MaeBundle& start, const nn::TokenClassifier& classifier,
                  const std::vector<AdaptRecord>& records, const data::ImageCache& cache,
                  const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec);

// ------------------------------------------------------------------ predict

Tensor image_for_model(const Tensor& cached, int img_size);

std::vector<std::vector<double>> dual_logits(const nn::VisionTransformer& fe,
                                             const nn::TokenClassifier& cls,
                                             const std::vector<std::string>& record_ids,
                                             const data::ImageCache& cache);
std::vector<int> argmax_rows(const std::vector<std::vector<double>>& logits);

std::vector<int> predict_dual(const nn::VisionTransformer& fe, const nn::TokenClassifier& cls,
                              const std::vector<std::string>& record_ids,
                              const data::ImageCache& cache);
std::vector<int> predict_supervised(const nn::SupervisedViT& model,
                                    const std::vector<std::string>& record_ids,
                                    const data::ImageCache& cache);

template <typename R>
std::vector<std::string> record_ids(const std::vector<R>& records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.id);
  return ids;
}

template <typename R>
std::vector<int> record_labels(const std::vector<R>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.moa_label);
  return out;
}

}  // namespace coda::pipe
