#pragma once

#include <vector>

#include "coda/nn/models.hpp"
#include "coda/views/views.hpp"

namespace coda::ssl {

struct DistillConfig {
  double teacher_temp = 0.04;   // sharper than the student
  double student_temp = 0.1;
  double ema_decay = 0.996;     // fixed, no schedule
  double center_momentum = 0.9;
};

// Student/teacher self-distillation state. The student feature extractor
// and projection head are shared with the owning model; the teacher is a
// same-shape copy updated only through ema_update, and the center only
// through center_update — no loss call writes either.
struct DistillState {
  nn::VisionTransformer* student_fe = nullptr;
  nn::DinoHead* student_head = nullptr;
  nn::VisionTransformer teacher_fe;
  nn::DinoHead teacher_head;
  std::vector<double> center;
  DistillConfig cfg;

  DistillState(nn::VisionTransformer& sfe, nn::DinoHead& shead, const DistillConfig& config);
  void reset_teacher_from_student();
};

// Pair-sum core on raw projector outputs: mean over ordered pairs
// (teacher global view v, student view u), u != v, of
// H(softmax((t_v - c)/tt), softmax(s_u/ts)). Student views are ordered
// globals-first so teacher view v corresponds to student view v.
// `dstudent` receives dLoss/d(student logits); `pair_terms` (g x V) the
// individual cross-entropies.
double distill_pair_core(const std::vector<std::vector<double>>& teacher_out,
                         const std::vector<std::vector<double>>& student_out, int n_globals,
                         const std::vector<double>& center, double teacher_temp,
                         double student_temp,
                         std::vector<std::vector<double>>* dstudent = nullptr,
                         Tensor* pair_terms = nullptr);

// Full objective on a view set. Teacher consumes global views only, the
// student all views; gradients (if sinks given) reach only the student.
// `teacher_collect` appends raw teacher outputs for the center update.
double distill_loss(const DistillState& state, const views::ViewSet& views, double* g_fe = nullptr,
                    double* g_head = nullptr,
                    std::vector<std::vector<double>>* teacher_collect = nullptr,
                    Tensor* pair_terms = nullptr);

// Same pair-sum over a cross-batch pair view set (2 globals, two
// provenance ids): teacher globals of one image supervise student views of
// the other, which is what penalizes batch-specific features.
double distill_loss_cross_batch(const DistillState& state, const views::ViewSet& pair_views,
                                double* g_fe = nullptr, double* g_head = nullptr,
                                std::vector<std::vector<double>>* teacher_collect = nullptr,
                                Tensor* pair_terms = nullptr);

// theta_t <- decay*theta_t + (1-decay)*theta_s over extractor and head.
void ema_update(DistillState& state);

// c <- m*c + (1-m)*batch_mean over collected teacher outputs.
void center_update(DistillState& state, const std::vector<std::vector<double>>& teacher_outputs);

}  // namespace coda::ssl
