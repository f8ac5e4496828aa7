#pragma once

#include <cstdint>
#include <string>

namespace coda::pipe {

enum class Objective { dino, dino_cb, mae };
Objective objective_from_string(const std::string& s);
std::string objective_to_string(Objective o);

enum class PhaseKind { pretrain, head, adapt };

struct PhasePlan {
  int epochs = 300;
  double lr = 1e-4;
  double warmup_epochs = 10;  // linear 0 -> lr, then cosine to 0 at `epochs`
  double weight_decay = 0.04;
  int batch = 32;
};

struct HeadPlan {
  int epochs = 60;
  double lr = 1e-4;
  double warmup_epochs = 3;  // linear 0 -> lr
  int patience = 5;          // epochs without val loss AND accuracy improvement
  double plateau_factor = 0.1;
  int batch = 32;
  double weight_decay = 1e-4;
};

struct TrainPlan {
  PhasePlan pretrain;
  HeadPlan head;
  PhasePlan adapt{50, 1e-4, 10, 0.04, 32};  // pretrain recipe, shorter horizon
  Objective objective = Objective::dino;
  uint64_t seed = 1;
  int ttt_steps = 10;
  double ttt_lr = 1e-4;

  void validate() const;
};

// Learning rate as a function of fractional epoch. Head phase: linear
// warmup then plateau-triggered multiplicative steps (plateau_steps is
// maintained by the trainer). Pretrain/adapt: linear warmup then cosine
// annealing to 0 at the phase horizon.
double lr_at(const TrainPlan& plan, PhaseKind phase, double epoch, int plateau_steps = 0);

// Head-phase plateau detection: a step fires after `patience` consecutive
// epochs in which neither validation loss nor accuracy improved.
class PlateauTracker {
 public:
  PlateauTracker(int patience, double eps = 1e-9) : patience_(patience), eps_(eps) {}
  // returns true when a plateau step fires this epoch
  bool observe(double val_loss, double val_acc);
  int steps() const { return steps_; }

 private:
  int patience_;
  double eps_;
  double best_loss_ = 1e300, best_acc_ = -1e300;
  int streak_ = 0;
  int steps_ = 0;
};

}  // namespace coda::pipe
