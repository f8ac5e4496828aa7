#include "coda/pipeline/plan.hpp"

#include <cmath>

#include "coda/errors.hpp"

namespace coda::pipe {

Objective objective_from_string(const std::string& s) {
  if (s == "dino") return Objective::dino;
  if (s == "dino_cb") return Objective::dino_cb;
  if (s == "mae") return Objective::mae;
  throw ConfigValidationError("unknown objective '" + s + "' (expected dino|dino_cb|mae)");
}

std::string objective_to_string(Objective o) {
  switch (o) {
    case Objective::dino: return "dino";
    case Objective::dino_cb: return "dino_cb";
    case Objective::mae: return "mae";
  }
  return "?";
}

void TrainPlan::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw ConfigValidationError(std::string("train plan: ") + msg);
  };
  need(pretrain.lr > 0 && head.lr > 0 && adapt.lr > 0, "learning rates must be > 0");
  need(pretrain.epochs >= 1 && head.epochs >= 1 && adapt.epochs >= 1, "epochs must be >= 1");
  need(pretrain.batch >= 1 && head.batch >= 1 && adapt.batch >= 1, "batch sizes must be >= 1");
  need(head.patience >= 1, "head patience must be >= 1");
  need(ttt_steps >= 0, "ttt steps must be >= 0");
}

static double warmup_cosine(const PhasePlan& p, double epoch) {
  if (epoch <= 0.0) return 0.0;
  if (epoch < p.warmup_epochs) return p.lr * epoch / p.warmup_epochs;
  const double horizon = double(p.epochs);
  if (epoch >= horizon) return 0.0;
  const double t = (epoch - p.warmup_epochs) / (horizon - p.warmup_epochs);
  return p.lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

double lr_at(const TrainPlan& plan, PhaseKind phase, double epoch, int plateau_steps) {
  switch (phase) {
    case PhaseKind::pretrain:
      return warmup_cosine(plan.pretrain, epoch);
    case PhaseKind::adapt:
      return warmup_cosine(plan.adapt, epoch);
    case PhaseKind::head: {
      const HeadPlan& h = plan.head;
      const double base =
          epoch < h.warmup_epochs ? h.lr * std::max(epoch, 0.0) / h.warmup_epochs : h.lr;
      return base * std::pow(h.plateau_factor, double(plateau_steps));
    }
  }
  return 0.0;
}

bool PlateauTracker::observe(double val_loss, double val_acc) {
  const bool improved = (val_loss < best_loss_ - eps_) || (val_acc > best_acc_ + eps_);
  best_loss_ = std::min(best_loss_, val_loss);
  best_acc_ = std::max(best_acc_, val_acc);
  if (improved) {
    streak_ = 0;
    return false;
  }
  if (++streak_ >= patience_) {
    streak_ = 0;
    ++steps_;
    return true;
  }
  return false;
}

}  // namespace coda::pipe
