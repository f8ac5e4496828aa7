#include "coda/pipeline/run.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "coda/errors.hpp"
#include "coda/kernels.hpp"

namespace coda::pipe {

// ------------------------------------------------------------------ spec

ModelSpec ModelSpec::defaults() {
  ModelSpec s;
  s.fe = nn::ViTConfig{};  // patch 8, dim 192, depth 6, heads 3
  s.classifier.depth = 2;
  s.classifier.heads = 3;
  s.classifier.dim = 192;
  s.dino.hidden = 512;
  s.dino.bottleneck = 64;
  s.dino.out = 256;
  s.views_single.global_views = 2;
  s.views_single.local_views = 6;
  s.views_pair.global_views = 1;
  s.views_pair.local_views = 3;
  s.supervised_aug.global_views = 1;
  s.supervised_aug.local_views = 0;
  s.supervised_aug.global_scale_lo = 0.85;
  s.supervised_aug.global_scale_hi = 1.0;
  s.supervised_aug.intensity_jitter = 0.0;
  s.supervised_aug.channel_dropout_p = 0.0;
  s.supervised_aug.blur_p = 0.0;
  s.finalize();
  return s;
}

void ModelSpec::finalize() {
  fe.validate();
  classifier.in_dim = fe.dim;
  dino.in = fe.dim;
  views_single.global_size = fe.img_size;
  views_single.local_size = fe.img_size / 2;
  views_pair.global_size = fe.img_size;
  views_pair.local_size = fe.img_size / 2;
  supervised_aug.global_size = fe.img_size;
  supervised_aug.local_size = fe.img_size / 2;
  if (fe.img_size % (2 * fe.patch) != 0)
    throw ShapeError("model spec: img_size must be divisible by 2*patch so local views tile");
}

std::vector<AdaptRecord> strip_labels(const std::vector<data::ImageRecord>& records) {
  std::vector<AdaptRecord> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back(AdaptRecord{r.id, r.source, r.batch, r.plate, r.well, r.treatment, r.site});
  return out;
}

DistillBundle::DistillBundle(const ModelSpec& spec, Rng rng)
    : fe(spec.fe, rng.child("fe")), head(spec.dino, rng.child("dino_head")),
      state(fe, head, spec.distill) {}

DistillBundle::DistillBundle(const DistillBundle& other)
    : fe(other.fe), head(other.head), state(fe, head, other.state.cfg) {
  state.teacher_fe.params.copy_values_from(other.state.teacher_fe.params);
  state.teacher_head.params.copy_values_from(other.state.teacher_head.params);
  state.center = other.state.center;
}

MaeBundle::MaeBundle(const ModelSpec& spec, Rng rng)
    : fe(spec.fe, rng.child("fe")), mae(spec.fe, spec.mae, rng.child("mae_head")) {}

MaeBundle::MaeBundle(const MaeBundle& other) = default;

// ------------------------------------------------------------------ utils

Tensor image_for_model(const Tensor& cached, int img_size) {
  if (cached.dim(1) == img_size && cached.dim(2) == img_size) return cached;
  Tensor out;
  kern::resize_bilinear(cached, out, img_size, img_size);
  return out;
}

static double ce_loss(const std::vector<double>& logits, int label, std::vector<double>* dlogits) {
  const int k = int(logits.size());
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  if (dlogits) {
    dlogits->resize(size_t(k));
    for (int j = 0; j < k; ++j) (*dlogits)[size_t(j)] = std::exp(logits[size_t(j)] - lse);
    (*dlogits)[size_t(label)] -= 1.0;
  }
  return lse - logits[size_t(label)];
}

static void check_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) throw Error(std::string(where) + ": loss diverged (non-finite)");
}

// --------------------------------------------------------- distill loop

namespace {

struct PairSlots {
  std::vector<std::pair<int, int>> slots;
};

int64_t distill_epochs(DistillBundle& b, Objective obj, const std::vector<std::string>& ids,
                       const std::vector<Tensor>& imgs, const views::PairIndex* pairs,
                       const ModelSpec& spec, const TrainPlan& plan, PhaseKind phase,
                       const std::string& metric_phase, const std::string& metric_split,
                       RunRecord* rec, Rng run_rng) {
  const PhasePlan& pp = (phase == PhaseKind::adapt) ? plan.adapt : plan.pretrain;
  const int n = int(ids.size());
  if (n == 0) throw Error("distill loop: empty record set");
  const int B = std::min(pp.batch, n);
  const int steps_per_epoch = (n + B - 1) / B;

  nn::AdamW opt_fe(b.fe.params, pp.weight_decay);
  nn::AdamW opt_head(b.head.params, pp.weight_decay);

  std::vector<nn::GradBuf> gfe, ghd;
  for (int t = 0; t < B; ++t) {
    gfe.emplace_back(b.fe.params);
    ghd.emplace_back(b.head.params);
  }
  nn::GradBuf mfe(b.fe.params), mhd(b.head.params);
  std::vector<double> losses(size_t(B), 0.0);
  std::vector<std::vector<std::vector<double>>> touts(static_cast<size_t>(B));

  double first_epoch_loss = 0.0, last_epoch_loss = 0.0;
  int64_t steps = 0;
  for (int e = 0; e < pp.epochs; ++e) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (obj != Objective::dino_cb) {
      Rng erng = run_rng.child("order", uint64_t(e));
      erng.shuffle(order);
    }
    double esum = 0.0;
    int ecount = 0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const int lo = s * B;
      const int bs = std::min(n, lo + B) - lo;
      const double lr = lr_at(plan, phase, double(e) + double(s) / steps_per_epoch);

      std::vector<std::pair<int, int>> slots(size_t(bs), {-1, -1});
      if (obj == Objective::dino_cb) {
        for (int t = 0; t < bs; ++t) {
          Rng pr = run_rng.child("pair", uint64_t(e) * 1000003 + uint64_t(s), uint64_t(t));
          slots[size_t(t)] = views::sample_cross_batch_pair(*pairs, pr);
        }
      } else {
        for (int t = 0; t < bs; ++t) slots[size_t(t)] = {order[size_t(lo + t)], -1};
      }

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (int t = 0; t < bs; ++t) {
        gfe[size_t(t)].zero();
        ghd[size_t(t)].zero();
        touts[size_t(t)].clear();
        Rng vr = run_rng.child("views", uint64_t(e) * 1000003 + uint64_t(s), uint64_t(t));
        double L;
        if (obj == Objective::dino_cb) {
          const auto [ia, ib] = slots[size_t(t)];
          views::ViewSet vs = views::build_pair_views(imgs[size_t(ia)], imgs[size_t(ib)],
                                                      spec.views_pair, vr, ids[size_t(ia)],
                                                      ids[size_t(ib)]);
          L = ssl::distill_loss_cross_batch(b.state, vs, gfe[size_t(t)].base(),
                                            ghd[size_t(t)].base(), &touts[size_t(t)]);
        } else {
          const int i = slots[size_t(t)].first;
          views::ViewSet vs =
              views::build_views(imgs[size_t(i)], spec.views_single, vr, ids[size_t(i)]);
          L = ssl::distill_loss(b.state, vs, gfe[size_t(t)].base(), ghd[size_t(t)].base(),
                                &touts[size_t(t)]);
        }
        losses[size_t(t)] = L;
      }

      // reduce in slot order so results do not depend on thread count
      mfe.zero();
      mhd.zero();
      std::vector<std::vector<double>> batch_touts;
      for (int t = 0; t < bs; ++t) {
        check_finite(losses[size_t(t)], "distill");
        mfe.add(gfe[size_t(t)]);
        mhd.add(ghd[size_t(t)]);
        esum += losses[size_t(t)];
        ++ecount;
        for (auto& v : touts[size_t(t)]) batch_touts.push_back(std::move(v));
      }
      const double inv = 1.0 / bs;
      for (auto& v : mfe.g) v *= inv;
      for (auto& v : mhd.g) v *= inv;
      opt_fe.step(b.fe.params, mfe.base(), lr);
      opt_head.step(b.head.params, mhd.base(), lr);
      ssl::ema_update(b.state);
      ssl::center_update(b.state, batch_touts);
      ++steps;
    }
    const double epoch_loss = esum / ecount;
    if (e == 0) first_epoch_loss = epoch_loss;
    last_epoch_loss = epoch_loss;
    if (rec) rec->metric(metric_phase, e, metric_split, "loss", epoch_loss);
  }
  if (rec && pp.epochs > 1 && last_epoch_loss >= first_epoch_loss)
    rec->log("note: " + metric_phase + " loss did not decrease (" +
             std::to_string(first_epoch_loss) + " -> " + std::to_string(last_epoch_loss) + ")");
  return steps;
}

}  // namespace

// ------------------------------------------------------------- pretrain

void run_pretrain(DistillBundle& bundle, Objective objective,
                  const std::vector<data::ImageRecord>& records, const data::ImageCache& cache,
                  const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec) {
  if (objective == Objective::mae) throw Error("run_pretrain: use run_pretrain_mae for the mae objective");
  std::vector<std::string> ids = record_ids(records);
  std::vector<Tensor> imgs(ids.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int64_t i = 0; i < int64_t(ids.size()); ++i)
    imgs[size_t(i)] = image_for_model(cache.get(ids[size_t(i)]), spec.fe.img_size);

  views::PairIndex pairs;
  if (objective == Objective::dino_cb) {
    pairs = views::PairIndex::build(records);
    if (!pairs.has_pairs())
      throw PairIneligible("cross-batch pretraining needs a treatment present in >= 2 batches");
  }
  Rng run_rng = Rng(plan.seed).child("pretrain");
  distill_epochs(bundle, objective, ids, imgs, &pairs, spec, plan, PhaseKind::pretrain, "pretrain",
                 "train", rec, run_rng);
}

void run_pretrain_mae(MaeBundle& bundle, const std::vector<data::ImageRecord>& records,
                      const data::ImageCache& cache, const ModelSpec& spec, const TrainPlan& plan,
                      RunRecord* rec) {
  const int n = int(records.size());
  if (n == 0) throw Error("mae pretraining: empty record set");
  std::vector<std::string> ids = record_ids(records);
  std::vector<Tensor> imgs(ids.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int64_t i = 0; i < int64_t(ids.size()); ++i)
    imgs[size_t(i)] = image_for_model(cache.get(ids[size_t(i)]), spec.fe.img_size);

  const PhasePlan& pp = plan.pretrain;
  const int B = std::min(pp.batch, n);
  const int steps_per_epoch = (n + B - 1) / B;
  nn::AdamW opt_fe(bundle.fe.params, pp.weight_decay);
  nn::AdamW opt_head(bundle.mae.params, pp.weight_decay);
  std::vector<nn::GradBuf> gfe, ghd;
  for (int t = 0; t < B; ++t) {
    gfe.emplace_back(bundle.fe.params);
    ghd.emplace_back(bundle.mae.params);
  }
  nn::GradBuf mfe(bundle.fe.params), mhd(bundle.mae.params);
  std::vector<double> losses(size_t(B), 0.0);
  Rng run_rng = Rng(plan.seed).child("pretrain_mae");

  for (int e = 0; e < pp.epochs; ++e) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng erng = run_rng.child("order", uint64_t(e));
    erng.shuffle(order);
    double esum = 0.0;
    int ecount = 0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const int lo = s * B;
      const int bs = std::min(n, lo + B) - lo;
      const double lr = lr_at(plan, PhaseKind::pretrain, double(e) + double(s) / steps_per_epoch);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (int t = 0; t < bs; ++t) {
        gfe[size_t(t)].zero();
        ghd[size_t(t)].zero();
        const int i = order[size_t(lo + t)];
        Rng mr = run_rng.child("mask", uint64_t(e) * 1000003 + uint64_t(s), uint64_t(t));
        losses[size_t(t)] = bundle.mae.forward(bundle.fe, imgs[size_t(i)], mr, nullptr,
                                               gfe[size_t(t)].base(), ghd[size_t(t)].base());
      }
      mfe.zero();
      mhd.zero();
      for (int t = 0; t < bs; ++t) {
        check_finite(losses[size_t(t)], "mae");
        mfe.add(gfe[size_t(t)]);
        mhd.add(ghd[size_t(t)]);
        esum += losses[size_t(t)];
        ++ecount;
      }
      const double inv = 1.0 / bs;
      for (auto& v : mfe.g) v *= inv;
      for (auto& v : mhd.g) v *= inv;
      opt_fe.step(bundle.fe.params, mfe.base(), lr);
      opt_head.step(bundle.mae.params, mhd.base(), lr);
    }
    if (rec) rec->metric("pretrain", e, "train", "loss", esum / ecount);
  }
}

// ----------------------------------------------------------------- head

namespace {

std::vector<const data::ImageRecord*> labeled_only(const std::vector<data::ImageRecord>& recs) {
  std::vector<const data::ImageRecord*> out;
  for (const auto& r : recs)
    if (r.labeled()) out.push_back(&r);
  return out;
}

// frozen-extractor token cache
std::vector<Tensor> fe_tokens(const nn::VisionTransformer& fe,
                              const std::vector<const data::ImageRecord*>& recs,
                              const data::ImageCache& cache) {
  std::vector<Tensor> toks(recs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
  for (int64_t i = 0; i < int64_t(recs.size()); ++i) {
    nn::VisionTransformer::Cache c;
    toks[size_t(i)] = fe.forward(image_for_model(cache.get(recs[size_t(i)]->id), fe.cfg.img_size), c);
  }
  return toks;
}

}  // namespace

HeadResult run_head(nn::DualModel& dual, const std::vector<data::ImageRecord>& train,
                    const std::vector<data::ImageRecord>& val, const data::ImageCache& cache,
                    const TrainPlan& plan, RunRecord* rec) {
  auto train_recs = labeled_only(train);
  auto val_recs = labeled_only(val);
  if (train_recs.empty()) throw NoLabels("classifier training requires labeled records");

  dual.set_phase(nn::Phase::head);
  const std::vector<Tensor> train_toks = fe_tokens(dual.fe, train_recs, cache);
  const std::vector<Tensor> val_toks = fe_tokens(dual.fe, val_recs, cache);

  const HeadPlan& hp = plan.head;
  const int n = int(train_recs.size());
  const int B = std::min(hp.batch, n);
  const int steps_per_epoch = (n + B - 1) / B;
  nn::AdamW opt(dual.classifier.params, hp.weight_decay);
  std::vector<nn::GradBuf> g;
  for (int t = 0; t < B; ++t) g.emplace_back(dual.classifier.params);
  nn::GradBuf master(dual.classifier.params);
  std::vector<double> losses(size_t(B), 0.0);

  PlateauTracker plateau(hp.patience);
  HeadResult best;
  best.best_val_acc = -1.0;
  std::vector<double> best_params = dual.classifier.params.flat();
  Rng run_rng = Rng(plan.seed).child("head");

  for (int e = 0; e < hp.epochs; ++e) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng erng = run_rng.child("order", uint64_t(e));
    erng.shuffle(order);
    double esum = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const int lo = s * B;
      const int bs = std::min(n, lo + B) - lo;
      const double lr = lr_at(plan, PhaseKind::head, double(e) + double(s) / steps_per_epoch,
                              plateau.steps());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (int t = 0; t < bs; ++t) {
        g[size_t(t)].zero();
        const int i = order[size_t(lo + t)];
        nn::TokenClassifier::Cache cc;
        auto logits = dual.classifier.logits(train_toks[size_t(i)], cc);
        std::vector<double> dl;
        losses[size_t(t)] = ce_loss(logits, train_recs[size_t(i)]->moa_label, &dl);
        dual.classifier.backward(cc, dl, g[size_t(t)].base());
      }
      master.zero();
      for (int t = 0; t < bs; ++t) {
        check_finite(losses[size_t(t)], "head");
        master.add(g[size_t(t)]);
        esum += losses[size_t(t)];
      }
      for (auto& v : master.g) v /= bs;
      opt.step(dual.classifier.params, master.base(), lr);
    }

    // validation pass
    double vloss_sum = 0.0;
    int vcorrect = 0;
    std::vector<double> vloss(val_recs.size(), 0.0);
    std::vector<int> vhit(val_recs.size(), 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int64_t i = 0; i < int64_t(val_recs.size()); ++i) {
      nn::TokenClassifier::Cache cc;
      auto logits = dual.classifier.logits(val_toks[size_t(i)], cc);
      vloss[size_t(i)] = ce_loss(logits, val_recs[size_t(i)]->moa_label, nullptr);
      const int pred = int(std::max_element(logits.begin(), logits.end()) - logits.begin());
      vhit[size_t(i)] = pred == val_recs[size_t(i)]->moa_label ? 1 : 0;
    }
    for (size_t i = 0; i < val_recs.size(); ++i) {
      vloss_sum += vloss[i];
      vcorrect += vhit[i];
    }
    const double val_loss = val_recs.empty() ? 0.0 : vloss_sum / double(val_recs.size());
    const double val_acc = val_recs.empty() ? 0.0 : double(vcorrect) / double(val_recs.size());
    if (rec) {
      rec->metric("head", e, "train", "loss", esum / n);
      rec->metric("head", e, "val", "loss", val_loss);
      rec->metric("head", e, "val", "accuracy", val_acc);
    }
    if (val_acc > best.best_val_acc ||
        (val_acc == best.best_val_acc && val_loss < best.best_val_loss)) {
      best.best_val_acc = val_acc;
      best.best_val_loss = val_loss;
      best.best_epoch = e;
      best_params = dual.classifier.params.flat();
    }
    if (plateau.observe(val_loss, val_acc) && rec)
      rec->log("head: plateau step -> lr factor " + std::to_string(plateau.steps()));
  }
  dual.classifier.params.flat() = best_params;
  best.plateau_steps = plateau.steps();
  return best;
}

// ----------------------------------------------------------- supervised

HeadResult run_supervised(nn::SupervisedViT& model, const std::vector<data::ImageRecord>& train,
                          const std::vector<data::ImageRecord>& val, const data::ImageCache& cache,
                          const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec) {
  auto train_recs = labeled_only(train);
  auto val_recs = labeled_only(val);
  if (train_recs.empty()) throw NoLabels("supervised training requires labeled records");

  std::vector<Tensor> train_imgs(train_recs.size()), val_imgs(val_recs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int64_t i = 0; i < int64_t(train_recs.size()); ++i)
    train_imgs[size_t(i)] = image_for_model(cache.get(train_recs[size_t(i)]->id), spec.fe.img_size);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int64_t i = 0; i < int64_t(val_recs.size()); ++i)
    val_imgs[size_t(i)] = image_for_model(cache.get(val_recs[size_t(i)]->id), spec.fe.img_size);

  const HeadPlan& hp = plan.head;
  const int n = int(train_recs.size());
  const int B = std::min(hp.batch, n);
  const int steps_per_epoch = (n + B - 1) / B;
  nn::AdamW opt_fe(model.fe.params, hp.weight_decay);
  nn::AdamW opt_head(model.head_params, hp.weight_decay);
  std::vector<nn::GradBuf> gfe, ghd;
  for (int t = 0; t < B; ++t) {
    gfe.emplace_back(model.fe.params);
    ghd.emplace_back(model.head_params);
  }
  nn::GradBuf mfe(model.fe.params), mhd(model.head_params);
  std::vector<double> losses(size_t(B), 0.0);

  PlateauTracker plateau(hp.patience);
  HeadResult best;
  best.best_val_acc = -1.0;
  std::vector<double> best_fe = model.fe.params.flat();
  std::vector<double> best_head = model.head_params.flat();
  Rng run_rng = Rng(plan.seed).child("supervised");

  for (int e = 0; e < hp.epochs; ++e) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng erng = run_rng.child("order", uint64_t(e));
    erng.shuffle(order);
    for (int s = 0; s < steps_per_epoch; ++s) {
      const int lo = s * B;
      const int bs = std::min(n, lo + B) - lo;
      const double lr = lr_at(plan, PhaseKind::head, double(e) + double(s) / steps_per_epoch,
                              plateau.steps());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (int t = 0; t < bs; ++t) {
        gfe[size_t(t)].zero();
        ghd[size_t(t)].zero();
        const int i = order[size_t(lo + t)];
        Rng vr = run_rng.child("aug", uint64_t(e) * 1000003 + uint64_t(s), uint64_t(t));
        views::ViewSet vs = views::build_views(train_imgs[size_t(i)], spec.supervised_aug, vr,
                                               train_recs[size_t(i)]->id);
        nn::SupervisedViT::Cache c;
        auto logits = model.logits(vs.global_views[0], c);
        std::vector<double> dl;
        losses[size_t(t)] = ce_loss(logits, train_recs[size_t(i)]->moa_label, &dl);
        model.backward(c, dl, gfe[size_t(t)].base(), ghd[size_t(t)].base());
      }
      mfe.zero();
      mhd.zero();
      for (int t = 0; t < bs; ++t) {
        check_finite(losses[size_t(t)], "supervised");
        mfe.add(gfe[size_t(t)]);
        mhd.add(ghd[size_t(t)]);
      }
      const double inv = 1.0 / bs;
      for (auto& v : mfe.g) v *= inv;
      for (auto& v : mhd.g) v *= inv;
      opt_fe.step(model.fe.params, mfe.base(), lr);
      opt_head.step(model.head_params, mhd.base(), lr);
    }

    double vloss_sum = 0.0;
    int vcorrect = 0;
    std::vector<double> vloss(val_recs.size(), 0.0);
    std::vector<int> vhit(val_recs.size(), 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int64_t i = 0; i < int64_t(val_recs.size()); ++i) {
      nn::SupervisedViT::Cache c;
      auto logits = model.logits(val_imgs[size_t(i)], c);
      vloss[size_t(i)] = ce_loss(logits, val_recs[size_t(i)]->moa_label, nullptr);
      const int pred = int(std::max_element(logits.begin(), logits.end()) - logits.begin());
      vhit[size_t(i)] = pred == val_recs[size_t(i)]->moa_label ? 1 : 0;
    }
    for (size_t i = 0; i < val_recs.size(); ++i) {
      vloss_sum += vloss[i];
      vcorrect += vhit[i];
    }
    const double val_loss = val_recs.empty() ? 0.0 : vloss_sum / double(val_recs.size());
    const double val_acc = val_recs.empty() ? 0.0 : double(vcorrect) / double(val_recs.size());
    if (rec) {
      rec->metric("supervised", e, "val", "loss", val_loss);
      rec->metric("supervised", e, "val", "accuracy", val_acc);
    }
    if (val_acc > best.best_val_acc ||
        (val_acc == best.best_val_acc && val_loss < best.best_val_loss)) {
      best.best_val_acc = val_acc;
      best.best_val_loss = val_loss;
      best.best_epoch = e;
      best_fe = model.fe.params.flat();
      best_head = model.head_params.flat();
    }
    plateau.observe(val_loss, val_acc);
  }
  model.fe.params.flat() = best_fe;
  model.head_params.flat() = best_head;
  best.plateau_steps = plateau.steps();
  return best;
}

// ------------------------------------------------------------------ adapt

std::vector<AdaptedModel> run_adapt(const DistillBundle& start, Objective objective,
                                    const std::vector<AdaptRecord>& records,
                                    const data::ImageCache& cache, const AdaptScope& scope,
                                    const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec) {
  if (objective == Objective::mae)
    throw Error("run_adapt: the mae objective adapts per image via run_ttt");

  auto id_of = [&](const AdaptRecord& r) -> const std::string& {
    switch (scope.level) {
      case data::Scope::source: return r.source;
      case data::Scope::batch: return r.batch;
      case data::Scope::plate: return r.plate;
    }
    return r.source;
  };

  std::vector<std::string> scope_ids = scope.target_ids;
  if (scope_ids.empty()) {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(id_of(r));
    scope_ids.assign(s.begin(), s.end());
  }

  std::vector<AdaptedModel> out;
  for (const auto& sid : scope_ids) {
    std::vector<AdaptRecord> sub;
    for (const auto& r : records)
      if (id_of(r) == sid) sub.push_back(r);
    if (sub.empty())
      throw UnknownScopeId("no records under " + data::scope_to_string(scope.level) + " '" + sid + "'");

    Objective obj = objective;
    views::PairIndex pairs;
    if (obj == Objective::dino_cb) {
      pairs = views::PairIndex::build(sub);
      if (!pairs.has_pairs()) {
        if (scope.level == data::Scope::source)
          throw PairIneligible("cross-batch adaptation: no treatment spans two batches in '" + sid +
                               "'");
        if (rec)
          rec->log("adapt " + sid + ": no cross-batch pairs at " +
                   data::scope_to_string(scope.level) + " scope, falling back to single-image");
        obj = Objective::dino;
      }
    }

    std::vector<std::string> ids = record_ids(sub);
    std::vector<Tensor> imgs(ids.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (int64_t i = 0; i < int64_t(ids.size()); ++i)
      imgs[size_t(i)] = image_for_model(cache.get(ids[size_t(i)]), spec.fe.img_size);

    AdaptedModel m;
    m.scope_id = sid;
    m.fell_back_to_single_image = (obj != objective);
    m.bundle = std::make_shared<DistillBundle>(start);
    // the teacher restarts as a copy of the student at phase start; the
    // projection head and center carry over from pretraining
    m.bundle->state.reset_teacher_from_student();
    Rng run_rng = Rng(plan.seed).child("adapt", Rng::fnv1a(sid));
    m.optimizer_steps = distill_epochs(*m.bundle, obj, ids, imgs, &pairs, spec, plan,
                                       PhaseKind::adapt, "adapt", sid, rec, run_rng);
    out.push_back(std::move(m));
  }
  return out;
}

// -------------------------------------------------------------------- ttt

TttResult run_ttt(const MaeBundle& start, const nn::TokenClassifier& classifier,
                  const std::vector<AdaptRecord>& records, const data::ImageCache& cache,
                  const ModelSpec& spec, const TrainPlan& plan, RunRecord* rec) {
  TttResult result;
  result.steps_per_image = plan.ttt_steps;
  result.predictions.assign(records.size(), -1);
  Rng run_rng = Rng(plan.seed).child("ttt");

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int64_t i = 0; i < int64_t(records.size()); ++i) {
    const AdaptRecord& r = records[size_t(i)];
    const Tensor img = image_for_model(cache.get(r.id), spec.fe.img_size);
    MaeBundle local(start);  // reset to checkpoint for every image
    nn::GradBuf gfe(local.fe.params), gh(local.mae.params);
    for (int k = 0; k < plan.ttt_steps; ++k) {
      gfe.zero();
      gh.zero();
      Rng mr = run_rng.child("mask", Rng::fnv1a(r.id), uint64_t(k));
      const double loss =
          local.mae.forward(local.fe, img, mr, nullptr, gfe.base(), gh.base());
      check_finite(loss, "ttt");
      nn::sgd_step(local.fe.params, gfe.base(), plan.ttt_lr);
      nn::sgd_step(local.mae.params, gh.base(), plan.ttt_lr);
    }
    nn::VisionTransformer::Cache c;
    Tensor tokens = local.fe.forward(img, c);
    nn::TokenClassifier::Cache cc;
    auto logits = classifier.logits(tokens, cc);
    result.predictions[size_t(i)] =
        int(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  if (rec)
    rec->log("ttt: " + std::to_string(records.size()) + " images, " +
             std::to_string(plan.ttt_steps) + " steps each");
  return result;
}

// ---------------------------------------------------------------- predict

std::vector<std::vector<double>> dual_logits(const nn::VisionTransformer& fe,
                                             const nn::TokenClassifier& cls,
                                             const std::vector<std::string>& ids,
                                             const data::ImageCache& cache) {
  std::vector<std::vector<double>> out(ids.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
  for (int64_t i = 0; i < int64_t(ids.size()); ++i) {
    nn::VisionTransformer::Cache c;
    Tensor tokens = fe.forward(image_for_model(cache.get(ids[size_t(i)]), fe.cfg.img_size), c);
    nn::TokenClassifier::Cache cc;
    out[size_t(i)] = cls.logits(tokens, cc);
  }
  return out;
}

std::vector<int> argmax_rows(const std::vector<std::vector<double>>& logits) {
  std::vector<int> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    out[i] = int(std::max_element(logits[i].begin(), logits[i].end()) - logits[i].begin());
  return out;
}

std::vector<int> predict_dual(const nn::VisionTransformer& fe, const nn::TokenClassifier& cls,
                              const std::vector<std::string>& ids, const data::ImageCache& cache) {
  return argmax_rows(dual_logits(fe, cls, ids, cache));
}

std::vector<int> predict_supervised(const nn::SupervisedViT& model,
                                    const std::vector<std::string>& ids,
                                    const data::ImageCache& cache) {
  std::vector<int> out(ids.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
  for (int64_t i = 0; i < int64_t(ids.size()); ++i) {
    nn::SupervisedViT::Cache c;
    auto logits =
        model.logits(image_for_model(cache.get(ids[size_t(i)]), model.fe.cfg.img_size), c);
    out[size_t(i)] = int(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  return out;
}

}  // namespace coda::pipe
