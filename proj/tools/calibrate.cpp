// Scratch harness for sizing the desk benchmark: generates a synthetic
// dataset, trains the model family on one source and reports in/out-of-
// domain accuracy for each method. Not part of the test suite.

#include <cstdio>
#include <filesystem>

#include "coda/data/manifest.hpp"
#include "coda/eval/metrics.hpp"
#include "coda/expconfig.hpp"
#include "coda/pipeline/run.hpp"
#include "coda/synth/generator.hpp"

using namespace coda;
namespace fs = std::filesystem;

static std::vector<data::ImageRecord> by_batch(const data::DatasetIndex& idx,
                                               const std::vector<std::string>& batches) {
  auto [held, rest] = data::split_by_scope(idx, data::Scope::batch, batches);
  (void)rest;
  return held.records;
}

int main(int argc, char** argv) {
  Config c;
  for (int i = 1; i < argc; ++i) c.apply_override(argv[i]);

  const std::string work = c.str("out", "/tmp/coda_calib");
  const uint64_t seed = uint64_t(c.integer("seed", 1));
  c.set("seed", std::to_string(seed));

  // --- dataset ---------------------------------------------------------
  if (!c.has("generator.sites_per_well")) c.set("generator.sites_per_well", "16");
  if (!c.has("generator.height")) c.set("generator.height", "32");
  if (!c.has("generator.width")) c.set("generator.width", "32");
  synth::GeneratorConfig gc = cfg::generator_from(c);
  synth::Generator gen(gc);
  const std::string dsdir = work + "/data_seed" + std::to_string(seed);
  if (!fs::exists(dsdir + "/manifest.csv")) {
    std::printf("generating dataset under %s ...\n", dsdir.c_str());
    gen.generate(dsdir);
  }
  data::ManifestSchema schema;
  schema.channel_count = gc.channels;
  data::DatasetIndex index = data::load_manifest(dsdir + "/manifest.csv", schema);
  data::ImageCache cache(index, gc.height, gc.width);
  std::printf("dataset: %zu records, K=%d\n", index.records.size(), index.class_count);

  // --- model + plan ----------------------------------------------------
  if (!c.has("model.img_size")) c.set("model.img_size", "32");
  if (!c.has("model.dim")) c.set("model.dim", "64");
  if (!c.has("model.depth")) c.set("model.depth", "4");
  if (!c.has("model.heads")) c.set("model.heads", "4");
  if (!c.has("model.mlp_ratio")) c.set("model.mlp_ratio", "2.0");
  if (!c.has("classifier.dim")) c.set("classifier.dim", "64");
  if (!c.has("classifier.heads")) c.set("classifier.heads", "4");
  if (!c.has("classifier.mlp_ratio")) c.set("classifier.mlp_ratio", "2.0");
  if (!c.has("dino.hidden")) c.set("dino.hidden", "128");
  if (!c.has("dino.bottleneck")) c.set("dino.bottleneck", "32");
  if (!c.has("dino.out")) c.set("dino.out", "128");
  if (!c.has("mae.dec_dim")) c.set("mae.dec_dim", "48");
  if (!c.has("mae.dec_heads")) c.set("mae.dec_heads", "4");
  if (!c.has("plan.pretrain.epochs")) c.set("plan.pretrain.epochs", "24");
  if (!c.has("plan.pretrain.lr")) c.set("plan.pretrain.lr", "3e-4");
  if (!c.has("plan.pretrain.warmup_epochs")) c.set("plan.pretrain.warmup_epochs", "2");
  if (!c.has("plan.pretrain.batch")) c.set("plan.pretrain.batch", "16");
  if (!c.has("plan.head.epochs")) c.set("plan.head.epochs", "40");
  if (!c.has("plan.head.lr")) c.set("plan.head.lr", "3e-4");
  if (!c.has("plan.head.batch")) c.set("plan.head.batch", "16");
  if (!c.has("plan.adapt.epochs")) c.set("plan.adapt.epochs", "6");
  if (!c.has("plan.adapt.warmup_epochs")) c.set("plan.adapt.warmup_epochs", "1");

  pipe::ModelSpec spec = cfg::model_from(c);
  pipe::TrainPlan plan = cfg::plan_from(c);
  spec.classifier.classes = index.class_count;

  // --- splits ----------------------------------------------------------
  const std::string s0 = "s0";
  auto train = by_batch(index, {"s0_b0", "s0_b1"});
  auto val = by_batch(index, {"s0_b2"});
  auto id_test = by_batch(index, {"s0_b3"});
  std::printf("splits: train=%zu val=%zu id_test=%zu\n", train.size(), val.size(), id_test.size());

  auto eval_acc = [&](const std::vector<int>& preds, const std::vector<data::ImageRecord>& recs) {
    return eval::score(preds, pipe::record_labels(recs), index.class_count).accuracy;
  };

  std::vector<std::string> targets = {"s1", "s2", "s3"};
  std::map<std::string, std::vector<data::ImageRecord>> target_recs;
  for (auto& t : targets) {
    auto [held, rest] = data::split_by_scope(index, data::Scope::source, {t});
    (void)rest;
    target_recs[t] = held.records;
  }

  // --- supervised baseline --------------------------------------------
  if (c.boolean("run.supervised", true)) {
    nn::SupervisedViT sup(spec.fe, index.class_count, Rng(seed).child("supmodel"));
    auto res = pipe::run_supervised(sup, train, val, cache, spec, plan, nullptr);
    const double id_acc = eval_acc(pipe::predict_supervised(sup, pipe::record_ids(id_test), cache), id_test);
    std::printf("supervised: best_val=%.3f  ID=%.3f ", res.best_val_acc, id_acc);
    for (auto& t : targets) {
      const double a =
          eval_acc(pipe::predict_supervised(sup, pipe::record_ids(target_recs[t]), cache), target_recs[t]);
      std::printf(" %s=%.3f", t.c_str(), a);
    }
    std::printf("\n");
  }

  // --- dual DINO (+ODA) and dual CB (+CODA) -----------------------------
  for (auto obj : {pipe::Objective::dino, pipe::Objective::dino_cb}) {
    if (obj == pipe::Objective::dino && !c.boolean("run.dino", true)) continue;
    if (obj == pipe::Objective::dino_cb && !c.boolean("run.cb", true)) continue;
    const char* tag = obj == pipe::Objective::dino ? "dino" : "cb";
    pipe::DistillBundle bundle(spec, Rng(seed).child("pretrain_model"));
    std::printf("[%s] pretraining...\n", tag);
    pipe::run_pretrain(bundle, obj, train, cache, spec, plan, nullptr);

    nn::DualModel dual(spec.fe, spec.classifier, Rng(seed).child("dual"));
    dual.fe.params.copy_values_from(bundle.fe.params);
    auto hres = pipe::run_head(dual, train, val, cache, plan, nullptr);
    const double id_acc =
        eval_acc(pipe::predict_dual(dual.fe, dual.classifier, pipe::record_ids(id_test), cache), id_test);
    std::printf("[%s] head best_val=%.3f ID=%.3f ", tag, hres.best_val_acc, id_acc);
    for (auto& t : targets) {
      const double a = eval_acc(
          pipe::predict_dual(dual.fe, dual.classifier, pipe::record_ids(target_recs[t]), cache),
          target_recs[t]);
      std::printf(" %s=%.3f", t.c_str(), a);
    }
    std::printf("\n");

    for (auto& t : targets) {
      pipe::AdaptScope scope;
      scope.level = data::Scope::source;
      scope.target_ids = {t};
      auto adapted = pipe::run_adapt(bundle, obj, pipe::strip_labels(target_recs[t]), cache, scope,
                                     spec, plan, nullptr);
      const double a = eval_acc(pipe::predict_dual(adapted[0].bundle->fe, dual.classifier,
                                                   pipe::record_ids(target_recs[t]), cache),
                                target_recs[t]);
      std::printf("[%s] adapted %s=%.3f (steps=%lld)\n", tag, t.c_str(), a,
                  (long long)adapted[0].optimizer_steps);
    }
  }

  return 0;
}
