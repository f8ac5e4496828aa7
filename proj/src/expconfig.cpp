#include "coda/expconfig.hpp"

namespace coda::cfg {

synth::GeneratorConfig generator_from(const Config& c) {
  synth::GeneratorConfig g;
  g.sources = int(c.integer("generator.sources", g.sources));
  g.batches_per_source = int(c.integer("generator.batches_per_source", g.batches_per_source));
  g.plates_per_batch = int(c.integer("generator.plates_per_batch", g.plates_per_batch));
  g.wells_per_plate = int(c.integer("generator.wells_per_plate", g.wells_per_plate));
  g.sites_per_well = int(c.integer("generator.sites_per_well", g.sites_per_well));
  g.class_count = int(c.integer("generator.class_count", g.class_count));
  g.height = int(c.integer("generator.height", g.height));
  g.width = int(c.integer("generator.width", g.width));
  g.channels = int(c.integer("generator.channels", g.channels));
  g.treatments_per_class = int(c.integer("generator.treatments_per_class", g.treatments_per_class));
  g.gain_lo = c.number("generator.gain_lo", g.gain_lo);
  g.gain_hi = c.number("generator.gain_hi", g.gain_hi);
  g.offset_lo = c.number("generator.offset_lo", g.offset_lo);
  g.offset_hi = c.number("generator.offset_hi", g.offset_hi);
  g.blur_lo = c.number("generator.blur_lo", g.blur_lo);
  g.blur_hi = c.number("generator.blur_hi", g.blur_hi);
  g.noise_sigma = c.number("generator.noise_sigma", g.noise_sigma);
  g.gamma_lo = c.number("generator.gamma_lo", g.gamma_lo);
  g.gamma_hi = c.number("generator.gamma_hi", g.gamma_hi);
  g.mix_lo = c.number("generator.mix_lo", g.mix_lo);
  g.mix_hi = c.number("generator.mix_hi", g.mix_hi);
  g.seed = uint64_t(c.integer("generator.seed", int64_t(c.integer("seed", int64_t(g.seed)))));
  g.validate();
  return g;
}

static void view_common(const Config& c, const std::string& prefix, views::ViewConfig& v) {
  v.global_scale_lo = c.number(prefix + ".global_scale_lo", v.global_scale_lo);
  v.global_scale_hi = c.number(prefix + ".global_scale_hi", v.global_scale_hi);
  v.local_scale_lo = c.number(prefix + ".local_scale_lo", v.local_scale_lo);
  v.local_scale_hi = c.number(prefix + ".local_scale_hi", v.local_scale_hi);
  v.flip = c.boolean(prefix + ".flip", v.flip);
  v.intensity_jitter = c.number(prefix + ".intensity_jitter", v.intensity_jitter);
  v.channel_dropout_p = c.number(prefix + ".channel_dropout_p", v.channel_dropout_p);
  v.blur_p = c.number(prefix + ".blur_p", v.blur_p);
}

pipe::ModelSpec model_from(const Config& c) {
  pipe::ModelSpec s = pipe::ModelSpec::defaults();
  s.fe.channels = int(c.integer("model.channels", s.fe.channels));
  s.fe.img_size = int(c.integer("model.img_size", s.fe.img_size));
  s.fe.patch = int(c.integer("model.patch", s.fe.patch));
  s.fe.dim = int(c.integer("model.dim", s.fe.dim));
  s.fe.depth = int(c.integer("model.depth", s.fe.depth));
  s.fe.heads = int(c.integer("model.heads", s.fe.heads));
  s.fe.mlp_ratio = c.number("model.mlp_ratio", s.fe.mlp_ratio);

  s.classifier.dim = int(c.integer("classifier.dim", s.classifier.dim));
  s.classifier.depth = int(c.integer("classifier.depth", s.classifier.depth));
  s.classifier.heads = int(c.integer("classifier.heads", s.classifier.heads));
  s.classifier.mlp_ratio = c.number("classifier.mlp_ratio", s.classifier.mlp_ratio);

  s.dino.hidden = int(c.integer("dino.hidden", s.dino.hidden));
  s.dino.bottleneck = int(c.integer("dino.bottleneck", s.dino.bottleneck));
  s.dino.out = int(c.integer("dino.out", s.dino.out));

  s.mae.mask_ratio = c.number("mae.mask_ratio", s.mae.mask_ratio);
  s.mae.dec_dim = int(c.integer("mae.dec_dim", s.mae.dec_dim));
  s.mae.dec_depth = int(c.integer("mae.dec_depth", s.mae.dec_depth));
  s.mae.dec_heads = int(c.integer("mae.dec_heads", s.mae.dec_heads));
  s.mae.dec_mlp_ratio = c.number("mae.dec_mlp_ratio", s.mae.dec_mlp_ratio);
  s.mae.norm_targets = c.boolean("mae.norm_targets", s.mae.norm_targets);

  s.distill.teacher_temp = c.number("distill.teacher_temp", s.distill.teacher_temp);
  s.distill.student_temp = c.number("distill.student_temp", s.distill.student_temp);
  s.distill.ema_decay = c.number("distill.ema_decay", s.distill.ema_decay);
  s.distill.center_momentum = c.number("distill.center_momentum", s.distill.center_momentum);

  s.views_single.global_views = int(c.integer("views.single_globals", s.views_single.global_views));
  s.views_single.local_views = int(c.integer("views.single_locals", s.views_single.local_views));
  s.views_pair.global_views = int(c.integer("views.pair_globals", s.views_pair.global_views));
  s.views_pair.local_views = int(c.integer("views.pair_locals", s.views_pair.local_views));
  view_common(c, "views", s.views_single);
  view_common(c, "views", s.views_pair);
  view_common(c, "supervised_aug", s.supervised_aug);
  s.supervised_aug.global_views = 1;
  s.supervised_aug.local_views = 0;

  s.finalize();
  return s;
}

pipe::TrainPlan plan_from(const Config& c) {
  pipe::TrainPlan p;
  p.seed = uint64_t(c.integer("seed", int64_t(p.seed)));

  p.pretrain.epochs = int(c.integer("plan.pretrain.epochs", p.pretrain.epochs));
  p.pretrain.lr = c.number("plan.pretrain.lr", p.pretrain.lr);
  p.pretrain.warmup_epochs = c.number("plan.pretrain.warmup_epochs", p.pretrain.warmup_epochs);
  p.pretrain.weight_decay = c.number("plan.pretrain.weight_decay", p.pretrain.weight_decay);
  p.pretrain.batch = int(c.integer("plan.pretrain.batch", p.pretrain.batch));

  p.head.epochs = int(c.integer("plan.head.epochs", p.head.epochs));
  p.head.lr = c.number("plan.head.lr", p.head.lr);
  p.head.warmup_epochs = c.number("plan.head.warmup_epochs", p.head.warmup_epochs);
  p.head.patience = int(c.integer("plan.head.patience", p.head.patience));
  p.head.plateau_factor = c.number("plan.head.plateau_factor", p.head.plateau_factor);
  p.head.batch = int(c.integer("plan.head.batch", p.head.batch));
  p.head.weight_decay = c.number("plan.head.weight_decay", p.head.weight_decay);

  // adaptation reuses the pretraining recipe unless overridden
  p.adapt.lr = c.number("plan.adapt.lr", c.number("plan.pretrain.lr", p.adapt.lr));
  p.adapt.epochs = int(c.integer("plan.adapt.epochs", p.adapt.epochs));
  p.adapt.warmup_epochs = c.number("plan.adapt.warmup_epochs", p.adapt.warmup_epochs);
  p.adapt.weight_decay =
      c.number("plan.adapt.weight_decay", c.number("plan.pretrain.weight_decay", p.adapt.weight_decay));
  p.adapt.batch = int(c.integer("plan.adapt.batch", int(c.integer("plan.pretrain.batch", p.adapt.batch))));

  if (c.has("plan.objective")) p.objective = pipe::objective_from_string(c.require_str("plan.objective"));
  p.ttt_steps = int(c.integer("plan.ttt_steps", p.ttt_steps));
  p.ttt_lr = c.number("plan.ttt_lr", p.ttt_lr);
  p.validate();
  return p;
}

}  // namespace coda::cfg
