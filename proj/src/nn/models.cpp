#include "coda/nn/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "coda/errors.hpp"

namespace coda::nn {

std::string phase_to_string(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::head: return "head";
    case Phase::adapt: return "adapt";
  }
  return "?";
}

Phase phase_from_string(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "head") return Phase::head;
  if (s == "adapt") return Phase::adapt;
  throw Error("unknown phase '" + s + "'");
}

// --------------------------------------------------------- TokenClassifier

TokenClassifier::TokenClassifier(const ClassifierConfig& config, Rng rng) : cfg(config) {
  adapter_ = Linear::make(params, "adapter", cfg.in_dim, cfg.dim, rng);
  for (int i = 0; i < cfg.depth; ++i)
    blocks_.push_back(Block::make(params, "block" + std::to_string(i), cfg.dim, cfg.heads,
                                  cfg.mlp_ratio, rng));
  ln_f_ = LayerNorm::make(params, "ln_f", cfg.dim);
  head_ = Linear::make(params, "head", cfg.dim, cfg.classes, rng);
}

std::vector<double> TokenClassifier::logits(const Tensor& fe_tokens, Cache& c) const {
  if (fe_tokens.dim(1) != cfg.in_dim) throw ShapeError("classifier: token width mismatch");
  c.tokens_in = fe_tokens;
  c.adapted = adapter_.fwd(params, c.tokens_in);
  c.blocks.assign(size_t(cfg.depth), Block::Cache{});
  Tensor x = c.adapted;
  for (int i = 0; i < cfg.depth; ++i) x = blocks_[size_t(i)].fwd(params, x, c.blocks[size_t(i)]);
  Tensor normed = ln_f_.fwd(params, x, c.lnf);
  c.final_first = Tensor({1, cfg.dim});
  std::memcpy(c.final_first.data(), normed.row(0), sizeof(double) * size_t(cfg.dim));
  Tensor lg = head_.fwd(params, c.final_first);
  std::vector<double> out(lg.v.begin(), lg.v.end());
  for (double v : out)
    if (!std::isfinite(v)) throw Error("classifier produced non-finite logits");
  return out;
}

void TokenClassifier::backward(const Cache& c, const std::vector<double>& dlogits, double* g) const {
  Tensor dl({1, cfg.classes});
  std::copy(dlogits.begin(), dlogits.end(), dl.v.begin());
  Tensor dfirst;
  head_.bwd(params, c.final_first, dl, &dfirst, g);
  const int n = c.tokens_in.dim(0);
  Tensor dnormed({n, cfg.dim});
  std::memcpy(dnormed.row(0), dfirst.data(), sizeof(double) * size_t(cfg.dim));
  Tensor dx = ln_f_.bwd(params, c.lnf, dnormed, g);
  for (int i = cfg.depth - 1; i >= 0; --i) dx = blocks_[size_t(i)].bwd(params, c.blocks[size_t(i)], dx, g);
  adapter_.bwd(params, c.tokens_in, dx, nullptr, g);
}

// ---------------------------------------------------------------- DualModel

DualModel::DualModel(const ViTConfig& fe_cfg, const ClassifierConfig& cls_cfg, Rng rng)
    : fe(fe_cfg, rng.child("fe")), classifier(cls_cfg, rng.child("classifier")) {
  if (cls_cfg.in_dim != fe_cfg.dim) throw ShapeError("dual model: classifier in_dim != fe dim");
  set_phase(Phase::pretrain);
}

void DualModel::set_phase(Phase p) {
  phase = p;
  switch (p) {
    case Phase::pretrain:
      fe.params.set_all_trainable(true);
      classifier.params.set_all_trainable(false);
      break;
    case Phase::head:
      fe.params.set_all_trainable(false);
      classifier.params.set_all_trainable(true);
      break;
    case Phase::adapt:
      fe.params.set_all_trainable(true);
      classifier.params.set_all_trainable(false);
      break;
  }
}

std::vector<double> DualModel::classify(const Tensor& img) const {
  VisionTransformer::Cache fec;
  Tensor tokens = fe.forward(img, fec);
  TokenClassifier::Cache cc;
  return classifier.logits(tokens, cc);
}

// ------------------------------------------------------------ SupervisedViT

SupervisedViT::SupervisedViT(const ViTConfig& fe_cfg, int classes, Rng rng)
    : fe(fe_cfg, rng.child("fe")) {
  Rng hr = rng.child("head");
  head_ = Linear::make(head_params, "head", fe_cfg.dim, classes, hr);
}

std::vector<double> SupervisedViT::logits(const Tensor& img, Cache& c) const {
  Tensor tokens = fe.forward(img, c.fec);
  c.cls_row = Tensor({1, fe.cfg.dim});
  std::memcpy(c.cls_row.data(), tokens.row(0), sizeof(double) * size_t(fe.cfg.dim));
  Tensor lg = head_.fwd(head_params, c.cls_row);
  return {lg.v.begin(), lg.v.end()};
}

void SupervisedViT::backward(const Cache& c, const std::vector<double>& dlogits, double* g_fe,
                             double* g_head) const {
  Tensor dl({1, head_.out});
  std::copy(dlogits.begin(), dlogits.end(), dl.v.begin());
  Tensor dcls;
  head_.bwd(head_params, c.cls_row, dl, &dcls, g_head);
  const int n = int(c.fec.patch_ids.size()) + 1;
  Tensor dtokens({n, fe.cfg.dim});
  std::memcpy(dtokens.row(0), dcls.data(), sizeof(double) * size_t(fe.cfg.dim));
  fe.backward(c.fec, dtokens, g_fe);
}

// ------------------------------------------------------------------ DinoHead

DinoHead::DinoHead(const DinoHeadConfig& config, Rng rng) : cfg(config) {
  l1_ = Linear::make(params, "l1", cfg.in, cfg.hidden, rng);
  l2_ = Linear::make(params, "l2", cfg.hidden, cfg.hidden, rng);
  l3_ = Linear::make(params, "l3", cfg.hidden, cfg.bottleneck, rng);
  wout_ = Linear::make(params, "wout", cfg.bottleneck, cfg.out, rng, /*bias=*/false);
}

std::vector<double> DinoHead::fwd(const double* embed, Cache& c) const {
  c.x = Tensor({1, cfg.in});
  std::memcpy(c.x.data(), embed, sizeof(double) * size_t(cfg.in));
  c.z1 = l1_.fwd(params, c.x);
  c.h1 = gelu_fwd(c.z1);
  c.z2 = l2_.fwd(params, c.h1);
  c.h2 = gelu_fwd(c.z2);
  c.z3 = l3_.fwd(params, c.h2);
  double norm2 = 0.0;
  for (double v : c.z3.v) norm2 += v * v;
  c.rnorm = 1.0 / std::sqrt(std::max(norm2, 1e-24));
  c.zn = c.z3;
  for (double& v : c.zn.v) v *= c.rnorm;
  Tensor out = wout_.fwd(params, c.zn);
  return {out.v.begin(), out.v.end()};
}

void DinoHead::bwd(const Cache& c, const std::vector<double>& dout, double* g,
                   std::vector<double>* dembed) const {
  Tensor dl({1, cfg.out});
  std::copy(dout.begin(), dout.end(), dl.v.begin());
  Tensor dzn;
  wout_.bwd(params, c.zn, dl, &dzn, g);
  // zated = z / ||z||: dz = (dzn - zn (zn . dzn)) / ||z||
  double dot = 0.0;
  for (size_t i = 0; i < dzn.v.size(); ++i) dot += dzn.v[i] * c.zn.v[i];
  Tensor dz3 = dzn;
  for (size_t i = 0; i < dz3.v.size(); ++i) dz3.v[i] = (dzn.v[i] - c.zn.v[i] * dot) * c.rnorm;
  Tensor dh2;
  l3_.bwd(params, c.h2, dz3, &dh2, g);
  Tensor dz2 = gelu_bwd(c.z2, dh2);
  Tensor dh1;
  l2_.bwd(params, c.h1, dz2, &dh1, g);
  Tensor dz1 = gelu_bwd(c.z1, dh1);
  Tensor dx;
  l1_.bwd(params, c.x, dz1, &dx, g);
  if (dembed) dembed->assign(dx.v.begin(), dx.v.end());
}

// ------------------------------------------------------------------- MaeHead

MaeHead::MaeHead(const ViTConfig& fe_cfg, const MaeConfig& config, Rng rng) : cfg(config) {
  fe_dim_ = fe_cfg.dim;
  base_grid_ = fe_cfg.base_grid();
  patch_px_ = fe_cfg.patch_px();
  embed_ = Linear::make(params, "embed", fe_dim_, cfg.dec_dim, rng);
  mask_token_ = params.add("mask_token", {cfg.dec_dim});
  params.init_normal(mask_token_, rng, 0.02);
  dec_pos_ = params.add("dec_pos", {base_grid_ * base_grid_, cfg.dec_dim});
  params.init_normal(dec_pos_, rng, 0.02);
  for (int i = 0; i < cfg.dec_depth; ++i)
    blocks_.push_back(Block::make(params, "block" + std::to_string(i), cfg.dec_dim, cfg.dec_heads,
                                  cfg.dec_mlp_ratio, rng));
  ln_f_ = LayerNorm::make(params, "ln_f", cfg.dec_dim);
  pred_ = Linear::make(params, "pred", cfg.dec_dim, patch_px_, rng);
}

double MaeHead::loss_from_predictions(const Tensor& preds, const Tensor& targets,
                                      const std::vector<int>& mask) {
  if (mask.empty()) return 0.0;
  const int px = preds.dim(1);
  double loss = 0.0;
  for (int j : mask) {
    const double* p = preds.row(j);
    const double* t = targets.row(j);
    for (int k = 0; k < px; ++k) {
      const double d = p[k] - t[k];
      loss += d * d;
    }
  }
  return loss / (double(mask.size()) * px);
}

double MaeHead::forward(const VisionTransformer& fe, const Tensor& img, Rng& rng,
                        std::vector<int>* mask_out, double* g_fe, double* g_head,
                        Tensor* preds_out) const {
  const int H = img.dim(1), W = img.dim(2), p = fe.cfg.patch;
  if (H % p != 0 || W % p != 0) throw ShapeError("mae: input size not divisible by patch");
  const int gh = H / p, gw = W / p, N = gh * gw;
  if (gh != base_grid_ || gw != base_grid_)
    throw ShapeError("mae: decoder position table built for the base grid only");

  const int n_mask = int(std::lround(cfg.mask_ratio * N));
  std::vector<int> order(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) order[size_t(i)] = i;
  rng.shuffle(order);
  std::vector<int> masked(order.begin(), order.begin() + n_mask);
  std::vector<int> visible(order.begin() + n_mask, order.end());
  std::sort(masked.begin(), masked.end());
  std::sort(visible.begin(), visible.end());
  if (mask_out) *mask_out = masked;
  if (masked.empty()) {
    if (preds_out) *preds_out = Tensor({N, patch_px_});
    return 0.0;
  }

  // encoder on visible patches only
  VisionTransformer::Cache fec;
  Tensor enc = fe.forward_subset(img, visible, fec);

  // decoder input: embedded visible tokens, mask token elsewhere, plus
  // decoder position entries
  const int dd = cfg.dec_dim;
  Tensor vis_tokens({int(visible.size()), fe_dim_});
  for (size_t i = 0; i < visible.size(); ++i)
    std::memcpy(vis_tokens.row(int(i)), enc.row(int(i) + 1), sizeof(double) * size_t(fe_dim_));
  Tensor vis_embed = embed_.fwd(params, vis_tokens);

  Tensor dec_in({N, dd});
  const double* mtok = params.data(mask_token_);
  const double* dpos = params.data(dec_pos_);
  for (int j = 0; j < N; ++j) {
    double* row = dec_in.row(j);
    std::memcpy(row, mtok, sizeof(double) * size_t(dd));
  }
  for (size_t i = 0; i < visible.size(); ++i)
    std::memcpy(dec_in.row(visible[i]), vis_embed.row(int(i)), sizeof(double) * size_t(dd));
  for (int j = 0; j < N; ++j) {
    double* row = dec_in.row(j);
    const double* pr = dpos + size_t(j) * dd;
    for (int k = 0; k < dd; ++k) row[k] += pr[k];
  }

  std::vector<Block::Cache> bc(size_t(cfg.dec_depth));
  Tensor x = dec_in;
  for (int i = 0; i < cfg.dec_depth; ++i) x = blocks_[size_t(i)].fwd(params, x, bc[size_t(i)]);
  LayerNorm::Cache lnc;
  Tensor normed = ln_f_.fwd(params, x, lnc);
  Tensor preds = pred_.fwd(params, normed);

  // targets: raw patch pixels, optionally per-patch normalized
  Tensor targets({N, patch_px_});
  {
    // reuse the encoder's patch extraction layout
    const int C = img.dim(0);
    for (int j = 0; j < N; ++j) {
      const int py = j / gw, px_i = j % gw;
      double* dst = targets.row(j);
      int k = 0;
      for (int ch = 0; ch < C; ++ch)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            dst[k++] = (img.at(ch, py * p + dy, px_i * p + dx) + fe.cfg.input_shift) * fe.cfg.input_scale;
    }
  }
  if (cfg.norm_targets) {
    for (int j = 0; j < N; ++j) {
      double* t = targets.row(j);
      double mean = 0.0;
      for (int k = 0; k < patch_px_; ++k) mean += t[k];
      mean /= patch_px_;
      double var = 0.0;
      for (int k = 0; k < patch_px_; ++k) {
        const double d = t[k] - mean;
        var += d * d;
      }
      var /= patch_px_;
      const double rstd = 1.0 / std::sqrt(var + 1e-6);
      for (int k = 0; k < patch_px_; ++k) t[k] = (t[k] - mean) * rstd;
    }
  }

  const double loss = loss_from_predictions(preds, targets, masked);
  if (preds_out) *preds_out = preds;

  if (g_fe || g_head) {
    GradBuf scratch_head_buf;
    double* gh_ptr = g_head;
    if (!gh_ptr) {
      scratch_head_buf = GradBuf(params);
      gh_ptr = scratch_head_buf.base();
    }
    Tensor dpreds({N, patch_px_});
    const double scale = 2.0 / (double(masked.size()) * patch_px_);
    for (int j : masked) {
      double* dp = dpreds.row(j);
      const double* pp = preds.row(j);
      const double* tt = targets.row(j);
      for (int k = 0; k < patch_px_; ++k) dp[k] = scale * (pp[k] - tt[k]);
    }
    Tensor dnormed;
    pred_.bwd(params, normed, dpreds, &dnormed, gh_ptr);
    Tensor dx = ln_f_.bwd(params, lnc, dnormed, gh_ptr);
    for (int i = cfg.dec_depth - 1; i >= 0; --i)
      dx = blocks_[size_t(i)].bwd(params, bc[size_t(i)], dx, gh_ptr);
    // position entries and mask token
    {
      double* gpos = gh_ptr + params.info(dec_pos_).off;
      for (int j = 0; j < N; ++j) {
        const double* src = dx.row(j);
        double* dst = gpos + size_t(j) * dd;
        for (int k = 0; k < dd; ++k) dst[k] += src[k];
      }
      double* gm = gh_ptr + params.info(mask_token_).off;
      for (int j : masked) {
        const double* src = dx.row(j);
        for (int k = 0; k < dd; ++k) gm[k] += src[k];
      }
    }
    // visible rows back through the embed layer into the encoder
    Tensor dvis_embed({int(visible.size()), dd});
    for (size_t i = 0; i < visible.size(); ++i)
      std::memcpy(dvis_embed.row(int(i)), dx.row(visible[i]), sizeof(double) * size_t(dd));
    Tensor dvis_tokens;
    embed_.bwd(params, vis_tokens, dvis_embed, &dvis_tokens, gh_ptr);
    if (g_fe) {
      Tensor denc({int(visible.size()) + 1, fe_dim_});
      for (size_t i = 0; i < visible.size(); ++i)
        std::memcpy(denc.row(int(i) + 1), dvis_tokens.row(int(i)), sizeof(double) * size_t(fe_dim_));
      fe.backward(fec, denc, g_fe);
    }
  }
  return loss;
}

}  // namespace coda::nn
