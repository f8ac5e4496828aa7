#include "coda/nn/vit.hpp"

#include <cmath>
#include <cstring>

#include "coda/errors.hpp"

namespace coda::nn {

void ViTConfig::validate() const {
  if (img_size % patch != 0) throw ShapeError("vit: img_size must be divisible by patch");
  if (dim % heads != 0) throw ShapeError("vit: dim must be divisible by heads");
  if (depth < 1 || dim < heads || channels < 1) throw ShapeError("vit: bad dimensions");
}

VisionTransformer::VisionTransformer(const ViTConfig& config, Rng rng) : cfg(config) {
  cfg.validate();
  patch_proj_ = Linear::make(params, "patch_proj", cfg.patch_px(), cfg.dim, rng);
  cls_token_ = params.add("cls_token", {cfg.dim});
  params.init_normal(cls_token_, rng, 0.02);
  const int g0 = cfg.base_grid();
  pos_emb_ = params.add("pos_emb", {1 + g0 * g0, cfg.dim});
  params.init_normal(pos_emb_, rng, 0.02);
  for (int i = 0; i < cfg.depth; ++i)
    blocks_.push_back(Block::make(params, "block" + std::to_string(i), cfg.dim, cfg.heads,
                                  cfg.mlp_ratio, rng));
  ln_f_ = LayerNorm::make(params, "ln_f", cfg.dim);
}

void interp_grid(const double* table, int g0, int d, int gh, int gw, double* out) {
  const double sy = double(g0) / gh, sx = double(g0) / gw;
  for (int y = 0; y < gh; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    const double wy = fy - y0;
    int y1 = std::min(y0 + 1, g0 - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < gw; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      const double wx = fx - x0;
      int x1 = std::min(x0 + 1, g0 - 1);
      x0 = std::max(x0, 0);
      double* o = out + (size_t(y) * gw + x) * d;
      const double* t00 = table + (size_t(y0) * g0 + x0) * d;
      const double* t01 = table + (size_t(y0) * g0 + x1) * d;
      const double* t10 = table + (size_t(y1) * g0 + x0) * d;
      const double* t11 = table + (size_t(y1) * g0 + x1) * d;
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx, w10 = wy * (1 - wx), w11 = wy * wx;
      for (int k = 0; k < d; ++k) o[k] = w00 * t00[k] + w01 * t01[k] + w10 * t10[k] + w11 * t11[k];
    }
  }
}

void interp_grid_adjoint(const double* dout, int g0, int d, int gh, int gw, double* dtable) {
  const double sy = double(g0) / gh, sx = double(g0) / gw;
  for (int y = 0; y < gh; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    const double wy = fy - y0;
    int y1 = std::min(y0 + 1, g0 - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < gw; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      const double wx = fx - x0;
      int x1 = std::min(x0 + 1, g0 - 1);
      x0 = std::max(x0, 0);
      const double* o = dout + (size_t(y) * gw + x) * d;
      double* t00 = dtable + (size_t(y0) * g0 + x0) * d;
      double* t01 = dtable + (size_t(y0) * g0 + x1) * d;
      double* t10 = dtable + (size_t(y1) * g0 + x0) * d;
      double* t11 = dtable + (size_t(y1) * g0 + x1) * d;
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx, w10 = wy * (1 - wx), w11 = wy * wx;
      for (int k = 0; k < d; ++k) {
        t00[k] += w00 * o[k];
        t01[k] += w01 * o[k];
        t10[k] += w10 * o[k];
        t11[k] += w11 * o[k];
      }
    }
  }
}

Tensor VisionTransformer::patchify(const Tensor& img, const std::vector<int>& ids, int grid_w) const {
  const int p = cfg.patch, C = cfg.channels;
  Tensor out({int(ids.size()), cfg.patch_px()});
  for (size_t n = 0; n < ids.size(); ++n) {
    const int py = ids[n] / grid_w, px = ids[n] % grid_w;
    double* dst = out.row(int(n));
    int k = 0;
    for (int c = 0; c < C; ++c)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          dst[k++] = (img.at(c, py * p + dy, px * p + dx) + cfg.input_shift) * cfg.input_scale;
  }
  return out;
}

Tensor VisionTransformer::pos_rows(int grid_h, int grid_w) const {
  const int g0 = cfg.base_grid(), d = cfg.dim;
  Tensor out({grid_h * grid_w, d});
  const double* table = params.data(pos_emb_) + d;  // skip CLS row
  if (grid_h == g0 && grid_w == g0) {
    std::memcpy(out.data(), table, sizeof(double) * out.v.size());
  } else {
    interp_grid(table, g0, d, grid_h, grid_w, out.data());
  }
  return out;
}

void VisionTransformer::pos_rows_bwd(int grid_h, int grid_w, const Tensor& dpos, double* g) const {
  const int g0 = cfg.base_grid(), d = cfg.dim;
  double* dtable = g + params.info(pos_emb_).off + d;  // skip CLS row
  if (grid_h == g0 && grid_w == g0) {
    for (size_t i = 0; i < dpos.v.size(); ++i) dtable[i] += dpos.v[i];
  } else {
    interp_grid_adjoint(dpos.data(), g0, d, grid_h, grid_w, dtable);
  }
}

Tensor VisionTransformer::run_tokens(Tensor tokens, Cache& c) const {
  c.blocks.assign(size_t(cfg.depth), Block::Cache{});
  Tensor x = std::move(tokens);
  for (int i = 0; i < cfg.depth; ++i) x = blocks_[size_t(i)].fwd(params, x, c.blocks[size_t(i)]);
  return ln_f_.fwd(params, x, c.lnf);
}

Tensor VisionTransformer::forward(const Tensor& img, Cache& c) const {
  const int H = img.dim(1), W = img.dim(2);
  if (img.dim(0) != cfg.channels) throw ShapeError("vit: channel count mismatch");
  if (H % cfg.patch != 0 || W % cfg.patch != 0)
    throw ShapeError("vit: input size not divisible by patch size");
  const int gh = H / cfg.patch, gw = W / cfg.patch;
  std::vector<int> ids(size_t(gh) * gw);
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = int(i);
  return forward_subset_impl(img, ids, gh, gw, c);
}

Tensor VisionTransformer::forward_subset(const Tensor& img, const std::vector<int>& patch_ids,
                                         Cache& c) const {
  const int H = img.dim(1), W = img.dim(2);
  if (H % cfg.patch != 0 || W % cfg.patch != 0)
    throw ShapeError("vit: input size not divisible by patch size");
  return forward_subset_impl(img, patch_ids, H / cfg.patch, W / cfg.patch, c);
}

Tensor VisionTransformer::forward_subset_impl(const Tensor& img, const std::vector<int>& ids,
                                              int gh, int gw, Cache& c) const {
  c.grid_h = gh;
  c.grid_w = gw;
  c.patch_ids = ids;
  c.patches = patchify(img, ids, gw);
  Tensor proj = patch_proj_.fwd(params, c.patches);

  const int d = cfg.dim;
  Tensor pos = pos_rows(gh, gw);
  Tensor tokens({int(ids.size()) + 1, d});
  const double* cls = params.data(cls_token_);
  const double* cls_pos = params.data(pos_emb_);
  for (int k = 0; k < d; ++k) tokens.at(0, k) = cls[k] + cls_pos[k];
  for (size_t n = 0; n < ids.size(); ++n) {
    const double* pr = proj.row(int(n));
    const double* pp = pos.row(ids[n]);
    double* dst = tokens.row(int(n) + 1);
    for (int k = 0; k < d; ++k) dst[k] = pr[k] + pp[k];
  }
  return run_tokens(std::move(tokens), c);
}

void VisionTransformer::backward(const Cache& c, const Tensor& dtokens, double* g) const {
  Tensor dx = ln_f_.bwd(params, c.lnf, dtokens, g);
  for (int i = cfg.depth - 1; i >= 0; --i) dx = blocks_[size_t(i)].bwd(params, c.blocks[size_t(i)], dx, g);

  const int d = cfg.dim;
  const size_t n = c.patch_ids.size();
  // CLS token and its position entry
  {
    double* dcls = g + params.info(cls_token_).off;
    double* dpos0 = g + params.info(pos_emb_).off;
    const double* row = dx.row(0);
    for (int k = 0; k < d; ++k) {
      dcls[k] += row[k];
      dpos0[k] += row[k];
    }
  }
  // patch projections
  Tensor dproj({int(n), d});
  std::memcpy(dproj.data(), dx.data() + d, sizeof(double) * n * size_t(d));
  patch_proj_.bwd(params, c.patches, dproj, nullptr, g);
  // grid position entries (scatter into consumed patch slots)
  Tensor dpos_full({c.grid_h * c.grid_w, d});
  for (size_t i = 0; i < n; ++i) {
    const double* src = dproj.row(int(i));
    double* dst = dpos_full.row(c.patch_ids[i]);
    for (int k = 0; k < d; ++k) dst[k] += src[k];
  }
  pos_rows_bwd(c.grid_h, c.grid_w, dpos_full, g);
}

std::vector<Tensor> VisionTransformer::forward_collect(const Tensor& img) const {
  Cache c;
  const int H = img.dim(1), W = img.dim(2);
  const int gh = H / cfg.patch, gw = W / cfg.patch;
  std::vector<int> ids(size_t(gh) * gw);
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = int(i);
  c.grid_h = gh;
  c.grid_w = gw;
  c.patch_ids = ids;
  c.patches = patchify(img, ids, gw);
  Tensor proj = patch_proj_.fwd(params, c.patches);
  const int d = cfg.dim;
  Tensor pos = pos_rows(gh, gw);
  Tensor x({int(ids.size()) + 1, d});
  const double* cls = params.data(cls_token_);
  const double* cls_pos = params.data(pos_emb_);
  for (int k = 0; k < d; ++k) x.at(0, k) = cls[k] + cls_pos[k];
  for (size_t n = 0; n < ids.size(); ++n) {
    const double* pr = proj.row(int(n));
    const double* pp = pos.row(ids[n]);
    double* dst = x.row(int(n) + 1);
    for (int k = 0; k < d; ++k) dst[k] = pr[k] + pp[k];
  }
  std::vector<Tensor> outs;
  c.blocks.assign(size_t(cfg.depth), Block::Cache{});
  for (int i = 0; i < cfg.depth; ++i) {
    x = blocks_[size_t(i)].fwd(params, x, c.blocks[size_t(i)]);
    outs.push_back(x);
  }
  return outs;
}

}  // namespace coda::nn
