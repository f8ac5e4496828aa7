#pragma once

#include <string>
#include <vector>

#include "coda/nn/layers.hpp"
#include "coda/nn/params.hpp"
#include "coda/tensor.hpp"

namespace coda::nn {

struct ViTConfig {
  int channels = 3;
  int img_size = 64;   // base size the position table is laid out for
  int patch = 8;
  int dim = 192;
  int depth = 6;
  int heads = 3;
  double mlp_ratio = 4.0;
  // fixed input affine applied at patch extraction; [0,1] pixels -> [-1,1]
  double input_shift = -0.5;
  double input_scale = 2.0;

  int base_grid() const { return img_size / patch; }
  int patch_px() const { return channels * patch * patch; }
  void validate() const;
};

// Patch-token transformer encoder. Outputs the full token sequence
// (CLS first); position embeddings are bilinearly interpolated when the
// input grid differs from the base grid, so smaller crops share weights.
class VisionTransformer {
 public:
  ViTConfig cfg;
  ParamStore params;

  VisionTransformer(const ViTConfig& config, Rng rng);

  struct Cache {
    int grid_h = 0, grid_w = 0;
    std::vector<int> patch_ids;  // consumed patches (all, or a visible subset)
    Tensor patches;              // (Np, C*p*p)
    std::vector<Block::Cache> blocks;
    LayerNorm::Cache lnf;
  };

  // (1 + Np, dim); deterministic for fixed weights and input
  Tensor forward(const Tensor& img, Cache& c) const;

  // forward over a subset of patches (masked pretraining path); patch_ids
  // must be sorted ascending
  Tensor forward_subset(const Tensor& img, const std::vector<int>& patch_ids, Cache& c) const;

  void backward(const Cache& c, const Tensor& dtokens, double* g) const;

  // per-block output capture on the full sequence (for representation
  // similarity probes); depth() entries
  std::vector<Tensor> forward_collect(const Tensor& img) const;

  int depth() const { return cfg.depth; }

 private:
  Linear patch_proj_;
  int cls_token_ = -1;
  int pos_emb_ = -1;  // (1 + base_grid^2, dim), row 0 is the CLS position
  std::vector<Block> blocks_;
  LayerNorm ln_f_;

  Tensor patchify(const Tensor& img, const std::vector<int>& ids, int grid_w) const;
  Tensor pos_rows(int grid_h, int grid_w) const;  // (gh*gw, dim), grid part only
  void pos_rows_bwd(int grid_h, int grid_w, const Tensor& dpos, double* g) const;
  Tensor forward_subset_impl(const Tensor& img, const std::vector<int>& ids, int gh, int gw,
                             Cache& c) const;

  Tensor run_tokens(Tensor tokens, Cache& c) const;
};

// Bilinear resampling of a (g0*g0, d) table to (gh*gw, d); shared by the
// encoder and decoder position tables. `adjoint` scatters gradients back.
void interp_grid(const double* table, int g0, int d, int gh, int gw, double* out);
void interp_grid_adjoint(const double* dout, int g0, int d, int gh, int gw, double* dtable);

}  // namespace coda::nn
