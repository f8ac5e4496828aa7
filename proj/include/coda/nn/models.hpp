#pragma once

#include <string>
#include <vector>

#include "coda/nn/vit.hpp"
#include "coda/rng.hpp"

namespace coda::nn {

enum class Phase { pretrain, head, adapt };
std::string phase_to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct ClassifierConfig {
  int in_dim = 192;   // feature-extractor token width
  int dim = 192;
  int depth = 2;
  int heads = 3;
  int classes = 8;
  double mlp_ratio = 4.0;
};

// Token-consuming transformer classifier: a token-wise linear adapter in
// place of a patch embedding, transformer blocks over the full sequence,
// logits read from the leading (CLS-position) token.
class TokenClassifier {
 public:
  ClassifierConfig cfg;
  ParamStore params;

  TokenClassifier(const ClassifierConfig& config, Rng rng);

  struct Cache {
    Tensor tokens_in;
    Tensor adapted;
    std::vector<Block::Cache> blocks;
    LayerNorm::Cache lnf;
    Tensor final_first;  // (1, dim) token 0 after final norm
  };

  std::vector<double> logits(const Tensor& fe_tokens, Cache& c) const;
  // gradients flow into classifier parameters only
  void backward(const Cache& c, const std::vector<double>& dlogits, double* g) const;

 private:
  Linear adapter_;
  std::vector<Block> blocks_;
  LayerNorm ln_f_;
  Linear head_;
};

// Feature extractor + task classifier with an explicit frozen/adaptable
// partition per phase.
struct DualModel {
  VisionTransformer fe;
  TokenClassifier classifier;
  Phase phase = Phase::pretrain;

  DualModel(const ViTConfig& fe_cfg, const ClassifierConfig& cls_cfg, Rng rng);

  void set_phase(Phase p);
  std::vector<double> classify(const Tensor& img) const;
};

// Standalone supervised baseline: the same encoder with a linear head on
// the CLS token.
class SupervisedViT {
 public:
  VisionTransformer fe;
  ParamStore head_params;

  SupervisedViT(const ViTConfig& fe_cfg, int classes, Rng rng);

  struct Cache {
    VisionTransformer::Cache fec;
    Tensor cls_row;  // (1, dim)
  };
  std::vector<double> logits(const Tensor& img, Cache& c) const;
  void backward(const Cache& c, const std::vector<double>& dlogits, double* g_fe, double* g_head) const;

  int classes() const { return head_.out; }

 private:
  Linear head_;
};

// DINO-style projection head: MLP trunk, L2-normalized bottleneck, linear
// output layer without bias.
struct DinoHeadConfig {
  int in = 192;
  int hidden = 256;
  int bottleneck = 64;
  int out = 256;  // P
};

class DinoHead {
 public:
  DinoHeadConfig cfg;
  ParamStore params;

  DinoHead(const DinoHeadConfig& config, Rng rng);

  struct Cache {
    Tensor x, z1, h1, z2, h2, z3, zn;
    double rnorm = 0.0;
  };

  std::vector<double> fwd(const double* embed, Cache& c) const;
  void bwd(const Cache& c, const std::vector<double>& dout, double* g, std::vector<double>* dembed) const;

 private:
  Linear l1_, l2_, l3_, wout_;
};

// Masked-autoencoder decoder head over the encoder token space.
struct MaeConfig {
  double mask_ratio = 0.75;
  int dec_dim = 96;
  int dec_depth = 1;
  int dec_heads = 4;
  double dec_mlp_ratio = 4.0;
  bool norm_targets = true;  // per-patch target normalization
};

class MaeHead {
 public:
  MaeConfig cfg;
  ParamStore params;

  MaeHead(const ViTConfig& fe_cfg, const MaeConfig& config, Rng rng);

  // Reconstruction loss for one image. The masked index set has size
  // round(mask_ratio * num_patches); mask_ratio 0 gives loss 0 with an
  // empty mask. When g_fe/g_head are non-null, gradients are accumulated
  // for the encoder and this head.
  double forward(const VisionTransformer& fe, const Tensor& img, Rng& rng,
                 std::vector<int>* mask_out = nullptr, double* g_fe = nullptr,
                 double* g_head = nullptr, Tensor* preds_out = nullptr) const;

  // mean squared error over masked patches only
  static double loss_from_predictions(const Tensor& preds, const Tensor& targets,
                                      const std::vector<int>& mask);

 private:
  int fe_dim_ = 0, base_grid_ = 0, patch_px_ = 0;
  Linear embed_;
  int mask_token_ = -1, dec_pos_ = -1;
  std::vector<Block> blocks_;
  LayerNorm ln_f_;
  Linear pred_;
};

}  // namespace coda::nn
