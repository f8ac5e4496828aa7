#pragma once

#include <vector>

#include "coda/nn/params.hpp"
#include "coda/tensor.hpp"

namespace coda::nn {

// Layers operate on (N, d) token matrices, own no storage beyond parameter
// handles into a ParamStore, and write gradients into a flat grad buffer.

struct Linear {
  int in = 0, out = 0;
  int W = -1, b = -1;  // b == -1 -> no bias

  static Linear make(ParamStore& s, const std::string& prefix, int in, int out, Rng& rng,
                     bool bias = true, double init_std = 0.02);
  Tensor fwd(const ParamStore& s, const Tensor& x) const;
  // dx may be null when the input gradient is not needed
  void bwd(const ParamStore& s, const Tensor& x, const Tensor& dy, Tensor* dx, double* g) const;
};

struct LayerNorm {
  int d = 0;
  int gamma = -1, beta = -1;

  struct Cache {
    Tensor xhat;               // (N, d)
    std::vector<double> rstd;  // per row
  };

  static LayerNorm make(ParamStore& s, const std::string& prefix, int d);
  Tensor fwd(const ParamStore& s, const Tensor& x, Cache& c) const;
  Tensor bwd(const ParamStore& s, const Cache& c, const Tensor& dy, double* g) const;
};

double gelu(double x);
double gelu_grad(double x);
Tensor gelu_fwd(const Tensor& x);
Tensor gelu_bwd(const Tensor& x, const Tensor& dy);

// softmax over the last dimension, in place per row
void softmax_rows(Tensor& t);
void log_softmax_row(const double* x, double* out, int n);

struct Attention {
  int dim = 0, heads = 0;
  Linear qkv, proj;

  struct Cache {
    Tensor x;       // (N, d) input
    Tensor qkv_out; // (N, 3d)
    std::vector<Tensor> probs;  // per head (N, N)
    Tensor concat;  // (N, d) pre-projection
  };

  static Attention make(ParamStore& s, const std::string& prefix, int dim, int heads, Rng& rng);
  Tensor fwd(const ParamStore& s, const Tensor& x, Cache& c) const;
  Tensor bwd(const ParamStore& s, const Cache& c, const Tensor& dy, double* g) const;
};

struct Block {
  LayerNorm ln1, ln2;
  Attention attn;
  Linear fc1, fc2;

  struct Cache {
    LayerNorm::Cache ln1c, ln2c;
    Attention::Cache attnc;
    Tensor y1;      // x + attn(ln1 x)
    Tensor mlp_in;  // ln2(y1)
    Tensor z1;      // fc1 out, pre-gelu
    Tensor h;       // gelu(z1)
  };

  static Block make(ParamStore& s, const std::string& prefix, int dim, int heads, double mlp_ratio,
                    Rng& rng);
  Tensor fwd(const ParamStore& s, const Tensor& x, Cache& c) const;
  Tensor bwd(const ParamStore& s, const Cache& c, const Tensor& dy, double* g) const;
};

}  // namespace coda::nn
