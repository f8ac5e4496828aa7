#include "coda/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include "coda/errors.hpp"
#include "coda/kernels.hpp"

namespace coda::nn {

// ---------------------------------------------------------------- Linear

Linear Linear::make(ParamStore& s, const std::string& prefix, int in, int out, Rng& rng,
                    bool bias, double init_std) {
  Linear l;
  l.in = in;
  l.out = out;
  l.W = s.add(prefix + ".W", {out, in});
  s.init_normal(l.W, rng, init_std);
  if (bias) {
    l.b = s.add(prefix + ".b", {out});
    s.init_constant(l.b, 0.0);
  }
  return l;
}

Tensor Linear::fwd(const ParamStore& s, const Tensor& x) const {
  const int N = x.dim(0);
  if (x.dim(1) != in) throw ShapeError("linear: input dim mismatch");
  Tensor y({N, out});
  kern::matmul_nt(x.data(), s.data(W), y.data(), N, in, out);
  if (b >= 0) {
    const double* bias = s.data(b);
    for (int i = 0; i < N; ++i) {
      double* row = y.row(i);
      for (int j = 0; j < out; ++j) row[j] += bias[j];
    }
  }
  return y;
}

void Linear::bwd(const ParamStore& s, const Tensor& x, const Tensor& dy, Tensor* dx, double* g) const {
  const int N = x.dim(0);
  const ParamInfo& wi = s.info(W);
  // dW += dy^T x
  kern::matmul_at_b_acc(dy.data(), x.data(), g + wi.off, N, out, in);
  if (b >= 0) {
    double* db = g + s.info(b).off;
    for (int i = 0; i < N; ++i) {
      const double* row = dy.row(i);
      for (int j = 0; j < out; ++j) db[j] += row[j];
    }
  }
  if (dx) {
    *dx = Tensor({N, in});
    kern::matmul_nn(dy.data(), s.data(W), dx->data(), N, out, in);
  }
}

// -------------------------------------------------------------- LayerNorm

LayerNorm LayerNorm::make(ParamStore& s, const std::string& prefix, int d) {
  LayerNorm ln;
  ln.d = d;
  ln.gamma = s.add(prefix + ".gamma", {d});
  ln.beta = s.add(prefix + ".beta", {d});
  s.init_constant(ln.gamma, 1.0);
  s.init_constant(ln.beta, 0.0);
  return ln;
}

Tensor LayerNorm::fwd(const ParamStore& s, const Tensor& x, Cache& c) const {
  const int N = x.dim(0);
  const double* gam = s.data(gamma);
  const double* bet = s.data(beta);
  Tensor y({N, d});
  c.xhat = Tensor({N, d});
  c.rstd.assign(size_t(N), 0.0);
  for (int i = 0; i < N; ++i) {
    const double* xi = x.row(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double t = xi[j] - mean;
      var += t * t;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + 1e-6);
    c.rstd[size_t(i)] = rstd;
    double* xh = c.xhat.row(i);
    double* yo = y.row(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mean) * rstd;
      yo[j] = xh[j] * gam[j] + bet[j];
    }
  }
  return y;
}

Tensor LayerNorm::bwd(const ParamStore& s, const Cache& c, const Tensor& dy, double* g) const {
  const int N = dy.dim(0);
  const double* gam = s.data(gamma);
  double* dgam = g + s.info(gamma).off;
  double* dbet = g + s.info(beta).off;
  Tensor dx({N, d});
  for (int i = 0; i < N; ++i) {
    const double* dyi = dy.row(i);
    const double* xh = c.xhat.row(i);
    const double rstd = c.rstd[size_t(i)];
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dg = dyi[j] * gam[j];
      m1 += dg;
      m2 += dg * xh[j];
      dgam[j] += dyi[j] * xh[j];
      dbet[j] += dyi[j];
    }
    m1 /= d;
    m2 /= d;
    double* dxi = dx.row(i);
    for (int j = 0; j < d; ++j) dxi[j] = rstd * (dyi[j] * gam[j] - m1 - xh[j] * m2);
  }
  return dx;
}

// ------------------------------------------------------------------ GELU

static constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;

double gelu(double x) {
  const double u = kSqrt2OverPi * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kSqrt2OverPi * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor gelu_fwd(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v = gelu(v);
  return y;
}

Tensor gelu_bwd(const Tensor& x, const Tensor& dy) {
  Tensor dx = x;
  for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] = gelu_grad(x.v[i]) * dy.v[i];
  return dx;
}

// --------------------------------------------------------------- softmax

void softmax_rows(Tensor& t) {
  const int N = t.dim(0), d = t.dim(1);
  for (int i = 0; i < N; ++i) {
    double* row = t.row(i);
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < d; ++j) row[j] /= sum;
  }
}

void log_softmax_row(const double* x, double* out, int n) {
  double mx = x[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) sum += std::exp(x[j] - mx);
  const double lse = mx + std::log(sum);
  for (int j = 0; j < n; ++j) out[j] = x[j] - lse;
}

// ------------------------------------------------------------- Attention

Attention Attention::make(ParamStore& s, const std::string& prefix, int dim, int heads, Rng& rng) {
  if (dim % heads != 0) throw ShapeError("attention: dim must be divisible by heads");
  Attention a;
  a.dim = dim;
  a.heads = heads;
  a.qkv = Linear::make(s, prefix + ".qkv", dim, 3 * dim, rng);
  a.proj = Linear::make(s, prefix + ".proj", dim, dim, rng);
  return a;
}

Tensor Attention::fwd(const ParamStore& s, const Tensor& x, Cache& c) const {
  const int N = x.dim(0), dh = dim / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  c.x = x;
  c.qkv_out = qkv.fwd(s, x);
  c.probs.assign(size_t(heads), Tensor());
  c.concat = Tensor({N, dim});

  Tensor qh({N, dh}), kh({N, dh}), vh({N, dh});
  for (int h = 0; h < heads; ++h) {
    const int qoff = h * dh, koff = dim + h * dh, voff = 2 * dim + h * dh;
    for (int i = 0; i < N; ++i) {
      const double* row = c.qkv_out.row(i);
      std::memcpy(qh.row(i), row + qoff, sizeof(double) * size_t(dh));
      std::memcpy(kh.row(i), row + koff, sizeof(double) * size_t(dh));
      std::memcpy(vh.row(i), row + voff, sizeof(double) * size_t(dh));
    }
    Tensor scores({N, N});
    kern::matmul_nt(qh.data(), kh.data(), scores.data(), N, dh, N);
    for (auto& v : scores.v) v *= scale;
    softmax_rows(scores);
    Tensor out({N, dh});
    kern::matmul_nn(scores.data(), vh.data(), out.data(), N, N, dh);
    for (int i = 0; i < N; ++i)
      std::memcpy(c.concat.row(i) + h * dh, out.row(i), sizeof(double) * size_t(dh));
    c.probs[size_t(h)] = std::move(scores);
  }
  return proj.fwd(s, c.concat);
}

Tensor Attention::bwd(const ParamStore& s, const Cache& c, const Tensor& dy, double* g) const {
  const int N = dy.dim(0), dh = dim / heads;
  const double scale = 1.0 / std::sqrt(double(dh));

  Tensor dconcat;
  proj.bwd(s, c.concat, dy, &dconcat, g);

  Tensor dqkv({N, 3 * dim});
  Tensor qh({N, dh}), kh({N, dh}), vh({N, dh}), doh({N, dh});
  for (int h = 0; h < heads; ++h) {
    const int qoff = h * dh, koff = dim + h * dh, voff = 2 * dim + h * dh;
    for (int i = 0; i < N; ++i) {
      const double* row = c.qkv_out.row(i);
      std::memcpy(qh.row(i), row + qoff, sizeof(double) * size_t(dh));
      std::memcpy(kh.row(i), row + koff, sizeof(double) * size_t(dh));
      std::memcpy(vh.row(i), row + voff, sizeof(double) * size_t(dh));
      std::memcpy(doh.row(i), dconcat.row(i) + h * dh, sizeof(double) * size_t(dh));
    }
    const Tensor& P = c.probs[size_t(h)];
    // dV = P^T dO
    Tensor dv({N, dh});
    dv.fill(0.0);
    kern::matmul_at_b_acc(P.data(), doh.data(), dv.data(), N, N, dh);
    // dP = dO V^T
    Tensor dp({N, N});
    kern::matmul_nt(doh.data(), vh.data(), dp.data(), N, dh, N);
    // softmax backward: dS = P o (dP - rowsum(dP o P))
    Tensor ds({N, N});
    for (int i = 0; i < N; ++i) {
      const double* pi = P.row(i);
      const double* dpi = dp.row(i);
      double dot = 0.0;
      for (int j = 0; j < N; ++j) dot += pi[j] * dpi[j];
      double* dsi = ds.row(i);
      for (int j = 0; j < N; ++j) dsi[j] = pi[j] * (dpi[j] - dot) * scale;
    }
    // dQ = dS K ; dK = dS^T Q
    Tensor dq({N, dh});
    kern::matmul_nn(ds.data(), kh.data(), dq.data(), N, N, dh);
    Tensor dk({N, dh});
    dk.fill(0.0);
    kern::matmul_at_b_acc(ds.data(), qh.data(), dk.data(), N, N, dh);
    for (int i = 0; i < N; ++i) {
      double* row = dqkv.row(i);
      std::memcpy(row + qoff, dq.row(i), sizeof(double) * size_t(dh));
      std::memcpy(row + koff, dk.row(i), sizeof(double) * size_t(dh));
      std::memcpy(row + voff, dv.row(i), sizeof(double) * size_t(dh));
    }
  }
  Tensor dx;
  qkv.bwd(s, c.x, dqkv, &dx, g);
  return dx;
}

// ----------------------------------------------------------------- Block

Block Block::make(ParamStore& s, const std::string& prefix, int dim, int heads, double mlp_ratio,
                  Rng& rng) {
  Block b;
  b.ln1 = LayerNorm::make(s, prefix + ".ln1", dim);
  b.attn = Attention::make(s, prefix + ".attn", dim, heads, rng);
  b.ln2 = LayerNorm::make(s, prefix + ".ln2", dim);
  const int hidden = int(std::lround(mlp_ratio * dim));
  b.fc1 = Linear::make(s, prefix + ".fc1", dim, hidden, rng);
  b.fc2 = Linear::make(s, prefix + ".fc2", hidden, dim, rng);
  return b;
}

Tensor Block::fwd(const ParamStore& s, const Tensor& x, Cache& c) const {
  Tensor a = ln1.fwd(s, x, c.ln1c);
  Tensor att = attn.fwd(s, a, c.attnc);
  c.y1 = x;
  for (size_t i = 0; i < c.y1.v.size(); ++i) c.y1.v[i] += att.v[i];
  c.mlp_in = ln2.fwd(s, c.y1, c.ln2c);
  c.z1 = fc1.fwd(s, c.mlp_in);
  c.h = gelu_fwd(c.z1);
  Tensor m = fc2.fwd(s, c.h);
  Tensor out = c.y1;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += m.v[i];
  return out;
}

Tensor Block::bwd(const ParamStore& s, const Cache& c, const Tensor& dy, double* g) const {
  // out = y1 + fc2(gelu(fc1(ln2(y1))))
  Tensor dh;
  fc2.bwd(s, c.h, dy, &dh, g);
  Tensor dz1 = gelu_bwd(c.z1, dh);
  Tensor dmlp_in;
  fc1.bwd(s, c.mlp_in, dz1, &dmlp_in, g);
  Tensor dy1 = ln2.bwd(s, c.ln2c, dmlp_in, g);
  for (size_t i = 0; i < dy1.v.size(); ++i) dy1.v[i] += dy.v[i];
  // y1 = x + attn(ln1(x))
  Tensor da = attn.bwd(s, c.attnc, dy1, g);
  Tensor dx = ln1.bwd(s, c.ln1c, da, g);
  for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy1.v[i];
  return dx;
}

}  // namespace coda::nn
