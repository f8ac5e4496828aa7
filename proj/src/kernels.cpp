#include "coda/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace coda::kern {

namespace {
std::atomic<bool> g_parallel{true};

inline void mm_nn_row(const double* A, const double* B, double* C, int i, int K, int N) {
  double* c = C + size_t(i) * N;
  std::memset(c, 0, sizeof(double) * size_t(N));
  const double* a = A + size_t(i) * K;
  for (int k = 0; k < K; ++k) {
    const double av = a[k];
    const double* b = B + size_t(k) * N;
    for (int j = 0; j < N; ++j) c[j] += av * b[j];
  }
}

inline void mm_nt_row(const double* A, const double* B, double* C, int i, int K, int N) {
  const double* a = A + size_t(i) * K;
  double* c = C + size_t(i) * N;
  for (int j = 0; j < N; ++j) {
    const double* b = B + size_t(j) * K;
    double acc = 0.0;
    for (int k = 0; k < K; ++k) acc += a[k] * b[k];
    c[j] = acc;
  }
}

// One output row of C += A^T B: row r of C gathers column r of A.
inline void mm_atb_row(const double* A, const double* B, double* C, int r, int rows, int ca, int cb) {
  double* c = C + size_t(r) * cb;
  for (int n = 0; n < rows; ++n) {
    const double av = A[size_t(n) * ca + r];
    const double* b = B + size_t(n) * cb;
    for (int j = 0; j < cb; ++j) c[j] += av * b[j];
  }
}

std::vector<double> gauss_taps(double sigma, int& radius) {
  radius = int(std::ceil(3.0 * sigma));
  std::vector<double> w(size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    w[size_t(i + radius)] = v;
    sum += v;
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline int reflect(int i, int n) {
  // reflect-101 style without repeating the border sample twice
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void blur_impl(const Tensor& in, Tensor& out, double sigma, bool par) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  out = Tensor({C, H, W});
  if (sigma <= 0.0) {
    out.v = in.v;
    return;
  }
  int radius = 0;
  const std::vector<double> w = gauss_taps(sigma, radius);
  Tensor tmp({C, H, W});
  // horizontal pass; rows are independent
  const int rows = C * H;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par && rows > 8)
#endif
  for (int r = 0; r < rows; ++r) {
    const int c = r / H, y = r % H;
    const double* src = in.data() + (size_t(c) * H + y) * W;
    double* dst = tmp.data() + (size_t(c) * H + y) * W;
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += w[size_t(t + radius)] * src[reflect(x + t, W)];
      dst[x] = acc;
    }
  }
  // vertical pass; columns independent, parallel over (c,y) output rows
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par && rows > 8)
#endif
  for (int r = 0; r < rows; ++r) {
    const int c = r / H, y = r % H;
    double* dst = out.data() + (size_t(c) * H + y) * W;
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += w[size_t(t + radius)] * tmp.at(c, reflect(y + t, H), x);
      dst[x] = acc;
    }
  }
}

void resize_impl(const Tensor& in, Tensor& out, int oh, int ow, bool par) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  out = Tensor({C, oh, ow});
  if (oh == H && ow == W) {
    out.v = in.v;
    return;
  }
  const double sy = double(H) / oh, sx = double(W) / ow;
  const int rows = C * oh;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par && rows > 8)
#endif
  for (int r = 0; r < rows; ++r) {
    const int c = r / oh, y = r % oh;
    const double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    const double wy = fy - y0;
    int y1 = std::min(y0 + 1, H - 1);
    y0 = std::max(y0, 0);
    double* dst = out.data() + (size_t(c) * oh + y) * ow;
    for (int x = 0; x < ow; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      const double wx = fx - x0;
      int x1 = std::min(x0 + 1, W - 1);
      x0 = std::max(x0, 0);
      const double v00 = in.at(c, y0, x0), v01 = in.at(c, y0, x1);
      const double v10 = in.at(c, y1, x0), v11 = in.at(c, y1, x1);
      dst[x] = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
    }
  }
}

}  // namespace

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul_nn_serial(const double* A, const double* B, double* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) mm_nn_row(A, B, C, i, K, N);
}
void matmul_nn_par(const double* A, const double* B, double* C, int M, int K, int N) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (int64_t(M) * K * N > 32768 && max_threads() > 1)
#endif
  for (int i = 0; i < M; ++i) mm_nn_row(A, B, C, i, K, N);
}
void matmul_nn(const double* A, const double* B, double* C, int M, int K, int N) {
  if (parallel_enabled())
    matmul_nn_par(A, B, C, M, K, N);
  else
    matmul_nn_serial(A, B, C, M, K, N);
}

void matmul_nt_serial(const double* A, const double* B, double* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) mm_nt_row(A, B, C, i, K, N);
}
void matmul_nt_par(const double* A, const double* B, double* C, int M, int K, int N) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (int64_t(M) * K * N > 32768 && max_threads() > 1)
#endif
  for (int i = 0; i < M; ++i) mm_nt_row(A, B, C, i, K, N);
}
void matmul_nt(const double* A, const double* B, double* C, int M, int K, int N) {
  if (parallel_enabled())
    matmul_nt_par(A, B, C, M, K, N);
  else
    matmul_nt_serial(A, B, C, M, K, N);
}

void matmul_at_b_acc_serial(const double* A, const double* B, double* C, int rows, int ca, int cb) {
  for (int r = 0; r < ca; ++r) mm_atb_row(A, B, C, r, rows, ca, cb);
}
void matmul_at_b_acc_par(const double* A, const double* B, double* C, int rows, int ca, int cb) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (int64_t(rows) * ca * cb > 32768 && max_threads() > 1)
#endif
  for (int r = 0; r < ca; ++r) mm_atb_row(A, B, C, r, rows, ca, cb);
}
void matmul_at_b_acc(const double* A, const double* B, double* C, int rows, int ca, int cb) {
  if (parallel_enabled())
    matmul_at_b_acc_par(A, B, C, rows, ca, cb);
  else
    matmul_at_b_acc_serial(A, B, C, rows, ca, cb);
}

void axpy(int64_t n, double a, const double* x, double* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gaussian_blur_serial(const Tensor& in, Tensor& out, double sigma) { blur_impl(in, out, sigma, false); }
void gaussian_blur_par(const Tensor& in, Tensor& out, double sigma) { blur_impl(in, out, sigma, true); }
void gaussian_blur(const Tensor& in, Tensor& out, double sigma) { blur_impl(in, out, sigma, parallel_enabled()); }

void resize_bilinear_serial(const Tensor& in, Tensor& out, int oh, int ow) { resize_impl(in, out, oh, ow, false); }
void resize_bilinear_par(const Tensor& in, Tensor& out, int oh, int ow) { resize_impl(in, out, oh, ow, true); }
void resize_bilinear(const Tensor& in, Tensor& out, int oh, int ow) { resize_impl(in, out, oh, ow, parallel_enabled()); }

}  // namespace coda::kern
