#pragma once

#include <cstdint>

#include "coda/tensor.hpp"

namespace coda::kern {

// Data-parallel primitives used by the models and the image pipeline.
// Each kernel has a serial reference (<name>_serial) and an OpenMP variant
// (<name>_par). The parallel variants split work across independent rows /
// pixels only, so both produce bitwise-identical results for any thread
// count; tests assert exactly that and tools/bench_kernels compares speed.

// When false, the dispatching wrappers below always take the serial path.
void set_parallel(bool on);
bool parallel_enabled();
int max_threads();

// C(M,N) = A(M,K) * B(K,N)
void matmul_nn_serial(const double* A, const double* B, double* C, int M, int K, int N);
void matmul_nn_par(const double* A, const double* B, double* C, int M, int K, int N);
void matmul_nn(const double* A, const double* B, double* C, int M, int K, int N);

// C(M,N) = A(M,K) * B(N,K)^T
void matmul_nt_serial(const double* A, const double* B, double* C, int M, int K, int N);
void matmul_nt_par(const double* A, const double* B, double* C, int M, int K, int N);
void matmul_nt(const double* A, const double* B, double* C, int M, int K, int N);

// C(ca,cb) += A(rows,ca)^T * B(rows,cb)   (gradient accumulation)
void matmul_at_b_acc_serial(const double* A, const double* B, double* C, int rows, int ca, int cb);
void matmul_at_b_acc_par(const double* A, const double* B, double* C, int rows, int ca, int cb);
void matmul_at_b_acc(const double* A, const double* B, double* C, int rows, int ca, int cb);

// y += a*x
void axpy(int64_t n, double a, const double* x, double* y);

// Separable Gaussian blur on a (C,H,W) image; sigma<=0 is the identity.
// Reflect padding; kernel radius = ceil(3*sigma).
void gaussian_blur_serial(const Tensor& in, Tensor& out, double sigma);
void gaussian_blur_par(const Tensor& in, Tensor& out, double sigma);
void gaussian_blur(const Tensor& in, Tensor& out, double sigma);

// Bilinear resize of a (C,H,W) image to (C,oh,ow); align_corners=false
// (pixel-center) convention. Same-size resize is an exact copy.
void resize_bilinear_serial(const Tensor& in, Tensor& out, int oh, int ow);
void resize_bilinear_par(const Tensor& in, Tensor& out, int oh, int ow);
void resize_bilinear(const Tensor& in, Tensor& out, int oh, int ow);

}  // namespace coda::kern
