// Times the serial reference kernels against their OpenMP variants at the
// shapes the training loops actually hit. Run with OMP_NUM_THREADS set to
// see scaling; both variants are bitwise-identical by construction (see
// tests/test_core.cpp).

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "coda/kernels.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

using namespace coda;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const std::string& name, double gflop, double t_serial, double t_par) {
  std::printf("%-34s %9.3f ms  %9.3f ms  %6.2fx   %7.2f GF/s\n", name.c_str(), t_serial * 1e3,
              t_par * 1e3, t_serial / t_par, gflop / t_par);
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", kern::max_threads());
  std::printf("%-34s %12s %12s %8s %13s\n", "kernel", "serial", "openmp", "speedup", "omp rate");

  Rng rng(42);
  struct MM {
    int M, K, N;
    const char* tag;
  };
  const std::vector<MM> shapes = {
      {17, 64, 64, "matmul 17x64x64 (tokens)"},
      {65, 192, 192, "matmul 65x192x192 (tokens)"},
      {256, 256, 256, "matmul 256x256x256"},
      {1024, 128, 128, "matmul 1024x128x128 (batch rows)"},
  };
  for (const auto& s : shapes) {
    Tensor A({s.M, s.K}), B({s.K, s.N}), C({s.M, s.N});
    for (auto& v : A.v) v = rng.uniform(-1, 1);
    for (auto& v : B.v) v = rng.uniform(-1, 1);
    const double gflop = 2.0 * s.M * s.K * s.N / 1e9;
    const int reps = std::max(4, int(2e8 / (gflop * 1e9)));
    double ts = time_of([&] { kern::matmul_nn_serial(A.data(), B.data(), C.data(), s.M, s.K, s.N); }, reps);
    double tp = time_of([&] { kern::matmul_nn_par(A.data(), B.data(), C.data(), s.M, s.K, s.N); }, reps);
    report(s.tag, gflop, ts, tp);
  }

  {
    Tensor img({3, 256, 256});
    for (auto& v : img.v) v = rng.uniform();
    Tensor out;
    double ts = time_of([&] { kern::gaussian_blur_serial(img, out, 1.2); }, 8);
    double tp = time_of([&] { kern::gaussian_blur_par(img, out, 1.2); }, 8);
    report("gaussian_blur 3x256x256 s=1.2", 0.0, ts, tp);
    double ts2 = time_of([&] { kern::resize_bilinear_serial(img, out, 64, 64); }, 32);
    double tp2 = time_of([&] { kern::resize_bilinear_par(img, out, 64, 64); }, 32);
    report("resize_bilinear 256->64", 0.0, ts2, tp2);
  }
  return 0;
}
