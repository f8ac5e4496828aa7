#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace coda {

// Dense row-major double tensor. Images are (C,H,W); token matrices (N,d).
// Everything runs in 64-bit so finite-difference gradient checks are tight.
struct Tensor {
  std::vector<double> v;
  std::vector<int> shape;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)) { v.assign(size_t(numel_of(shape)), 0.0); }
  Tensor(std::initializer_list<int> sh) : Tensor(std::vector<int>(sh)) {}

  static Tensor zeros(std::initializer_list<int> sh) { return Tensor(sh); }

  static int64_t numel_of(const std::vector<int>& sh) {
    int64_t n = 1;
    for (int d : sh) n *= d;
    return n;
  }
  int64_t numel() const { return int64_t(v.size()); }

  int dim(int i) const { return shape[size_t(i)]; }
  int ndim() const { return int(shape.size()); }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  // 2D access
  double& at(int i, int j) { return v[size_t(i) * shape[1] + j]; }
  double at(int i, int j) const { return v[size_t(i) * shape[1] + j]; }
  double* row(int i) { return v.data() + size_t(i) * shape[1]; }
  const double* row(int i) const { return v.data() + size_t(i) * shape[1]; }

  // 3D access (C,H,W)
  double& at(int c, int y, int x) { return v[(size_t(c) * shape[1] + y) * shape[2] + x]; }
  double at(int c, int y, int x) const { return v[(size_t(c) * shape[1] + y) * shape[2] + x]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace coda
