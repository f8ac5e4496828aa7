#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "coda/rng.hpp"

namespace coda::nn {

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  size_t off = 0, n = 0;
  bool trainable = true;
};

// Flat-layout parameter container. Gradients live in equally-sized flat
// buffers (GradBuf), which makes per-sample gradient accumulation, EMA
// updates, checkpointing and finite-difference checks simple array ops.
class ParamStore {
 public:
  int add(const std::string& name, std::vector<int> shape);

  int count() const { return int(infos_.size()); }
  const ParamInfo& info(int idx) const { return infos_[size_t(idx)]; }
  ParamInfo& info(int idx) { return infos_[size_t(idx)]; }
  int find(const std::string& name) const;  // -1 if absent

  double* data(int idx) { return flat_.data() + infos_[size_t(idx)].off; }
  const double* data(int idx) const { return flat_.data() + infos_[size_t(idx)].off; }
  std::span<double> values(int idx) { return {data(idx), infos_[size_t(idx)].n}; }
  std::span<const double> values(int idx) const { return {data(idx), infos_[size_t(idx)].n}; }

  size_t total() const { return flat_.size(); }
  std::vector<double>& flat() { return flat_; }
  const std::vector<double>& flat() const { return flat_; }

  void set_all_trainable(bool on);
  bool layout_matches(const ParamStore& other) const;
  void copy_values_from(const ParamStore& other);  // throws ShapeMismatch

  uint64_t value_hash() const;

  // init helpers
  void init_normal(int idx, Rng& rng, double std);
  void init_constant(int idx, double v);

 private:
  std::vector<double> flat_;
  std::vector<ParamInfo> infos_;
  std::unordered_map<std::string, int> by_name_;
};

struct GradBuf {
  std::vector<double> g;
  GradBuf() = default;
  explicit GradBuf(const ParamStore& s) : g(s.total(), 0.0) {}
  void zero() { std::fill(g.begin(), g.end(), 0.0); }
  double* base() { return g.data(); }
  void add(const GradBuf& o) {
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
  }
};

// teacher <- decay*teacher + (1-decay)*student, elementwise over all params
void ema_update_store(ParamStore& teacher, const ParamStore& student, double decay);

// AdamW; frozen (non-trainable) parameters are skipped entirely: no moment
// update, no decay, no write.
class AdamW {
 public:
  AdamW(const ParamStore& store, double weight_decay = 0.0, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore& store, const double* grad, double lr);
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<double> m_, v_;
  int64_t t_ = 0;
  double wd_, b1_, b2_, eps_;
};

// Plain SGD used by the per-image test-time loop.
void sgd_step(ParamStore& store, const double* grad, double lr);

}  // namespace coda::nn
