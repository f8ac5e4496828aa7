#include "coda/nn/params.hpp"

#include <cmath>

#include "coda/errors.hpp"
#include "coda/hash.hpp"
#include "coda/tensor.hpp"

namespace coda::nn {

int ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (by_name_.count(name)) throw Error("duplicate parameter name: " + name);
  ParamInfo info;
  info.name = name;
  info.shape = std::move(shape);
  info.n = size_t(Tensor::numel_of(info.shape));
  info.off = flat_.size();
  flat_.resize(flat_.size() + info.n, 0.0);
  infos_.push_back(std::move(info));
  by_name_[name] = int(infos_.size()) - 1;
  return int(infos_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

void ParamStore::set_all_trainable(bool on) {
  for (auto& i : infos_) i.trainable = on;
}

bool ParamStore::layout_matches(const ParamStore& other) const {
  if (infos_.size() != other.infos_.size()) return false;
  for (size_t i = 0; i < infos_.size(); ++i)
    if (infos_[i].name != other.infos_[i].name || infos_[i].shape != other.infos_[i].shape)
      return false;
  return true;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (!layout_matches(other)) throw ShapeMismatch("parameter store layouts differ");
  flat_ = other.flat_;
}

uint64_t ParamStore::value_hash() const { return fnv1a_doubles(flat_); }

void ParamStore::init_normal(int idx, Rng& rng, double std) {
  for (double& v : values(idx)) v = rng.normal(0.0, std);
}

void ParamStore::init_constant(int idx, double v) {
  for (double& x : values(idx)) x = v;
}

void ema_update_store(ParamStore& teacher, const ParamStore& student, double decay) {
  if (!teacher.layout_matches(student)) throw ShapeMismatch("ema: teacher/student layouts differ");
  auto& t = teacher.flat();
  const auto& s = student.flat();
  for (size_t i = 0; i < t.size(); ++i) t[i] = decay * t[i] + (1.0 - decay) * s[i];
}

AdamW::AdamW(const ParamStore& store, double weight_decay, double beta1, double beta2, double eps)
    : m_(store.total(), 0.0), v_(store.total(), 0.0), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(ParamStore& store, const double* grad, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, double(t_));
  const double bc2 = 1.0 - std::pow(b2_, double(t_));
  double* w = store.flat().data();
  for (int p = 0; p < store.count(); ++p) {
    const ParamInfo& info = store.info(p);
    if (!info.trainable) continue;
    for (size_t i = info.off; i < info.off + info.n; ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
    }
  }
}

void sgd_step(ParamStore& store, const double* grad, double lr) {
  double* w = store.flat().data();
  for (int p = 0; p < store.count(); ++p) {
    const ParamInfo& info = store.info(p);
    if (!info.trainable) continue;
    for (size_t i = info.off; i < info.off + info.n; ++i) w[i] -= lr * grad[i];
  }
}

}  // namespace coda::nn
