#include "coda/ssl/distill.hpp"

#include <cmath>

#include "coda/errors.hpp"
#include "coda/nn/layers.hpp"

namespace coda::ssl {

DistillState::DistillState(nn::VisionTransformer& sfe, nn::DinoHead& shead,
                           const DistillConfig& config)
    : student_fe(&sfe),
      student_head(&shead),
      teacher_fe(sfe.cfg, Rng(0)),
      teacher_head(shead.cfg, Rng(0)),
      center(size_t(shead.cfg.out), 0.0),
      cfg(config) {
  if (!(cfg.teacher_temp < cfg.student_temp))
    throw Error("distill config: teacher temperature must be sharper (smaller) than student");
  if (cfg.ema_decay < 0.0 || cfg.ema_decay > 1.0) throw Error("distill config: ema decay in [0,1]");
  reset_teacher_from_student();
}

void DistillState::reset_teacher_from_student() {
  teacher_fe.params.copy_values_from(student_fe->params);
  teacher_head.params.copy_values_from(student_head->params);
}

double distill_pair_core(const std::vector<std::vector<double>>& teacher_out,
                         const std::vector<std::vector<double>>& student_out, int n_globals,
                         const std::vector<double>& center, double teacher_temp,
                         double student_temp, std::vector<std::vector<double>>* dstudent,
                         Tensor* pair_terms) {
  const int g = int(teacher_out.size());
  const int V = int(student_out.size());
  if (g == 0) throw NoGlobalView("objective needs at least one global (teacher) view");
  if (V < 2) throw NoGlobalView("objective needs at least two views to form a pair");
  if (n_globals != g) throw ShapeMismatch("teacher views must mirror the leading student views");
  const int P = int(center.size());

  // teacher probabilities: softmax((t - c)/tt), no gradient
  std::vector<std::vector<double>> pt(static_cast<size_t>(g));
  for (int v = 0; v < g; ++v) {
    if (int(teacher_out[size_t(v)].size()) != P) throw ShapeMismatch("teacher output width != center");
    std::vector<double>& p = pt[size_t(v)];
    p.resize(size_t(P));
    double mx = -1e300;
    for (int k = 0; k < P; ++k) {
      p[size_t(k)] = (teacher_out[size_t(v)][size_t(k)] - center[size_t(k)]) / teacher_temp;
      mx = std::max(mx, p[size_t(k)]);
    }
    double sum = 0.0;
    for (int k = 0; k < P; ++k) {
      p[size_t(k)] = std::exp(p[size_t(k)] - mx);
      sum += p[size_t(k)];
    }
    for (int k = 0; k < P; ++k) p[size_t(k)] /= sum;
  }

  // student log-probabilities and probabilities at temperature ts
  std::vector<std::vector<double>> logps(static_cast<size_t>(V)), ps(static_cast<size_t>(V));
  std::vector<double> scaled(static_cast<size_t>(P));
  for (int u = 0; u < V; ++u) {
    if (int(student_out[size_t(u)].size()) != P) throw ShapeMismatch("student output width != center");
    for (int k = 0; k < P; ++k) scaled[size_t(k)] = student_out[size_t(u)][size_t(k)] / student_temp;
    logps[size_t(u)].resize(size_t(P));
    nn::log_softmax_row(scaled.data(), logps[size_t(u)].data(), P);
    ps[size_t(u)].resize(size_t(P));
    for (int k = 0; k < P; ++k) ps[size_t(u)][size_t(k)] = std::exp(logps[size_t(u)][size_t(k)]);
  }

  const int n_pairs = g * (V - 1);
  if (dstudent) dstudent->assign(size_t(V), std::vector<double>(size_t(P), 0.0));
  if (pair_terms) *pair_terms = Tensor({g, V});

  double total = 0.0;
  for (int v = 0; v < g; ++v) {
    for (int u = 0; u < V; ++u) {
      if (u == v) continue;
      double h = 0.0;
      for (int k = 0; k < P; ++k) h -= pt[size_t(v)][size_t(k)] * logps[size_t(u)][size_t(k)];
      total += h;
      if (pair_terms) pair_terms->at(v, u) = h;
      if (dstudent) {
        // d/ds_u of -sum p_t log softmax(s_u/ts) = (softmax(s_u/ts) - p_t)/ts
        std::vector<double>& dsu = (*dstudent)[size_t(u)];
        const double w = 1.0 / (double(n_pairs) * student_temp);
        for (int k = 0; k < P; ++k)
          dsu[size_t(k)] += w * (ps[size_t(u)][size_t(k)] - pt[size_t(v)][size_t(k)]);
      }
    }
  }
  return total / double(n_pairs);
}

namespace {

double distill_loss_impl(const DistillState& state, const views::ViewSet& views, double* g_fe,
                         double* g_head, std::vector<std::vector<double>>* teacher_collect,
                         Tensor* pair_terms) {
  const int g = int(views.global_views.size());
  const int V = views.total_views();
  if (g == 0) throw NoGlobalView("view set has no global view");
  if (V < 2) throw NoGlobalView("view set has fewer than two views");

  // teacher path: globals only, no caches kept
  std::vector<std::vector<double>> teacher_out(static_cast<size_t>(g));
  for (int v = 0; v < g; ++v) {
    nn::VisionTransformer::Cache fc;
    Tensor tokens = state.teacher_fe.forward(views.global_views[size_t(v)], fc);
    nn::DinoHead::Cache hc;
    teacher_out[size_t(v)] = state.teacher_head.fwd(tokens.row(0), hc);
  }

  // student path: all views, caches kept when gradients are wanted
  const bool want_grad = (g_fe != nullptr) || (g_head != nullptr);
  std::vector<nn::VisionTransformer::Cache> fcs(static_cast<size_t>(V));
  std::vector<nn::DinoHead::Cache> hcs(static_cast<size_t>(V));
  std::vector<std::vector<double>> student_out(static_cast<size_t>(V));
  for (int u = 0; u < V; ++u) {
    Tensor tokens = state.student_fe->forward(views.view(u), fcs[size_t(u)]);
    student_out[size_t(u)] = state.student_head->fwd(tokens.row(0), hcs[size_t(u)]);
  }

  std::vector<std::vector<double>> dstudent;
  const double loss = distill_pair_core(teacher_out, student_out, g, state.center,
                                        state.cfg.teacher_temp, state.cfg.student_temp,
                                        want_grad ? &dstudent : nullptr, pair_terms);

  if (want_grad) {
    const int d = state.student_fe->cfg.dim;
    for (int u = 0; u < V; ++u) {
      std::vector<double> dcls;
      state.student_head->bwd(hcs[size_t(u)], dstudent[size_t(u)], g_head, g_fe ? &dcls : nullptr);
      if (g_fe) {
        const int n = int(fcs[size_t(u)].patch_ids.size()) + 1;
        Tensor dtokens({n, d});
        for (int k = 0; k < d; ++k) dtokens.at(0, k) = dcls[size_t(k)];
        state.student_fe->backward(fcs[size_t(u)], dtokens, g_fe);
      }
    }
  }
  if (teacher_collect)
    for (auto& t : teacher_out) teacher_collect->push_back(std::move(t));
  return loss;
}

}  // namespace

double distill_loss(const DistillState& state, const views::ViewSet& views, double* g_fe,
                    double* g_head, std::vector<std::vector<double>>* teacher_collect,
                    Tensor* pair_terms) {
  return distill_loss_impl(state, views, g_fe, g_head, teacher_collect, pair_terms);
}

double distill_loss_cross_batch(const DistillState& state, const views::ViewSet& pair_views,
                                double* g_fe, double* g_head,
                                std::vector<std::vector<double>>* teacher_collect,
                                Tensor* pair_terms) {
  if (pair_views.provenance.size() != 2)
    throw ShapeMismatch("cross-batch objective expects a two-image pair view set");
  return distill_loss_impl(state, pair_views, g_fe, g_head, teacher_collect, pair_terms);
}

void ema_update(DistillState& state) {
  nn::ema_update_store(state.teacher_fe.params, state.student_fe->params, state.cfg.ema_decay);
  nn::ema_update_store(state.teacher_head.params, state.student_head->params, state.cfg.ema_decay);
}

void center_update(DistillState& state, const std::vector<std::vector<double>>& teacher_outputs) {
  if (teacher_outputs.empty()) return;
  const int P = int(state.center.size());
  std::vector<double> mean(size_t(P), 0.0);
  for (const auto& t : teacher_outputs) {
    if (int(t.size()) != P) throw ShapeMismatch("teacher output width != center");
    for (int k = 0; k < P; ++k) mean[size_t(k)] += t[size_t(k)];
  }
  for (int k = 0; k < P; ++k) mean[size_t(k)] /= double(teacher_outputs.size());
  const double m = state.cfg.center_momentum;
  for (int k = 0; k < P; ++k)
    state.center[size_t(k)] = m * state.center[size_t(k)] + (1.0 - m) * mean[size_t(k)];
}

}  // namespace coda::ssl
