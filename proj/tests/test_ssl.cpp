#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coda/errors.hpp"
#include "coda/ssl/distill.hpp"
#include "testutil.hpp"

using namespace coda;
using namespace coda::nn;
using namespace coda::ssl;

namespace {

ViTConfig tiny_vit() {
  ViTConfig cfg;
  cfg.channels = 2;
  cfg.img_size = 16;
  cfg.patch = 4;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

DinoHeadConfig tiny_head() {
  DinoHeadConfig hc;
  hc.in = 16;
  hc.hidden = 24;
  hc.bottleneck = 8;
  hc.out = 12;
  return hc;
}

Tensor random_image(int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor img({c, h, w});
  for (auto& v : img.v) v = rng.uniform();
  return img;
}

views::ViewConfig view_cfg() {
  views::ViewConfig vc;
  vc.global_size = 16;
  vc.local_size = 8;
  vc.global_views = 2;
  vc.local_views = 4;
  return vc;
}

// Independent re-implementation of the pair sum used as the numerical
// oracle: plain exp/sum softmaxes, no max subtraction, no shared code.
double oracle_pair_sum(const std::vector<std::vector<double>>& teacher,
                       const std::vector<std::vector<double>>& student,
                       const std::vector<double>& center, double tt, double ts) {
  const int g = int(teacher.size()), V = int(student.size());
  const int P = int(center.size());
  double total = 0.0;
  int n_pairs = 0;
  for (int v = 0; v < g; ++v) {
    std::vector<double> pt(static_cast<size_t>(P));
    double z = 0.0;
    for (int k = 0; k < P; ++k) z += std::exp((teacher[size_t(v)][size_t(k)] - center[size_t(k)]) / tt);
    for (int k = 0; k < P; ++k)
      pt[size_t(k)] = std::exp((teacher[size_t(v)][size_t(k)] - center[size_t(k)]) / tt) / z;
    for (int u = 0; u < V; ++u) {
      if (u == v) continue;
      double zs = 0.0;
      for (int k = 0; k < P; ++k) zs += std::exp(student[size_t(u)][size_t(k)] / ts);
      double h = 0.0;
      for (int k = 0; k < P; ++k)
        h -= pt[size_t(k)] * (student[size_t(u)][size_t(k)] / ts - std::log(zs));
      total += h;
      ++n_pairs;
    }
  }
  return total / n_pairs;
}

struct Bundle {
  VisionTransformer fe;
  DinoHead head;
  DistillState state;
  Bundle(uint64_t seed, DistillConfig cfg = {})
      : fe(tiny_vit(), Rng(seed)), head(tiny_head(), Rng(seed + 1)), state(fe, head, cfg) {}
};

}  // namespace

TEST_CASE("ema_update: endpoints, paper constant, contractive property") {
  Bundle b(1);
  Rng rng(2);
  for (auto& v : b.state.teacher_fe.params.flat()) v = rng.uniform(-1, 1);

  SUBCASE("decay 1 leaves the teacher unchanged") {
    b.state.cfg.ema_decay = 1.0;
    auto before = b.state.teacher_fe.params.flat();
    ema_update(b.state);
    CHECK(b.state.teacher_fe.params.flat() == before);
  }
  SUBCASE("decay 0 copies the student") {
    b.state.cfg.ema_decay = 0.0;
    ema_update(b.state);
    CHECK(b.state.teacher_fe.params.flat() == b.fe.params.flat());
    CHECK(b.state.teacher_head.params.flat() == b.head.params.flat());
  }
  SUBCASE("scalar probe at 0.996") {
    // theta_t = 1, theta_s = 0  ->  0.996
    b.state.cfg.ema_decay = 0.996;
    b.state.teacher_fe.params.flat()[0] = 1.0;
    b.fe.params.flat()[0] = 0.0;
    ema_update(b.state);
    CHECK(b.state.teacher_fe.params.flat()[0] == doctest::Approx(0.996).epsilon(1e-12));
  }
  SUBCASE("contraction toward the student, elementwise") {
    b.state.cfg.ema_decay = 0.996;
    const auto t0 = b.state.teacher_fe.params.flat();
    const auto& s = b.fe.params.flat();
    ema_update(b.state);
    const auto& t1 = b.state.teacher_fe.params.flat();
    for (size_t i = 0; i < 50; ++i) {
      CHECK(std::abs(t1[i] - s[i]) ==
            doctest::Approx(0.996 * std::abs(t0[i] - s[i])).epsilon(1e-9));
    }
  }
}

TEST_CASE("center_update: momentum endpoints and arithmetic case") {
  Bundle b(3);
  auto& c = b.state.center;

  SUBCASE("momentum 1 leaves the center unchanged") {
    b.state.cfg.center_momentum = 1.0;
    std::fill(c.begin(), c.end(), 0.25);
    center_update(b.state, {std::vector<double>(c.size(), 9.0)});
    for (double v : c) CHECK(v == 0.25);
  }
  SUBCASE("momentum 0 takes the batch mean") {
    b.state.cfg.center_momentum = 0.0;
    std::vector<std::vector<double>> batch = {std::vector<double>(c.size(), 2.0),
                                              std::vector<double>(c.size(), 4.0)};
    center_update(b.state, batch);
    for (double v : c) CHECK(v == doctest::Approx(3.0));
  }
  SUBCASE("m=0.9, c=0, mean 10 -> 1.0") {
    b.state.cfg.center_momentum = 0.9;
    std::fill(c.begin(), c.end(), 0.0);
    center_update(b.state, {std::vector<double>(c.size(), 10.0)});
    for (double v : c) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("distill_pair_core: analytic one-hot/uniform case gives log P") {
  // teacher sharply one-hot at index 2, student logits all equal -> uniform
  const int P = 4;
  std::vector<double> onehot(P, 0.0);
  onehot[2] = 1000.0;
  std::vector<std::vector<double>> teacher = {onehot};
  std::vector<std::vector<double>> student = {onehot, std::vector<double>(P, 0.0)};
  std::vector<double> center(P, 0.0);
  const double loss = distill_pair_core(teacher, student, 1, center, 0.04, 0.1);
  // single teacher view, single valid pair (u=1)
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("distill_pair_core: error when no teacher view or no pair exists") {
  std::vector<double> center(4, 0.0);
  std::vector<std::vector<double>> none;
  std::vector<std::vector<double>> one = {std::vector<double>(4, 0.0)};
  CHECK_THROWS_AS(distill_pair_core(none, one, 0, center, 0.04, 0.1), NoGlobalView);
  CHECK_THROWS_AS(distill_pair_core(one, one, 1, center, 0.04, 0.1), NoGlobalView);
}

TEST_CASE("cross-batch stub: cross-image terms dominate within-image terms") {
  const int P = 6;
  const double sharp = 2.0;  // student logits, temperature 0.1 sharpens further
  auto onehot = [&](int j, double scale) {
    std::vector<double> v(P, 0.0);
    v[size_t(j)] = scale;
    return v;
  };
  // image A projects to one-hot 0, image B to one-hot 1
  std::vector<std::vector<double>> teacher = {onehot(0, 100.0), onehot(1, 100.0)};
  std::vector<std::vector<double>> student = {onehot(0, sharp), onehot(1, sharp),
                                              onehot(0, sharp), onehot(1, sharp)};
  std::vector<double> center(P, 0.0);
  Tensor terms;
  (void)distill_pair_core(teacher, student, 2, center, 0.04, 0.1, nullptr, &terms);
  // teacher A vs student views of B are cross-image; vs views of A within
  const double cross = terms.at(0, 1);
  const double within = terms.at(0, 2);
  CHECK(cross > within);
  CHECK(terms.at(1, 0) > terms.at(1, 3));
}

TEST_CASE("distill_loss: matches the independent pair-enumeration oracle") {
  Bundle b(7);
  Rng vr(8);
  views::ViewSet vs = views::build_views(random_image(2, 24, 24, 9), view_cfg(), vr, "r0");

  // teacher weights differ from the student's to make the test non-trivial
  Rng tw(10);
  for (auto& v : b.state.teacher_fe.params.flat()) v += 0.01 * tw.normal();
  for (auto& v : b.state.teacher_head.params.flat()) v += 0.01 * tw.normal();
  for (auto& v : b.state.center) v = 0.05 * tw.normal();

  const double loss = distill_loss(b.state, vs);

  // recompute raw projections independently and evaluate the oracle
  std::vector<std::vector<double>> teacher_out, student_out;
  for (const auto& gv : vs.global_views) {
    VisionTransformer::Cache fc;
    Tensor tokens = b.state.teacher_fe.forward(gv, fc);
    DinoHead::Cache hc;
    teacher_out.push_back(b.state.teacher_head.fwd(tokens.row(0), hc));
  }
  for (int u = 0; u < vs.total_views(); ++u) {
    VisionTransformer::Cache fc;
    Tensor tokens = b.fe.forward(vs.view(u), fc);
    DinoHead::Cache hc;
    student_out.push_back(b.head.fwd(tokens.row(0), hc));
  }
  const double oracle =
      oracle_pair_sum(teacher_out, student_out, b.state.center, 0.04, 0.1);
  CHECK(std::abs(loss - oracle) <= 1e-6 * std::max(std::abs(oracle), 1e-12));
  CHECK(loss >= 0.0);
}

TEST_CASE("distill_loss: student gradient passes finite differences") {
  Bundle b(11);
  Rng vr(12);
  views::ViewConfig vc = view_cfg();
  vc.local_views = 2;
  views::ViewSet vs = views::build_views(random_image(2, 20, 20, 13), vc, vr, "r0");

  Rng tw(14);
  for (auto& v : b.state.center) v = 0.02 * tw.normal();

  auto loss_fn = [&]() { return distill_loss(b.state, vs); };
  GradBuf gfe(b.fe.params), gh(b.head.params);
  (void)distill_loss(b.state, vs, gfe.base(), gh.base());

  Rng pick(15);
  CHECK(testutil::fd_worst_rel_error(b.fe.params, gfe.base(), loss_fn, 70, pick) <= 1e-3);
  CHECK(testutil::fd_worst_rel_error(b.head.params, gh.base(), loss_fn, 50, pick) <= 1e-3);
}

TEST_CASE("distill_loss: teacher and center receive no update from loss/backward") {
  Bundle b(17);
  Rng vr(18);
  views::ViewSet vs = views::build_views(random_image(2, 16, 16, 19), view_cfg(), vr, "r0");

  const uint64_t tfe = b.state.teacher_fe.params.value_hash();
  const uint64_t th = b.state.teacher_head.params.value_hash();
  const auto center_before = b.state.center;

  GradBuf gfe(b.fe.params), gh(b.head.params);
  (void)distill_loss(b.state, vs, gfe.base(), gh.base());

  CHECK(b.state.teacher_fe.params.value_hash() == tfe);
  CHECK(b.state.teacher_head.params.value_hash() == th);
  CHECK(b.state.center == center_before);
}

TEST_CASE("distill_loss is non-negative over random view sets") {
  for (uint64_t trial = 0; trial < 5; ++trial) {
    Bundle b(100 + trial);
    Rng vr(200 + trial);
    views::ViewSet vs =
        views::build_views(random_image(2, 20, 20, 300 + trial), view_cfg(), vr, "r");
    CHECK(distill_loss(b.state, vs) >= 0.0);
  }
}

TEST_CASE("degenerate pair: cross-batch mode equals single-image mode on mirrored crops") {
  Bundle b(21);
  Tensor img = random_image(2, 16, 16, 22);

  // identical images with mirrored (identical) crops: duplicate one view set
  views::ViewConfig vc = view_cfg();
  vc = vc.with_augmentations_off();
  vc.global_views = 1;
  vc.local_views = 3;
  vc.global_scale_lo = vc.global_scale_hi = 1.0;

  Rng r1(23), r2(23);
  views::ViewSet a = views::build_views(img, vc, r1, "a");
  views::ViewSet bset = views::build_views(img, vc, r2, "b");
  views::ViewSet pair;
  pair.provenance = {"a", "b"};
  pair.global_views.push_back(a.global_views[0]);
  pair.global_views.push_back(bset.global_views[0]);
  for (auto& v : a.local_views) pair.local_views.push_back(v);
  for (auto& v : bset.local_views) pair.local_views.push_back(v);

  views::ViewSet single;
  single.provenance = {"a"};
  single.global_views = pair.global_views;
  single.local_views = pair.local_views;

  const double l_pair = distill_loss_cross_batch(b.state, pair);
  const double l_single = distill_loss(b.state, single);
  CHECK(l_pair == doctest::Approx(l_single).epsilon(1e-15));
}

TEST_CASE("cross-batch loss validates the pair view set") {
  Bundle b(25);
  views::ViewSet vs;
  vs.provenance = {"only_one"};
  vs.global_views.push_back(random_image(2, 16, 16, 26));
  vs.global_views.push_back(random_image(2, 16, 16, 27));
  CHECK_THROWS_AS(distill_loss_cross_batch(b.state, vs), ShapeMismatch);
}

TEST_CASE("teacher starts as an exact copy of the student at phase start") {
  Bundle b(29);
  CHECK(b.state.teacher_fe.params.flat() == b.fe.params.flat());
  CHECK(b.state.teacher_head.params.flat() == b.head.params.flat());
}
