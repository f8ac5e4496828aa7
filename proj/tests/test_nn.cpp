#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "coda/errors.hpp"
#include "coda/nn/checkpoint.hpp"
#include "coda/nn/models.hpp"
#include "coda/nn/vit.hpp"
#include "coda/rng.hpp"
#include "testutil.hpp"

using namespace coda;
using namespace coda::nn;

namespace {

Tensor random_image(int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor img({c, h, w});
  for (auto& v : img.v) v = rng.uniform();
  return img;
}

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

}  // namespace

TEST_CASE("vit: token shapes at the default geometry") {
  ViTConfig cfg;  // patch 8, d=192, depth 6 defaults
  cfg.img_size = 64;
  VisionTransformer fe(cfg, Rng(1));
  VisionTransformer::Cache c;
  Tensor out = fe.forward(random_image(3, 64, 64, 2), c);
  CHECK(out.dim(0) == 65);
  CHECK(out.dim(1) == 192);

  // local view through interpolated position embeddings
  Tensor out2 = fe.forward(random_image(3, 32, 32, 3), c);
  CHECK(out2.dim(0) == 17);
  CHECK(out2.dim(1) == 192);
}

TEST_CASE("vit: inference is deterministic given fixed weights and input") {
  VisionTransformer fe(tiny_vit(), Rng(5));
  Tensor img = random_image(2, 16, 16, 7);
  VisionTransformer::Cache c1, c2;
  Tensor a = fe.forward(img, c1);
  Tensor b = fe.forward(img, c2);
  CHECK(a.v == b.v);
}

TEST_CASE("vit: analytic gradient matches finite differences (CLS-sum probe)") {
  VisionTransformer fe(tiny_vit(), Rng(11));
  Tensor img = random_image(2, 16, 16, 13);

  auto loss_fn = [&]() {
    VisionTransformer::Cache c;
    Tensor out = fe.forward(img, c);
    double s = 0.0;
    for (int k = 0; k < out.dim(1); ++k) s += out.at(0, k);
    return s;
  };

  GradBuf g(fe.params);
  {
    VisionTransformer::Cache c;
    Tensor out = fe.forward(img, c);
    Tensor dout({out.dim(0), out.dim(1)});
    for (int k = 0; k < out.dim(1); ++k) dout.at(0, k) = 1.0;
    fe.backward(c, dout, g.base());
  }
  Rng pick(17);
  const double worst = testutil::fd_worst_rel_error(fe.params, g.base(), loss_fn, 120, pick);
  CHECK(worst <= 1e-3);
}

TEST_CASE("vit: gradients flow through interpolated position embeddings") {
  VisionTransformer fe(tiny_vit(), Rng(23));
  Tensor img = random_image(2, 8, 8, 29);  // 2x2 grid vs base 4x4

  auto loss_fn = [&]() {
    VisionTransformer::Cache c;
    Tensor out = fe.forward(img, c);
    double s = 0.0;
    for (auto v : out.v) s += v * v;
    return s;
  };
  GradBuf g(fe.params);
  {
    VisionTransformer::Cache c;
    Tensor out = fe.forward(img, c);
    Tensor dout = out;
    for (auto& v : dout.v) v *= 2.0;
    fe.backward(c, dout, g.base());
  }
  Rng pick(31);
  CHECK(testutil::fd_worst_rel_error(fe.params, g.base(), loss_fn, 120, pick) <= 1e-3);
}

TEST_CASE("interp_grid: identity at base grid and adjoint consistency") {
  const int g0 = 4, d = 5;
  Rng rng(3);
  std::vector<double> table(size_t(g0 * g0 * d));
  for (auto& v : table) v = rng.uniform(-1, 1);

  std::vector<double> same(table.size());
  interp_grid(table.data(), g0, d, g0, g0, same.data());
  for (size_t i = 0; i < table.size(); ++i) CHECK(same[i] == doctest::Approx(table[i]).epsilon(1e-15));

  // <A x, y> == <x, A^T y> for the resampling operator
  const int gh = 3, gw = 2;
  std::vector<double> y(size_t(gh * gw * d));
  for (auto& v : y) v = rng.uniform(-1, 1);
  std::vector<double> Ax(size_t(gh * gw * d));
  interp_grid(table.data(), g0, d, gh, gw, Ax.data());
  std::vector<double> Aty(table.size(), 0.0);
  interp_grid_adjoint(y.data(), g0, d, gh, gw, Aty.data());
  double lhs = std::inner_product(Ax.begin(), Ax.end(), y.begin(), 0.0);
  double rhs = std::inner_product(table.begin(), table.end(), Aty.begin(), 0.0);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("classifier: consumes tokens, logits length K, gradient check") {
  ClassifierConfig cc;
  cc.in_dim = 16;
  cc.dim = 12;
  cc.depth = 2;
  cc.heads = 2;
  cc.classes = 8;
  cc.mlp_ratio = 2.0;
  TokenClassifier cls(cc, Rng(3));

  Rng rng(4);
  Tensor tokens({5, 16});
  for (auto& v : tokens.v) v = rng.uniform(-1, 1);

  TokenClassifier::Cache c;
  auto logits = cls.logits(tokens, c);
  REQUIRE(int(logits.size()) == 8);

  std::vector<double> probe(8);
  for (auto& v : probe) v = rng.uniform(-1, 1);
  auto loss_fn = [&]() {
    TokenClassifier::Cache cc2;
    auto lg = cls.logits(tokens, cc2);
    double s = 0.0;
    for (int k = 0; k < 8; ++k) s += probe[size_t(k)] * lg[size_t(k)];
    return s;
  };
  GradBuf g(cls.params);
  cls.backward(c, probe, g.base());
  Rng pick(6);
  CHECK(testutil::fd_worst_rel_error(cls.params, g.base(), loss_fn, 100, pick) <= 1e-3);
}

TEST_CASE("dual model: phase partition flags and idempotent round trip") {
  ViTConfig vc = tiny_vit();
  ClassifierConfig cc;
  cc.in_dim = vc.dim;
  cc.dim = 12;
  cc.depth = 1;
  cc.heads = 2;
  cc.classes = 4;
  DualModel dual(vc, cc, Rng(9));

  auto all_flag = [](const ParamStore& s, bool want) {
    for (int i = 0; i < s.count(); ++i)
      if (s.info(i).trainable != want) return false;
    return true;
  };

  dual.set_phase(Phase::adapt);
  CHECK(all_flag(dual.fe.params, true));
  CHECK(all_flag(dual.classifier.params, false));

  dual.set_phase(Phase::head);
  CHECK(all_flag(dual.fe.params, false));
  CHECK(all_flag(dual.classifier.params, true));

  dual.set_phase(Phase::adapt);
  CHECK(all_flag(dual.fe.params, true));
  CHECK(all_flag(dual.classifier.params, false));

  auto logits = dual.classify(random_image(2, 16, 16, 5));
  CHECK(int(logits.size()) == 4);
  for (double v : logits) CHECK(std::isfinite(v));
}

TEST_CASE("dino head: forward shape and gradient check incl. input gradient") {
  DinoHeadConfig hc;
  hc.in = 16;
  hc.hidden = 24;
  hc.bottleneck = 8;
  hc.out = 20;
  DinoHead head(hc, Rng(21));

  Rng rng(22);
  std::vector<double> x(16);
  for (auto& v : x) v = rng.uniform(-1, 1);

  DinoHead::Cache c;
  auto out = head.fwd(x.data(), c);
  REQUIRE(int(out.size()) == 20);

  std::vector<double> probe(20);
  for (auto& v : probe) v = rng.uniform(-1, 1);
  GradBuf g(head.params);
  std::vector<double> dx;
  head.bwd(c, probe, g.base(), &dx);
  REQUIRE(int(dx.size()) == 16);

  auto loss_fn = [&]() {
    DinoHead::Cache c2;
    auto o = head.fwd(x.data(), c2);
    double s = 0.0;
    for (int k = 0; k < 20; ++k) s += probe[size_t(k)] * o[size_t(k)];
    return s;
  };
  Rng pick(23);
  CHECK(testutil::fd_worst_rel_error(head.params, g.base(), loss_fn, 100, pick) <= 1e-3);

  // input gradient via finite differences
  for (int trial = 0; trial < 10; ++trial) {
    const size_t i = size_t(pick.uniform_int(0, 16));
    const double keep = x[i], h = 1e-6;
    x[i] = keep + h;
    const double lp = loss_fn();
    x[i] = keep - h;
    const double lm = loss_fn();
    x[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(fd - dx[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(dx[i]), 1e-8}));
  }
}

TEST_CASE("mae: mask sizing, zero-ratio convention, stub and oracle losses") {
  ViTConfig vc = tiny_vit();  // 4x4 grid, 16 patches
  VisionTransformer fe(vc, Rng(31));
  MaeConfig mc;
  mc.dec_dim = 12;
  mc.dec_heads = 2;
  mc.dec_mlp_ratio = 2.0;

  SUBCASE("mask set size = round(ratio * patches)") {
    mc.mask_ratio = 0.75;
    MaeHead mae(vc, mc, Rng(32));
    Rng r(33);
    std::vector<int> mask;
    Tensor img = random_image(2, 16, 16, 34);
    (void)mae.forward(fe, img, r, &mask);
    CHECK(int(mask.size()) == 12);  // round(0.75*16)
  }

  SUBCASE("mask ratio 0 -> empty mask, loss 0") {
    mc.mask_ratio = 0.0;
    MaeHead mae(vc, mc, Rng(32));
    Rng r(33);
    std::vector<int> mask;
    const double loss = mae.forward(fe, random_image(2, 16, 16, 35), r, &mask);
    CHECK(mask.empty());
    CHECK(loss == 0.0);
  }

  SUBCASE("decoder that outputs exact targets gives zero loss") {
    Tensor preds({4, 6}), targets({4, 6});
    Rng r(36);
    for (size_t i = 0; i < preds.v.size(); ++i) preds.v[i] = targets.v[i] = r.uniform(-1, 1);
    CHECK(MaeHead::loss_from_predictions(preds, targets, {0, 2, 3}) == 0.0);
  }

  SUBCASE("zero image with unnormalized targets: loss = mean squared prediction") {
    mc.mask_ratio = 0.75;
    mc.norm_targets = false;
    MaeHead mae(vc, mc, Rng(37));
    Rng r(38);
    std::vector<int> mask;
    Tensor preds;
    Tensor img({2, 16, 16});  // zeros
    const double loss = mae.forward(fe, img, r, &mask, nullptr, nullptr, &preds);
    double expect = 0.0;
    for (int j : mask) {
      const double* p = preds.row(j);
      for (int k = 0; k < preds.dim(1); ++k) expect += p[k] * p[k];
    }
    expect /= double(mask.size()) * preds.dim(1);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("gradient check through encoder and decoder") {
    mc.mask_ratio = 0.5;
    MaeHead mae(vc, mc, Rng(39));
    Tensor img = random_image(2, 16, 16, 40);
    const uint64_t mask_seed = 41;

    auto loss_fn = [&]() {
      Rng r(mask_seed);
      return mae.forward(fe, img, r);
    };
    GradBuf gfe(fe.params), gh(mae.params);
    {
      Rng r(mask_seed);
      (void)mae.forward(fe, img, r, nullptr, gfe.base(), gh.base());
    }
    Rng pick(42);
    CHECK(testutil::fd_worst_rel_error(fe.params, gfe.base(), loss_fn, 80, pick) <= 1e-3);
    CHECK(testutil::fd_worst_rel_error(mae.params, gh.base(), loss_fn, 80, pick) <= 1e-3);
  }
}

TEST_CASE("adamw: quadratic convergence and frozen parameters untouched") {
  ParamStore s;
  Rng rng(1);
  int a = s.add("a", {4});
  int b = s.add("b", {4});
  s.init_normal(a, rng, 1.0);
  s.init_normal(b, rng, 1.0);
  s.info(b).trainable = false;
  const std::vector<double> frozen_before(s.values(b).begin(), s.values(b).end());

  AdamW opt(s, 0.0);
  for (int step = 0; step < 500; ++step) {
    GradBuf g(s);
    for (int i = 0; i < 4; ++i) {
      g.base()[s.info(a).off + size_t(i)] = 2.0 * s.data(a)[i];
      g.base()[s.info(b).off + size_t(i)] = 2.0 * s.data(b)[i];  // supplied but must be ignored
    }
    opt.step(s, g.base(), 0.05);
  }
  for (int i = 0; i < 4; ++i) CHECK(std::abs(s.data(a)[i]) < 1e-3);
  const std::vector<double> frozen_after(s.values(b).begin(), s.values(b).end());
  CHECK(frozen_before == frozen_after);
}

TEST_CASE("checkpoint: bit-identical round trip with contract header fields") {
  namespace fs = std::filesystem;
  ViTConfig vc = tiny_vit();
  VisionTransformer fe(vc, Rng(50));
  DinoHeadConfig hc;
  hc.in = vc.dim;
  DinoHead head(hc, Rng(51));

  const std::string path = (fs::temp_directory_path() / "coda_ckpt_test.ckpt").string();
  CheckpointWriter w;
  w.meta["phase"] = "pretrain";
  w.meta["step"] = 1234;
  w.meta["rng"] = Rng(7).state_hex();
  w.meta["arch"] = {{"dim", vc.dim}, {"depth", vc.depth}};
  w.add_store("fe", fe.params);
  w.add_store("dino_head", head.params);
  w.add_array("distill", "center", {0.5, -1.5, 2.0});
  w.write(path);

  Checkpoint ck = Checkpoint::read(path);
  CHECK(ck.header().at("phase") == "pretrain");
  CHECK(ck.header().at("step") == 1234);
  CHECK(ck.header().at("rng") == Rng(7).state_hex());
  CHECK(ck.header().at("arch").at("dim") == vc.dim);

  VisionTransformer fe2(vc, Rng(999));  // different init
  CHECK(fe2.params.value_hash() != fe.params.value_hash());
  ck.load_store("fe", fe2.params);
  CHECK(fe2.params.value_hash() == fe.params.value_hash());
  CHECK(fe2.params.flat() == fe.params.flat());

  auto center = ck.load_array("distill", "center");
  CHECK(center == std::vector<double>{0.5, -1.5, 2.0});

  // shape mismatch is rejected
  ViTConfig other = vc;
  other.dim = 8;
  other.heads = 2;
  VisionTransformer fe3(other, Rng(1));
  CHECK_THROWS_AS(ck.load_store("fe", fe3.params), ShapeMismatch);
  CHECK_THROWS_AS(Checkpoint::read("/nonexistent/x.ckpt"), MissingCheckpoint);
  fs::remove(path);
}

TEST_CASE("supervised baseline: logits and end-to-end gradient check") {
  ViTConfig vc = tiny_vit();
  SupervisedViT model(vc, 4, Rng(60));
  Tensor img = random_image(2, 16, 16, 61);

  SupervisedViT::Cache c;
  auto logits = model.logits(img, c);
  REQUIRE(int(logits.size()) == 4);

  Rng rng(62);
  std::vector<double> probe(4);
  for (auto& v : probe) v = rng.uniform(-1, 1);
  GradBuf gfe(model.fe.params), gh(model.head_params);
  model.backward(c, probe, gfe.base(), gh.base());

  auto loss_fn = [&]() {
    SupervisedViT::Cache c2;
    auto lg = model.logits(img, c2);
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += probe[size_t(k)] * lg[size_t(k)];
    return s;
  };
  Rng pick(63);
  CHECK(testutil::fd_worst_rel_error(model.fe.params, gfe.base(), loss_fn, 100, pick) <= 1e-3);
  CHECK(testutil::fd_worst_rel_error(model.head_params, gh.base(), loss_fn, 20, pick) <= 1e-3);
}
