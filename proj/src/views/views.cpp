#include "coda/views/views.hpp"

#include <algorithm>
#include <cmath>

#include "coda/errors.hpp"
#include "coda/kernels.hpp"

namespace coda::views {

void ViewConfig::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw ConfigValidationError(std::string("view config: ") + msg);
  };
  need(global_views >= 1, "global_views must be >= 1");
  need(local_views >= 0, "local_views must be >= 0");
  need(local_size < global_size, "local size must be smaller than global size");
  need(global_scale_lo > 0 && global_scale_lo <= global_scale_hi && global_scale_hi <= 1.0,
       "global scale range must lie in (0,1]");
  need(local_scale_lo > 0 && local_scale_lo <= local_scale_hi && local_scale_hi <= 1.0,
       "local scale range must lie in (0,1]");
}

ViewConfig ViewConfig::with_augmentations_off() const {
  ViewConfig c = *this;
  c.flip = false;
  c.intensity_jitter = 0.0;
  c.channel_dropout_p = 0.0;
  c.blur_p = 0.0;
  return c;
}

namespace {

Tensor crop_resize(const Tensor& img, int top, int left, int side, int out_size) {
  const int C = img.dim(0);
  Tensor crop({C, side, side});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) crop.at(c, y, x) = img.at(c, top + y, left + x);
  Tensor out;
  kern::resize_bilinear(crop, out, out_size, out_size);
  return out;
}

void flip_h(Tensor& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, W - 1 - x));
}

void flip_v(Tensor& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int x = 0; x < W; ++x) std::swap(img.at(c, y, x), img.at(c, H - 1 - y, x));
}

// One view. The rng draw order is fixed; every toggle consumes its draws
// only when enabled, so a config is a pure function of (image, rng state).
Tensor make_view(const Tensor& img, const ViewConfig& cfg, bool global, int view_index, Rng& rng) {
  const int H = img.dim(1), W = img.dim(2);
  const int C = img.dim(0);
  const double lo = global ? cfg.global_scale_lo : cfg.local_scale_lo;
  const double hi = global ? cfg.global_scale_hi : cfg.local_scale_hi;
  const int out_size = global ? cfg.global_size : cfg.local_size;

  const double scale = rng.uniform(lo, hi);
  int side = int(std::lround(std::sqrt(scale) * double(std::min(H, W))));
  side = std::clamp(side, 1, std::min(H, W));
  const int top = int(rng.uniform_int(0, H - side + 1));
  const int left = int(rng.uniform_int(0, W - side + 1));
  Tensor v = crop_resize(img, top, left, side, out_size);

  if (cfg.flip) {
    if (rng.uniform() < 0.5) flip_h(v);
    if (rng.uniform() < 0.5) flip_v(v);
  }
  if (cfg.intensity_jitter > 0.0) {
    for (int c = 0; c < C; ++c) {
      const double g = 1.0 + cfg.intensity_jitter * rng.uniform(-1.0, 1.0);
      double* p = v.data() + size_t(c) * size_t(out_size) * size_t(out_size);
      for (int64_t i = 0; i < int64_t(out_size) * out_size; ++i)
        p[i] = std::clamp(p[i] * g, 0.0, 1.0);
    }
  }
  if (cfg.channel_dropout_p > 0.0 && C > 1) {
    if (rng.uniform() < cfg.channel_dropout_p) {
      const int c = int(rng.uniform_int(0, C));
      double* p = v.data() + size_t(c) * size_t(out_size) * size_t(out_size);
      std::fill(p, p + int64_t(out_size) * out_size, 0.0);
    }
  }
  if (cfg.blur_p > 0.0 && global && view_index == 0) {
    if (rng.uniform() < cfg.blur_p) {
      const double sigma = rng.uniform(0.3, 1.0);
      Tensor blurred;
      kern::gaussian_blur(v, blurred, sigma);
      v = std::move(blurred);
    }
  }
  return v;
}

}  // namespace

ViewSet build_views(const Tensor& image, const ViewConfig& cfg, Rng& rng,
                    const std::string& record_id) {
  cfg.validate();
  if (std::min(image.dim(1), image.dim(2)) < cfg.global_size)
    throw ImageTooSmall("image " + record_id + " is " + std::to_string(image.dim(2)) + "x" +
                        std::to_string(image.dim(1)) + ", smaller than the global view size " +
                        std::to_string(cfg.global_size));
  ViewSet vs;
  vs.provenance.push_back(record_id);
  for (int i = 0; i < cfg.global_views; ++i)
    vs.global_views.push_back(make_view(image, cfg, true, i, rng));
  for (int i = 0; i < cfg.local_views; ++i)
    vs.local_views.push_back(make_view(image, cfg, false, i, rng));
  return vs;
}

std::pair<int, int> sample_cross_batch_pair(const PairIndex& index, Rng& rng) {
  if (index.eligible.empty())
    throw NoEligibleTreatment("no treatment spans two or more batches");
  const std::string& treat = index.eligible[size_t(rng.uniform_int(0, int64_t(index.eligible.size())))];
  const auto& batches = index.by_treatment.at(treat);
  std::vector<const std::vector<int>*> lists;
  lists.reserve(batches.size());
  for (const auto& [batch, recs] : batches) lists.push_back(&recs);
  const int nb = int(lists.size());
  const int ba = int(rng.uniform_int(0, nb));
  int bb = int(rng.uniform_int(0, nb - 1));
  if (bb >= ba) ++bb;  // without replacement
  const auto& la = *lists[size_t(ba)];
  const auto& lb = *lists[size_t(bb)];
  const int ra = la[size_t(rng.uniform_int(0, int64_t(la.size())))];
  const int rb = lb[size_t(rng.uniform_int(0, int64_t(lb.size())))];
  return {ra, rb};
}

ViewSet build_pair_views(const Tensor& image_a, const Tensor& image_b, const ViewConfig& cfg,
                         Rng& rng, const std::string& id_a, const std::string& id_b) {
  ViewSet a = build_views(image_a, cfg, rng, id_a);
  ViewSet b = build_views(image_b, cfg, rng, id_b);
  ViewSet out;
  out.provenance = {id_a, id_b};
  for (auto& v : a.global_views) out.global_views.push_back(std::move(v));
  for (auto& v : b.global_views) out.global_views.push_back(std::move(v));
  for (auto& v : a.local_views) out.local_views.push_back(std::move(v));
  for (auto& v : b.local_views) out.local_views.push_back(std::move(v));
  return out;
}

}  // namespace coda::views
