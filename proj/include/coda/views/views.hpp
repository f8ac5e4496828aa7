#pragma once

#include <map>
#include <string>
#include <vector>

#include "coda/data/manifest.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

namespace coda::views {

struct ViewConfig {
  int global_views = 2;
  int local_views = 6;
  double global_scale_lo = 0.5, global_scale_hi = 1.0;   // crop area fraction
  double local_scale_lo = 0.15, local_scale_hi = 0.45;
  int global_size = 64;
  int local_size = 32;

  bool flip = true;
  double intensity_jitter = 0.2;   // per-channel multiplicative, 0 disables
  double channel_dropout_p = 0.1;
  double blur_p = 0.5;             // applies to the first global view

  void validate() const;
  ViewConfig with_augmentations_off() const;
};

struct ViewSet {
  std::vector<Tensor> global_views;  // (C, Hg, Wg)
  std::vector<Tensor> local_views;   // (C, Hl, Wl)
  std::vector<std::string> provenance;

  int total_views() const { return int(global_views.size() + local_views.size()); }
  // globals first, then locals
  const Tensor& view(int i) const {
    return i < int(global_views.size()) ? global_views[size_t(i)]
                                        : local_views[size_t(i) - global_views.size()];
  }
};

ViewSet build_views(const Tensor& image, const ViewConfig& cfg, Rng& rng,
                    const std::string& record_id);

// Same-treatment / different-batch pair sampling. Built from metadata only
// (treatment + batch); label fields are never consulted.
struct PairIndex {
  // treatment -> batch -> record ordinals (into the record list it was built from)
  std::map<std::string, std::map<std::string, std::vector<int>>> by_treatment;
  std::vector<std::string> eligible;  // treatments spanning >= 2 batches

  template <typename RecordRange>
  static PairIndex build(const RecordRange& records) {
    PairIndex idx;
    int i = 0;
    for (const auto& r : records) {
      idx.by_treatment[r.treatment][r.batch].push_back(i);
      ++i;
    }
    for (const auto& [treat, batches] : idx.by_treatment)
      if (batches.size() >= 2) idx.eligible.push_back(treat);
    return idx;
  }

  bool has_pairs() const { return !eligible.empty(); }
};

// (ordinal_a, ordinal_b): same treatment, distinct batches; treatment uniform
// among eligible, then batches uniform without replacement, then records
// uniform within batch.
std::pair<int, int> sample_cross_batch_pair(const PairIndex& index, Rng& rng);

// 2 global + 6 local views for the default g=1,l=3 per pair member, ordered
// [global_a, global_b, locals_a..., locals_b...]. Crops drawn independently
// per image.
ViewSet build_pair_views(const Tensor& image_a, const Tensor& image_b, const ViewConfig& cfg,
                         Rng& rng, const std::string& id_a, const std::string& id_b);

}  // namespace coda::views
