#pragma once

#include <string>
#include <vector>

#include "coda/data/manifest.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

namespace coda::synth {

struct GeneratorConfig {
  int sources = 4;
  int batches_per_source = 4;
  int plates_per_batch = 1;
  int wells_per_plate = 16;
  int sites_per_well = 4;
  int class_count = 8;
  int height = 64, width = 64;
  int channels = 3;
  int treatments_per_class = 2;  // capped so every plate covers all treatments

  // nuisance strengths (per-batch photometric/optical, per-source tone/mixing)
  double gain_lo = 0.70, gain_hi = 1.40;
  double offset_lo = -0.15, offset_hi = 0.15;
  double blur_lo = 0.0, blur_hi = 0.9;
  double noise_sigma = 0.03;
  double gamma_lo = 0.42, gamma_hi = 2.20;
  double mix_lo = 0.05, mix_hi = 0.55;

  uint64_t seed = 1;

  void validate() const;  // counts >= minima, ranges ordered
  int treatment_count() const;
};

struct SourceParams {
  double gamma = 1.0;
  Tensor mixing;  // (C,C), rows sum to 1, near identity
};

struct BatchParams {
  std::vector<double> gains;    // per channel, > 0
  std::vector<double> offsets;  // per channel
  double blur_sigma = 0.0;
};

struct NuisanceParams {
  SourceParams source;
  BatchParams batch;
  static NuisanceParams identity(int channels);
};

struct GeneratedDataset {
  std::string manifest_path;
  std::string sidecar_path;
  int record_count = 0;
};

class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);

  const GeneratorConfig& config() const { return cfg_; }

  // Clean, jitter-free per-class reference image (the oracle template).
  Tensor class_template(int k) const;

  // Clean image with per-sample jitter drawn from `rng`.
  Tensor render_class_signal(int k, Rng& rng, bool jitter = true) const;

  // mixing -> gain/offset -> blur -> gamma -> noise -> clip, in that order.
  Tensor apply_nuisance(const Tensor& clean, const NuisanceParams& params, Rng& noise_rng) const;

  SourceParams source_params(int source_idx) const;
  BatchParams batch_params(int source_idx, int batch_idx) const;

  int class_of_treatment(int treatment_idx) const { return treatment_idx % cfg_.class_count; }
  int treatment_of_well(int plate_idx, int well_idx) const;

  // Writes per-channel PNGs, the manifest, and the ground-truth sidecar.
  GeneratedDataset generate(const std::string& out_dir) const;

 private:
  GeneratorConfig cfg_;
};

// Ground-truth sidecar access (JSON; see generate()).
struct Sidecar {
  GeneratorConfig cfg;
  std::map<std::string, SourceParams> sources;
  std::map<std::string, BatchParams> batches;
  std::map<std::string, int> record_class;
  std::map<std::string, int> treatment_class;

  static Sidecar load(const std::string& path);
};

}  // namespace coda::synth
