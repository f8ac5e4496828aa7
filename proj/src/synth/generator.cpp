#include "coda/synth/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "coda/data/image_io.hpp"
#include "coda/errors.hpp"
#include "coda/kernels.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coda::synth {

void GeneratorConfig::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw ConfigValidationError(std::string("generator config: ") + msg);
  };
  need(sources >= 2, "sources must be >= 2");
  need(batches_per_source >= 2, "batches_per_source must be >= 2");
  need(plates_per_batch >= 1, "plates_per_batch must be >= 1");
  need(wells_per_plate >= 1, "wells_per_plate must be >= 1");
  need(sites_per_well >= 1, "sites_per_well must be >= 1");
  need(class_count >= 2, "class_count must be >= 2");
  need(height >= 8 && width >= 8, "image size must be >= 8");
  need(channels >= 1, "channels must be >= 1");
  need(gain_lo <= gain_hi && gain_lo > 0, "gain range invalid");
  need(offset_lo <= offset_hi, "offset range invalid");
  need(blur_lo <= blur_hi && blur_lo >= 0, "blur range invalid");
  need(noise_sigma >= 0, "noise_sigma must be >= 0");
  need(gamma_lo <= gamma_hi && gamma_lo > 0, "gamma range invalid");
  need(mix_lo <= mix_hi && mix_lo >= 0 && mix_hi < 1, "mixing range invalid");
}

int GeneratorConfig::treatment_count() const {
  const int per_plate = wells_per_plate * plates_per_batch;
  const int reps = std::max(1, std::min(treatments_per_class, per_plate / class_count));
  return class_count * reps;
}

NuisanceParams NuisanceParams::identity(int channels) {
  NuisanceParams p;
  p.source.gamma = 1.0;
  p.source.mixing = Tensor({channels, channels});
  for (int c = 0; c < channels; ++c) p.source.mixing.at(c, c) = 1.0;
  p.batch.gains.assign(size_t(channels), 1.0);
  p.batch.offsets.assign(size_t(channels), 0.0);
  p.batch.blur_sigma = 0.0;
  return p;
}

Generator::Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

int Generator::treatment_of_well(int plate_idx, int well_idx) const {
  return (plate_idx * cfg_.wells_per_plate + well_idx) % cfg_.treatment_count();
}

namespace {

struct ClassSpec {
  double theta, freq, phase;
  std::vector<double> grating_w;  // per channel
  struct Blob {
    double cx, cy, sigma, amp;
    std::vector<double> w;
  };
  std::vector<Blob> blobs;
};

ClassSpec class_spec(const GeneratorConfig& cfg, int k) {
  Rng rng = Rng(cfg.seed).child("class", uint64_t(k));
  ClassSpec s;
  const int K = cfg.class_count;
  s.theta = M_PI * (double(k) + 0.35 * rng.uniform()) / double(K);
  s.freq = 1.5 + 0.85 * double(k) + 0.3 * rng.uniform();
  s.phase = 2.0 * M_PI * rng.uniform();
  s.grating_w.resize(size_t(cfg.channels));
  for (auto& w : s.grating_w) w = 0.35 + 0.65 * rng.uniform();
  const int nb = 2 + (k % 3);
  for (int b = 0; b < nb; ++b) {
    ClassSpec::Blob blob;
    blob.cx = 0.14 + 0.72 * rng.uniform();
    blob.cy = 0.14 + 0.72 * rng.uniform();
    blob.sigma = 0.05 + 0.05 * rng.uniform();
    blob.amp = 0.32 + 0.14 * rng.uniform();
    blob.w.resize(size_t(cfg.channels));
    for (auto& w : blob.w) w = 0.25 + 0.75 * rng.uniform();
    s.blobs.push_back(std::move(blob));
  }
  return s;
}

Tensor render_from_spec(const GeneratorConfig& cfg, const ClassSpec& s, double dphase,
                        const std::vector<double>& blob_dx, const std::vector<double>& blob_dy,
                        double amp_scale) {
  const int C = cfg.channels, H = cfg.height, W = cfg.width;
  Tensor img({C, H, W});
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double xn = double(x) / double(W), yn = double(y) / double(H);
        double v = 0.40;
        v += 0.12 * s.grating_w[size_t(c)] * amp_scale *
             std::sin(2.0 * M_PI * s.freq * (xn * ct + yn * st) + s.phase + dphase);
        for (size_t b = 0; b < s.blobs.size(); ++b) {
          const auto& blob = s.blobs[b];
          const double dx = xn - (blob.cx + blob_dx[b]);
          const double dy = yn - (blob.cy + blob_dy[b]);
          v += blob.amp * amp_scale * blob.w[size_t(c)] *
               std::exp(-(dx * dx + dy * dy) / (2.0 * blob.sigma * blob.sigma));
        }
        img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace

Tensor Generator::class_template(int k) const {
  if (k < 0 || k >= cfg_.class_count) throw Error("class index out of range");
  ClassSpec s = class_spec(cfg_, k);
  std::vector<double> zx(s.blobs.size(), 0.0), zy(s.blobs.size(), 0.0);
  return render_from_spec(cfg_, s, 0.0, zx, zy, 1.0);
}

Tensor Generator::render_class_signal(int k, Rng& rng, bool jitter) const {
  if (k < 0 || k >= cfg_.class_count) throw Error("class index out of range");
  ClassSpec s = class_spec(cfg_, k);
  double dphase = 0.0, amp_scale = 1.0;
  std::vector<double> dx(s.blobs.size(), 0.0), dy(s.blobs.size(), 0.0);
  if (jitter) {
    dphase = 0.55 * rng.normal();
    for (size_t b = 0; b < s.blobs.size(); ++b) {
      dx[b] = 0.02 * rng.normal();
      dy[b] = 0.02 * rng.normal();
    }
    amp_scale = std::clamp(1.0 + 0.07 * rng.normal(), 0.7, 1.3);
  }
  return render_from_spec(cfg_, s, dphase, dx, dy, amp_scale);
}

Tensor Generator::apply_nuisance(const Tensor& clean, const NuisanceParams& p, Rng& noise_rng) const {
  const int C = clean.dim(0), H = clean.dim(1), W = clean.dim(2);
  if (int(p.batch.gains.size()) != C || int(p.batch.offsets.size()) != C ||
      p.source.mixing.dim(0) != C || p.source.mixing.dim(1) != C)
    throw ShapeMismatch("nuisance params do not match channel count");

  // channel mixing
  Tensor mixed({C, H, W});
  bool mix_is_identity = true;
  for (int a = 0; a < C && mix_is_identity; ++a)
    for (int b = 0; b < C; ++b)
      if (p.source.mixing.at(a, b) != (a == b ? 1.0 : 0.0)) {
        mix_is_identity = false;
        break;
      }
  if (mix_is_identity) {
    mixed.v = clean.v;
  } else {
    const int64_t plane = int64_t(H) * W;
    for (int a = 0; a < C; ++a) {
      double* dst = mixed.data() + a * plane;
      for (int b = 0; b < C; ++b) {
        const double w = p.source.mixing.at(a, b);
        if (w == 0.0) continue;
        const double* src = clean.data() + b * plane;
        for (int64_t i = 0; i < plane; ++i) dst[i] += w * src[i];
      }
    }
  }

  // per-batch gain/offset
  const int64_t plane = int64_t(H) * W;
  for (int c = 0; c < C; ++c) {
    const double g = p.batch.gains[size_t(c)], o = p.batch.offsets[size_t(c)];
    double* dst = mixed.data() + c * plane;
    for (int64_t i = 0; i < plane; ++i) dst[i] = dst[i] * g + o;
  }

  Tensor blurred;
  kern::gaussian_blur(mixed, blurred, p.batch.blur_sigma);

  // source gamma (negative inputs clamp to 0 before the power)
  if (p.source.gamma != 1.0) {
    for (auto& v : blurred.v) v = std::pow(std::max(v, 0.0), p.source.gamma);
  }

  if (cfg_.noise_sigma > 0.0) {
    for (auto& v : blurred.v) v += cfg_.noise_sigma * noise_rng.normal();
  }

  for (auto& v : blurred.v) v = std::clamp(v, 0.0, 1.0);
  return blurred;
}

SourceParams Generator::source_params(int source_idx) const {
  const int S = cfg_.sources, C = cfg_.channels;
  Rng rng = Rng(cfg_.seed).child("source", uint64_t(source_idx));
  SourceParams p;
  // stratify gamma / mixing strength across sources so every pair of
  // sources is materially shifted
  const double tg = (double(source_idx) + 0.25 + 0.5 * rng.uniform()) / double(S);
  p.gamma = std::exp(std::log(cfg_.gamma_lo) + tg * (std::log(cfg_.gamma_hi) - std::log(cfg_.gamma_lo)));
  const int mix_stratum = S - 1 - source_idx;
  const double tm = (double(mix_stratum) + 0.3 + 0.4 * rng.uniform()) / double(S);
  const double eps = cfg_.mix_lo + tm * (cfg_.mix_hi - cfg_.mix_lo);
  p.mixing = Tensor({C, C});
  for (int a = 0; a < C; ++a) {
    if (C == 1) {
      p.mixing.at(0, 0) = 1.0;
      break;
    }
    std::vector<double> w(size_t(C), 0.0);
    double sum = 0.0;
    for (int b = 0; b < C; ++b) {
      if (b == a) continue;
      w[size_t(b)] = 0.2 + rng.uniform();
      sum += w[size_t(b)];
    }
    for (int b = 0; b < C; ++b)
      p.mixing.at(a, b) = (b == a) ? (1.0 - eps) : eps * w[size_t(b)] / sum;
  }
  return p;
}

BatchParams Generator::batch_params(int source_idx, int batch_idx) const {
  const int B = cfg_.batches_per_source, C = cfg_.channels;
  Rng rng = Rng(cfg_.seed).child("batch", uint64_t(source_idx), uint64_t(batch_idx));
  BatchParams p;
  p.gains.resize(size_t(C));
  p.offsets.resize(size_t(C));
  // per-channel strata rotate with the channel so batches separate in
  // every channel, not just overall brightness
  for (int c = 0; c < C; ++c) {
    const int sg = (batch_idx + c) % B;
    p.gains[size_t(c)] = cfg_.gain_lo + ((sg + 0.15 + 0.7 * rng.uniform()) / B) * (cfg_.gain_hi - cfg_.gain_lo);
    const int so = (B - 1 - batch_idx + c) % B;
    p.offsets[size_t(c)] =
        cfg_.offset_lo + ((so + 0.15 + 0.7 * rng.uniform()) / B) * (cfg_.offset_hi - cfg_.offset_lo);
  }
  const int sb = (batch_idx * 2 + source_idx) % B;
  p.blur_sigma = cfg_.blur_lo + ((sb + 0.15 + 0.7 * rng.uniform()) / B) * (cfg_.blur_hi - cfg_.blur_lo);
  return p;
}

namespace {

std::string rec_id(int si, int bi, int pi, int wi, int site) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "s%d_b%d_p%d_w%02d_i%d", si, bi, pi, wi, site);
  return buf;
}

json source_to_json(const SourceParams& p) {
  json m = json::array();
  for (int a = 0; a < p.mixing.dim(0); ++a) {
    json row = json::array();
    for (int b = 0; b < p.mixing.dim(1); ++b) row.push_back(p.mixing.at(a, b));
    m.push_back(row);
  }
  return json{{"gamma", p.gamma}, {"mixing", m}};
}

json batch_to_json(const BatchParams& p) {
  return json{{"gains", p.gains}, {"offsets", p.offsets}, {"blur_sigma", p.blur_sigma}};
}

}  // namespace

GeneratedDataset Generator::generate(const std::string& out_dir) const {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IOFailure("cannot create output directory " + out_dir + ": " + ec.message());

  const auto& c = cfg_;
  const int T = c.treatment_count();

  struct Row {
    std::string id, source, batch, plate, well, paths, treatment, moa;
    int site, klass, si, bi, pi, wi;
  };
  std::vector<Row> rows;
  for (int si = 0; si < c.sources; ++si) {
    const std::string sdir = (fs::path(out_dir) / "images" / ("s" + std::to_string(si))).string();
    fs::create_directories(sdir, ec);
    if (ec) throw IOFailure("cannot create " + sdir);
    for (int bi = 0; bi < c.batches_per_source; ++bi)
      for (int pi = 0; pi < c.plates_per_batch; ++pi)
        for (int wi = 0; wi < c.wells_per_plate; ++wi)
          for (int site = 0; site < c.sites_per_well; ++site) {
            Row r;
            r.si = si; r.bi = bi; r.pi = pi; r.wi = wi; r.site = site;
            r.id = rec_id(si, bi, pi, wi, site);
            r.source = "s" + std::to_string(si);
            r.batch = r.source + "_b" + std::to_string(bi);
            r.plate = r.batch + "_p" + std::to_string(pi);
            char wb[8];
            std::snprintf(wb, sizeof wb, "w%02d", wi);
            r.well = wb;
            const int ti = treatment_of_well(pi, wi);
            r.klass = class_of_treatment(ti);
            char tb[16];
            std::snprintf(tb, sizeof tb, "t%02d", ti);
            r.treatment = tb;
            char mb[16];
            std::snprintf(mb, sizeof mb, "moa%02d", r.klass);
            r.moa = mb;
            std::string paths;
            for (int ch = 0; ch < c.channels; ++ch) {
              if (ch) paths += ';';
              paths += "images/" + r.source + "/" + r.id + "_c" + std::to_string(ch) + ".png";
            }
            r.paths = paths;
            rows.push_back(std::move(r));
          }
  }

  // every (source, treatment) pair must span >= 2 batches
  {
    std::map<std::pair<int, int>, std::set<int>> cover;  // (source, treatment) -> batches
    for (const auto& r : rows)
      cover[{r.si, treatment_of_well(r.pi, r.wi)}].insert(r.bi);
    for (const auto& [key, batches] : cover)
      if (int(batches.size()) < 2)
        throw Error("treatment t" + std::to_string(key.second) + " does not span 2 batches in source s" +
                    std::to_string(key.first) + "; increase plates or wells");
  }

  // render + corrupt + write, one independent rng stream per record id
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
  for (int64_t i = 0; i < int64_t(rows.size()); ++i) {
    const Row& r = rows[size_t(i)];
    Rng render_rng = Rng(c.seed).child("render", Rng::fnv1a(r.id));
    Tensor clean = render_class_signal(r.klass, render_rng);
    NuisanceParams np{source_params(r.si), batch_params(r.si, r.bi)};
    Rng noise_rng = Rng(c.seed).child("noise", Rng::fnv1a(r.id));
    Tensor corrupted = apply_nuisance(clean, np, noise_rng);
    const int64_t plane = int64_t(c.height) * c.width;
    std::vector<uint8_t> pix(static_cast<size_t>(plane));
    for (int ch = 0; ch < c.channels; ++ch) {
      const double* src = corrupted.data() + ch * plane;
      for (int64_t px = 0; px < plane; ++px)
        pix[size_t(px)] = uint8_t(std::lround(std::clamp(src[px], 0.0, 1.0) * 255.0));
      const std::string path =
          (fs::path(out_dir) / "images" / r.source / (r.id + "_c" + std::to_string(ch) + ".png")).string();
      img::write_png_gray8(path, pix, c.width, c.height);
    }
  }

  // manifest
  data::DatasetIndex index;
  index.base_dir = out_dir;
  for (const auto& r : rows) {
    data::ImageRecord rec;
    rec.id = r.id;
    rec.source = r.source;
    rec.batch = r.batch;
    rec.plate = r.plate;
    rec.well = r.well;
    rec.site = r.site;
    {
      std::string cur;
      std::istringstream ss(r.paths);
      while (std::getline(ss, cur, ';')) rec.channel_paths.push_back(cur);
    }
    rec.treatment = r.treatment;
    rec.moa = r.moa;
    index.records.push_back(std::move(rec));
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  data::save_manifest(index, manifest_path);

  // sidecar
  json side;
  side["generator"] = {{"sources", c.sources},
                       {"batches_per_source", c.batches_per_source},
                       {"plates_per_batch", c.plates_per_batch},
                       {"wells_per_plate", c.wells_per_plate},
                       {"sites_per_well", c.sites_per_well},
                       {"class_count", c.class_count},
                       {"height", c.height},
                       {"width", c.width},
                       {"channels", c.channels},
                       {"treatments_per_class", c.treatments_per_class},
                       {"gain_lo", c.gain_lo}, {"gain_hi", c.gain_hi},
                       {"offset_lo", c.offset_lo}, {"offset_hi", c.offset_hi},
                       {"blur_lo", c.blur_lo}, {"blur_hi", c.blur_hi},
                       {"noise_sigma", c.noise_sigma},
                       {"gamma_lo", c.gamma_lo}, {"gamma_hi", c.gamma_hi},
                       {"mix_lo", c.mix_lo}, {"mix_hi", c.mix_hi},
                       {"seed", c.seed}};
  json jsources = json::object(), jbatches = json::object(), jrecords = json::object(),
       jtreat = json::object();
  for (int si = 0; si < c.sources; ++si)
    jsources["s" + std::to_string(si)] = source_to_json(source_params(si));
  for (int si = 0; si < c.sources; ++si)
    for (int bi = 0; bi < c.batches_per_source; ++bi)
      jbatches["s" + std::to_string(si) + "_b" + std::to_string(bi)] =
          batch_to_json(batch_params(si, bi));
  for (const auto& r : rows) jrecords[r.id] = r.klass;
  for (int ti = 0; ti < T; ++ti) {
    char tb[16];
    std::snprintf(tb, sizeof tb, "t%02d", ti);
    jtreat[tb] = ti % c.class_count;
  }
  side["sources"] = jsources;
  side["batches"] = jbatches;
  side["records"] = jrecords;
  side["treatment_class"] = jtreat;

  const std::string sidecar_path = (fs::path(out_dir) / "sidecar.json").string();
  std::ofstream sf(sidecar_path, std::ios::binary);
  if (!sf) throw IOFailure("cannot write sidecar: " + sidecar_path);
  sf << side.dump(1) << "\n";
  if (!sf) throw IOFailure("sidecar write failed: " + sidecar_path);

  return GeneratedDataset{manifest_path, sidecar_path, int(rows.size())};
}

Sidecar Sidecar::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot open sidecar: " + path);
  json j;
  f >> j;
  Sidecar s;
  const json& g = j.at("generator");
  s.cfg.sources = g.at("sources").get<int>();
  s.cfg.batches_per_source = g.at("batches_per_source").get<int>();
  s.cfg.plates_per_batch = g.at("plates_per_batch").get<int>();
  s.cfg.wells_per_plate = g.at("wells_per_plate").get<int>();
  s.cfg.sites_per_well = g.at("sites_per_well").get<int>();
  s.cfg.class_count = g.at("class_count").get<int>();
  s.cfg.height = g.at("height").get<int>();
  s.cfg.width = g.at("width").get<int>();
  s.cfg.channels = g.at("channels").get<int>();
  s.cfg.treatments_per_class = g.at("treatments_per_class").get<int>();
  s.cfg.gain_lo = g.at("gain_lo").get<double>();
  s.cfg.gain_hi = g.at("gain_hi").get<double>();
  s.cfg.offset_lo = g.at("offset_lo").get<double>();
  s.cfg.offset_hi = g.at("offset_hi").get<double>();
  s.cfg.blur_lo = g.at("blur_lo").get<double>();
  s.cfg.blur_hi = g.at("blur_hi").get<double>();
  s.cfg.noise_sigma = g.at("noise_sigma").get<double>();
  s.cfg.gamma_lo = g.at("gamma_lo").get<double>();
  s.cfg.gamma_hi = g.at("gamma_hi").get<double>();
  s.cfg.mix_lo = g.at("mix_lo").get<double>();
  s.cfg.mix_hi = g.at("mix_hi").get<double>();
  s.cfg.seed = g.at("seed").get<uint64_t>();

  for (auto& [k, v] : j.at("sources").items()) {
    SourceParams p;
    p.gamma = v.at("gamma").get<double>();
    auto m = v.at("mixing");
    const int C = int(m.size());
    p.mixing = Tensor({C, C});
    for (int a = 0; a < C; ++a)
      for (int b = 0; b < C; ++b) p.mixing.at(a, b) = m.at(size_t(a)).at(size_t(b)).get<double>();
    s.sources[k] = std::move(p);
  }
  for (auto& [k, v] : j.at("batches").items()) {
    BatchParams p;
    p.gains = v.at("gains").get<std::vector<double>>();
    p.offsets = v.at("offsets").get<std::vector<double>>();
    p.blur_sigma = v.at("blur_sigma").get<double>();
    s.batches[k] = std::move(p);
  }
  for (auto& [k, v] : j.at("records").items()) s.record_class[k] = v.get<int>();
  for (auto& [k, v] : j.at("treatment_class").items()) s.treatment_class[k] = v.get<int>();
  return s;
}

}  // namespace coda::synth
