#include "coda/data/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "coda/csv.hpp"
#include "coda/data/image_io.hpp"
#include "coda/errors.hpp"
#include "coda/kernels.hpp"

namespace fs = std::filesystem;

namespace coda::data {

Scope scope_from_string(const std::string& s) {
  if (s == "source") return Scope::source;
  if (s == "batch") return Scope::batch;
  if (s == "plate") return Scope::plate;
  throw ConfigValidationError("unknown scope '" + s + "' (expected source|batch|plate)");
}

std::string scope_to_string(Scope s) {
  switch (s) {
    case Scope::source: return "source";
    case Scope::batch: return "batch";
    case Scope::plate: return "plate";
  }
  return "?";
}

void DatasetIndex::rebuild_hierarchy() {
  hierarchy.clear();
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    hierarchy[r.source][r.batch][r.plate].push_back(int(i));
  }
}

std::vector<std::string> DatasetIndex::ids_at_scope(Scope scope) const {
  std::set<std::string> out;
  for (const auto& r : records) {
    switch (scope) {
      case Scope::source: out.insert(r.source); break;
      case Scope::batch: out.insert(r.batch); break;
      case Scope::plate: out.insert(r.plate); break;
    }
  }
  return {out.begin(), out.end()};
}

bool DatasetIndex::has_scope_id(Scope scope, const std::string& id) const {
  for (const auto& r : records) {
    const std::string& v = scope == Scope::source ? r.source : scope == Scope::batch ? r.batch : r.plate;
    if (v == id) return true;
  }
  return false;
}

static std::vector<std::string> split_paths(const std::string& joined) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(joined);
  while (std::getline(ss, cur, ';'))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

static const char* kColumns[] = {"id", "source", "batch", "plate", "well",
                                 "site", "channel_paths", "treatment", "moa"};

DatasetIndex load_manifest(const std::string& path, const ManifestSchema& schema) {
  csv::Table t = csv::read_file(path);

  std::map<std::string, int> col;
  for (const char* name : kColumns) {
    int c = t.column(name);
    if (c < 0) throw MissingColumn(std::string("manifest missing column '") + name + "' in " + path);
    col[name] = c;
  }

  DatasetIndex index;
  index.base_dir = fs::path(path).parent_path().string();
  if (index.base_dir.empty()) index.base_dir = ".";

  std::set<std::string> seen_keys;
  std::map<std::string, std::string> treatment_moa;  // consistency check

  for (size_t row = 0; row < t.rows.size(); ++row) {
    const auto& r = t.rows[row];
    if (int(r.size()) < int(t.header.size()))
      throw Error("manifest row " + std::to_string(row + 2) + " has too few fields");
    ImageRecord rec;
    rec.id = r[size_t(col["id"])];
    rec.source = r[size_t(col["source"])];
    rec.batch = r[size_t(col["batch"])];
    rec.plate = r[size_t(col["plate"])];
    rec.well = r[size_t(col["well"])];
    try {
      rec.site = std::stoi(r[size_t(col["site"])]);
    } catch (...) {
      throw Error("manifest row " + std::to_string(row + 2) + ": bad site value");
    }
    if (rec.site < 0) throw Error("manifest row " + std::to_string(row + 2) + ": negative site");
    rec.channel_paths = split_paths(r[size_t(col["channel_paths"])]);
    if (int(rec.channel_paths.size()) != schema.channel_count)
      throw ChannelShapeMismatch("record " + rec.id + ": expected " + std::to_string(schema.channel_count) +
                                 " channel paths, got " + std::to_string(rec.channel_paths.size()));
    rec.treatment = r[size_t(col["treatment"])];
    rec.moa = r[size_t(col["moa"])];

    const std::string key = rec.source + "|" + rec.batch + "|" + rec.plate + "|" + rec.well + "|" +
                            std::to_string(rec.site);
    if (!seen_keys.insert(key).second)
      throw DuplicateRecordKey("duplicate (source,batch,plate,well,site) key: " + key);

    if (!rec.moa.empty()) {
      auto it = treatment_moa.find(rec.treatment);
      if (it == treatment_moa.end())
        treatment_moa[rec.treatment] = rec.moa;
      else if (it->second != rec.moa)
        throw Error("treatment '" + rec.treatment + "' maps to conflicting moa labels '" + it->second +
                    "' and '" + rec.moa + "'");
    }
    index.records.push_back(std::move(rec));
  }

  // class indices follow the sorted label vocabulary (supplied or observed)
  std::vector<std::string> vocab;
  if (schema.label_vocab) {
    vocab = *schema.label_vocab;
    std::sort(vocab.begin(), vocab.end());
    for (const auto& [treat, moa] : treatment_moa)
      if (!std::binary_search(vocab.begin(), vocab.end(), moa))
        throw UnknownLabel("moa label '" + moa + "' (treatment '" + treat + "') not in supplied vocabulary");
  } else {
    std::set<std::string> moas;
    for (const auto& [treat, moa] : treatment_moa) moas.insert(moa);
    vocab.assign(moas.begin(), moas.end());
  }
  std::map<std::string, int> moa_to_class;
  for (size_t i = 0; i < vocab.size(); ++i) moa_to_class[vocab[i]] = int(i);

  index.class_count = int(vocab.size());
  for (const auto& [treat, moa] : treatment_moa) index.treatment_to_label[treat] = moa_to_class.at(moa);
  for (auto& rec : index.records)
    if (!rec.moa.empty()) rec.moa_label = moa_to_class.at(rec.moa);

  index.rebuild_hierarchy();
  return index;
}

void save_manifest(const DatasetIndex& index, const std::string& path) {
  csv::Table t;
  t.header.assign(std::begin(kColumns), std::end(kColumns));
  for (const auto& r : index.records) {
    std::string joined;
    for (size_t i = 0; i < r.channel_paths.size(); ++i) {
      if (i) joined += ';';
      joined += r.channel_paths[i];
    }
    t.rows.push_back({r.id, r.source, r.batch, r.plate, r.well, std::to_string(r.site), joined,
                      r.treatment, r.moa});
  }
  csv::write_file(path, t);
}

std::pair<DatasetIndex, DatasetIndex> split_by_scope(const DatasetIndex& index, Scope scope,
                                                     const std::vector<std::string>& held_out) {
  std::set<std::string> ids(held_out.begin(), held_out.end());
  for (const auto& id : ids)
    if (!index.has_scope_id(scope, id))
      throw UnknownScopeId("no " + scope_to_string(scope) + " named '" + id + "' in dataset");

  DatasetIndex held, rest;
  held.class_count = rest.class_count = index.class_count;
  held.treatment_to_label = rest.treatment_to_label = index.treatment_to_label;
  held.base_dir = rest.base_dir = index.base_dir;
  for (const auto& r : index.records) {
    const std::string& v = scope == Scope::source ? r.source : scope == Scope::batch ? r.batch : r.plate;
    (ids.count(v) ? held : rest).records.push_back(r);
  }
  held.rebuild_hierarchy();
  rest.rebuild_hierarchy();
  return {std::move(held), std::move(rest)};
}

Tensor load_image(const DatasetIndex& index, const ImageRecord& record, int target_h, int target_w) {
  const int C = int(record.channel_paths.size());
  Tensor stacked;
  int w0 = -1, h0 = -1;
  for (int c = 0; c < C; ++c) {
    const std::string full = (fs::path(index.base_dir) / record.channel_paths[size_t(c)]).string();
    int w = 0, h = 0;
    std::vector<uint8_t> pix = img::read_png_gray8(full, w, h);
    if (c == 0) {
      w0 = w;
      h0 = h;
      stacked = Tensor({C, h, w});
    } else if (w != w0 || h != h0) {
      throw ChannelShapeMismatch("record " + record.id + ": channel " + std::to_string(c) + " is " +
                                 std::to_string(w) + "x" + std::to_string(h) + ", expected " +
                                 std::to_string(w0) + "x" + std::to_string(h0));
    }
    double* dst = stacked.data() + size_t(c) * size_t(h) * size_t(w);
    for (size_t i = 0; i < pix.size(); ++i) dst[i] = double(pix[i]) / 255.0;
  }
  Tensor out;
  kern::resize_bilinear(stacked, out, target_h, target_w);
  return out;
}

ImageCache::ImageCache(const DatasetIndex& index, int h, int w) : h_(h), w_(w) {
  // insert keys first so parallel loads never touch the map structure
  for (const auto& r : index.records) images_[r.id] = Tensor();
  std::vector<const ImageRecord*> recs;
  recs.reserve(index.records.size());
  for (const auto& r : index.records) recs.push_back(&r);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int64_t i = 0; i < int64_t(recs.size()); ++i) {
    Tensor t = load_image(index, *recs[size_t(i)], h, w);
    images_.at(recs[size_t(i)]->id) = std::move(t);
  }
}

const Tensor& ImageCache::get(const std::string& record_id) const {
  auto it = images_.find(record_id);
  if (it == images_.end()) throw Error("image cache miss for record '" + record_id + "'");
  return it->second;
}

}  // namespace coda::data
