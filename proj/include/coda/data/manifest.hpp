#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coda/tensor.hpp"

namespace coda::data {

// One imaging site with full provenance. moa_label is -1 for unlabeled
// records (usable for self-supervision, excluded from supervised loss
// and metrics).
struct ImageRecord {
  std::string id;
  std::string source;
  std::string batch;
  std::string plate;
  std::string well;
  int site = 0;
  std::vector<std::string> channel_paths;  // relative to the manifest directory
  std::string treatment;
  std::string moa;       // raw label string, empty if unlabeled
  int moa_label = -1;    // class index in [0, K), -1 if unlabeled

  bool labeled() const { return moa_label >= 0; }
};

enum class Scope { source, batch, plate };
Scope scope_from_string(const std::string& s);
std::string scope_to_string(Scope s);

struct ManifestSchema {
  int channel_count = 3;
  // When supplied, moa strings outside the vocabulary raise UnknownLabel
  // and class indices follow the sorted vocabulary.
  std::optional<std::vector<std::string>> label_vocab;
};

struct SplitSpec {
  enum class Role { train, val, test };
  Role role = Role::train;
  Scope scope = Scope::batch;
  std::vector<std::string> included_ids;
};

struct DatasetIndex {
  std::vector<ImageRecord> records;
  int class_count = 0;
  std::map<std::string, int> treatment_to_label;  // labeled treatments only
  std::string base_dir;

  // source -> batch -> plate -> record indices
  using PlateMap = std::map<std::string, std::vector<int>>;
  using BatchMap = std::map<std::string, PlateMap>;
  std::map<std::string, BatchMap> hierarchy;

  void rebuild_hierarchy();
  std::vector<std::string> ids_at_scope(Scope scope) const;
  bool has_scope_id(Scope scope, const std::string& id) const;
};

// Manifest columns, exactly: id,source,batch,plate,well,site,channel_paths,
// treatment,moa. channel_paths joins per-channel files with ';'.
DatasetIndex load_manifest(const std::string& path, const ManifestSchema& schema);
void save_manifest(const DatasetIndex& index, const std::string& path);

// (held out, rest); both carry the parent's label map and class count.
std::pair<DatasetIndex, DatasetIndex> split_by_scope(const DatasetIndex& index, Scope scope,
                                                     const std::vector<std::string>& held_out);

// Stack channels in manifest order, rescale to [0,1], bilinear-resize to
// (target_h, target_w). Pure function; callers may parallelize freely.
Tensor load_image(const DatasetIndex& index, const ImageRecord& record, int target_h, int target_w);

// Decoded-image cache keyed by record id; immutable once built.
class ImageCache {
 public:
  ImageCache() = default;
  ImageCache(const DatasetIndex& index, int h, int w);  // loads all records (parallel)
  const Tensor& get(const std::string& record_id) const;
  bool contains(const std::string& record_id) const { return images_.count(record_id) > 0; }
  int height() const { return h_; }
  int width() const { return w_; }

 private:
  std::map<std::string, Tensor> images_;
  int h_ = 0, w_ = 0;
};

}  // namespace coda::data
