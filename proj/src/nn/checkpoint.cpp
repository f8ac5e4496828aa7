#include "coda/nn/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "coda/errors.hpp"

using nlohmann::json;

namespace coda::nn {

static constexpr char kMagic[8] = {'C', 'O', 'D', 'A', 'C', 'K', 'P', '1'};

void CheckpointWriter::add_store(const std::string& section, const ParamStore& store) {
  for (int i = 0; i < store.count(); ++i) {
    const ParamInfo& info = store.info(i);
    Entry e;
    e.section = section;
    e.name = info.name;
    e.shape = info.shape;
    e.values.assign(store.data(i), store.data(i) + info.n);
    entries_.push_back(std::move(e));
  }
}

void CheckpointWriter::add_array(const std::string& section, const std::string& name,
                                 const std::vector<double>& values) {
  Entry e;
  e.section = section;
  e.name = name;
  e.shape = {int(values.size())};
  e.values = values;
  entries_.push_back(std::move(e));
}

void CheckpointWriter::write(const std::string& path) const {
  json header;
  header["format"] = "coda-ckpt";
  header["version"] = 1;
  for (auto& [k, v] : meta.items()) header[k] = v;

  json sections = json::object();
  uint64_t offset = 0;
  for (const auto& e : entries_) {
    if (!sections.contains(e.section)) sections[e.section] = json::array();
    sections[e.section].push_back(
        {{"name", e.name}, {"shape", e.shape}, {"offset", offset}, {"count", e.values.size()}});
    offset += e.values.size();
  }
  header["sections"] = sections;

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& e : entries_)
    f.write(reinterpret_cast<const char*>(e.values.data()),
            std::streamsize(e.values.size() * sizeof(double)));
  if (!f) throw IOFailure("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::read(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingCheckpoint("checkpoint not found: " + path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IOFailure("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  f.read(hs.data(), std::streamsize(hlen));
  Checkpoint ck;
  ck.header_ = json::parse(hs);
  // payload = everything that follows
  std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (rest.size() % sizeof(double) != 0) throw IOFailure("truncated checkpoint payload: " + path);
  ck.payload_.resize(rest.size() / sizeof(double));
  std::memcpy(ck.payload_.data(), rest.data(), rest.size());
  return ck;
}

bool Checkpoint::has_section(const std::string& section) const {
  return header_.contains("sections") && header_["sections"].contains(section);
}

void Checkpoint::load_store(const std::string& section, ParamStore& store) const {
  if (!has_section(section)) throw ShapeMismatch("checkpoint has no section '" + section + "'");
  const json& arrays = header_["sections"][section];
  if (int(arrays.size()) != store.count())
    throw ShapeMismatch("checkpoint section '" + section + "' has " + std::to_string(arrays.size()) +
                        " arrays, store expects " + std::to_string(store.count()));
  for (const auto& a : arrays) {
    const std::string name = a.at("name").get<std::string>();
    const int idx = store.find(name);
    if (idx < 0) throw ShapeMismatch("checkpoint array '" + name + "' not present in store");
    const ParamInfo& info = store.info(idx);
    const auto shape = a.at("shape").get<std::vector<int>>();
    if (shape != info.shape) throw ShapeMismatch("checkpoint array '" + name + "' shape mismatch");
    const uint64_t off = a.at("offset").get<uint64_t>();
    const uint64_t count = a.at("count").get<uint64_t>();
    if (count != info.n || off + count > payload_.size())
      throw ShapeMismatch("checkpoint array '" + name + "' size mismatch");
    std::memcpy(store.data(idx), payload_.data() + off, count * sizeof(double));
  }
}

std::vector<double> Checkpoint::load_array(const std::string& section, const std::string& name) const {
  if (!has_section(section)) throw ShapeMismatch("checkpoint has no section '" + section + "'");
  for (const auto& a : header_["sections"][section]) {
    if (a.at("name").get<std::string>() == name) {
      const uint64_t off = a.at("offset").get<uint64_t>();
      const uint64_t count = a.at("count").get<uint64_t>();
      if (off + count > payload_.size()) throw IOFailure("checkpoint payload out of range");
      return {payload_.begin() + int64_t(off), payload_.begin() + int64_t(off + count)};
    }
  }
  throw ShapeMismatch("checkpoint array '" + section + "/" + name + "' not found");
}

}  // namespace coda::nn
