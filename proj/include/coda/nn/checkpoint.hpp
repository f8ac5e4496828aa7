#pragma once

#include <map>
#include <string>
#include <vector>

#include "coda/nn/params.hpp"
#include "json.hpp"

namespace coda::nn {

// Checkpoint file: magic, a JSON header (architecture dims, phase, step
// counter, rng state, array directory), then raw little-endian float64
// payload. Header fields are part of the compatibility contract.
//
//   [8 bytes "CODACKP1"][u64 header length][header JSON][payload doubles]

struct CheckpointWriter {
  nlohmann::json meta;  // arch / phase / step / rng, caller-defined
  void add_store(const std::string& section, const ParamStore& store);
  void add_array(const std::string& section, const std::string& name,
                 const std::vector<double>& values);
  void write(const std::string& path) const;  // throws IOFailure

 private:
  struct Entry {
    std::string section, name;
    std::vector<int> shape;
    std::vector<double> values;
  };
  std::vector<Entry> entries_;
};

class Checkpoint {
 public:
  static Checkpoint read(const std::string& path);  // throws MissingCheckpoint / IOFailure

  const nlohmann::json& header() const { return header_; }
  bool has_section(const std::string& section) const;

  // Copies every array of `section` into the store; names and shapes must
  // match exactly (throws ShapeMismatch).
  void load_store(const std::string& section, ParamStore& store) const;
  std::vector<double> load_array(const std::string& section, const std::string& name) const;

 private:
  nlohmann::json header_;
  std::vector<double> payload_;
};

}  // namespace coda::nn
