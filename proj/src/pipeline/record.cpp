#include "coda/pipeline/record.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "coda/errors.hpp"

namespace fs = std::filesystem;

namespace coda::pipe {

RunRecord::RunRecord(std::string dir, const Config& snapshot) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(fs::path(dir_) / "checkpoints", ec);
  if (ec) throw IOFailure("cannot create run directory " + dir_ + ": " + ec.message());

  std::ofstream cf(fs::path(dir_) / "config.json", std::ios::binary);
  if (!cf) throw IOFailure("cannot write config snapshot in " + dir_);
  cf << snapshot.dump_json() << "\n";

  log_file_.open(fs::path(dir_) / "log.txt", std::ios::binary);
  metrics_file_.open(fs::path(dir_) / "metrics.csv", std::ios::binary);
  if (!log_file_ || !metrics_file_) throw IOFailure("cannot open run files in " + dir_);
  metrics_file_ << "phase,epoch,split,metric,value\n";
}

bool RunRecord::is_complete(const std::string& dir) {
  return fs::exists(fs::path(dir) / "status.json");
}

void RunRecord::log(const std::string& line) {
  log_file_ << line << "\n";
  log_file_.flush();
  std::cout << line << "\n";
}

void RunRecord::metric(const std::string& phase, double epoch, const std::string& split,
                       const std::string& name, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  char eb[32];
  std::snprintf(eb, sizeof eb, "%g", epoch);
  metrics_file_ << phase << "," << eb << "," << split << "," << name << "," << buf << "\n";
  metrics_file_.flush();
}

std::string RunRecord::checkpoint_path(const std::string& name) const {
  return (fs::path(dir_) / "checkpoints" / (name + ".ckpt")).string();
}

void RunRecord::mark_complete() {
  std::ofstream sf(fs::path(dir_) / "status.json", std::ios::binary);
  sf << "{\"complete\": true}\n";
}

}  // namespace coda::pipe
