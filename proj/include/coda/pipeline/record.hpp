#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "coda/config.hpp"

namespace coda::pipe {

// One training/adaptation run persisted as a directory:
//   config.json    resolved configuration snapshot
//   metrics.csv    long format: phase,epoch,split,metric,value
//   checkpoints/   per-phase checkpoint files
//   log.txt        progress log
//   status.json    written last; marks the record complete (resumable no-op)
class RunRecord {
 public:
  RunRecord(std::string dir, const Config& snapshot);  // creates the directory tree

  static bool is_complete(const std::string& dir);

  void log(const std::string& line);
  void metric(const std::string& phase, double epoch, const std::string& split,
              const std::string& name, double value);
  std::string checkpoint_path(const std::string& name) const;
  void mark_complete();

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::ofstream log_file_;
  std::ofstream metrics_file_;
};

}  // namespace coda::pipe
