#pragma once

#include <string>
#include <vector>

namespace coda::csv {

// Minimal RFC-4180-ish CSV: quoted fields with embedded commas/quotes are
// understood on read; writes quote only when needed.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};

Table read_file(const std::string& path);          // throws IOFailure
Table parse(const std::string& text);
void write_file(const std::string& path, const Table& t);  // throws IOFailure
std::string escape(const std::string& field);

}  // namespace coda::csv
