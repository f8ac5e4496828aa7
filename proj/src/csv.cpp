#include "coda/csv.hpp"

#include <fstream>
#include <sstream>

#include "coda/errors.hpp"

namespace coda::csv {

int Table::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return int(i);
  return -1;
}

static std::vector<std::string> parse_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

Table parse(const std::string& text) {
  Table t;
  std::istringstream ss(text);
  std::string line;
  bool first = true;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = parse_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

Table read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot open CSV file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_file(const std::string& path, const Table& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot write CSV file: " + path);
  for (size_t i = 0; i < t.header.size(); ++i) f << (i ? "," : "") << escape(t.header[i]);
  f << "\n";
  for (const auto& row : t.rows) {
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << escape(row[i]);
    f << "\n";
  }
  if (!f) throw IOFailure("write failed: " + path);
}

}  // namespace coda::csv
