#include "panco/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include <nlohmann/json.hpp>

namespace panco {

CsvWriter::CsvWriter(const std::string& path,
                     const std::vector<std::string>& header)
    : out_(path), path_(path), n_cols_(header.size()) {
  if (!out_) throw IoError("cannot open " + path + " for writing");
  for (size_t i = 0; i < header.size(); ++i)
    out_ << header[i] << (i + 1 < header.size() ? ',' : '\n');
}

void CsvWriter::put_row(const double* v, size_t n) {
  if (n != n_cols_)
    throw IoError(path_ + ": row has " + std::to_string(n) +
                  " values, header has " + std::to_string(n_cols_));
  char buf[64];
  for (size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    out_ << buf << (i + 1 < n ? ',' : '\n');
  }
}

void CsvWriter::row(std::initializer_list<double> values) {
  put_row(values.begin(), values.size());
}

void CsvWriter::row(const std::vector<double>& values) {
  put_row(values.data(), values.size());
}

CsvTable CsvTable::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable tab;
  std::string line;
  long line_no = 0;

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };

  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  ++line_no;
  tab.header = split(line);

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != tab.header.size())
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(tab.header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    std::vector<double> row(fields.size());
    for (size_t i = 0; i < fields.size(); ++i) {
      const char* s = fields[i].c_str();
      char* end = nullptr;
      errno = 0;
      row[i] = std::strtod(s, &end);
      if (end == s || *end != '\0' || errno == ERANGE)
        throw IoError(path + ":" + std::to_string(line_no) +
                      ": non-numeric value '" + fields[i] + "' in column " +
                      tab.header[i]);
    }
    tab.rows.push_back(std::move(row));
  }
  return tab;
}

int CsvTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw IoError("missing CSV column: " + name);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace panco
