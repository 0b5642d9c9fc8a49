#pragma once

#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace panco {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CSV output with full round-trip precision (17 significant digits).
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(std::initializer_list<double> values);
  void row(const std::vector<double>& values);

 private:
  void put_row(const double* v, size_t n);
  std::ofstream out_;
  std::string path_;
  size_t n_cols_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  static CsvTable read(const std::string& path);
  // Index of a named column; throws IoError if absent.
  int column_index(const std::string& name) const;
};

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace panco
