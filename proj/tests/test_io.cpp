#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "panco/io.hpp"

using namespace panco;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("CSV round-trips doubles at full precision") {
  const std::string path = tmp_path("panco_io_test.csv");
  const double values[3] = {1.0 / 3.0, -2.718281828459045e-12, 1e17 + 1};
  {
    CsvWriter w(path, {"a", "b", "c"});
    w.row({values[0], values[1], values[2]});
    w.row(std::vector<double>{1.0, 2.0, 3.0});
  }
  const CsvTable tab = CsvTable::read(path);
  std::remove(path.c_str());

  REQUIRE(tab.rows.size() == 2);
  CHECK(tab.column_index("b") == 1);
  CHECK_THROWS_AS(tab.column_index("missing"), IoError);
  for (int i = 0; i < 3; ++i) CHECK(tab.rows[0][i] == values[i]);
}

TEST_CASE("CSV writer rejects rows of the wrong width") {
  const std::string path = tmp_path("panco_io_width.csv");
  CsvWriter w(path, {"a", "b"});
  CHECK_THROWS_AS(w.row({1.0, 2.0, 3.0}), IoError);
  std::remove(path.c_str());
}

TEST_CASE("CSV reader reports the offending line and column") {
  const std::string path = tmp_path("panco_io_bad.csv");
  {
    std::ofstream f(path);
    f << "x,y\n1,2\n3,oops\n";
  }
  try {
    CsvTable::read(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":3") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
    CHECK(msg.find("column y") != std::string::npos);
  }
  {
    std::ofstream f(path);
    f << "x,y\n1\n";
  }
  CHECK_THROWS_AS(CsvTable::read(path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("JSON file round-trip and parse errors") {
  const std::string path = tmp_path("panco_io_test.json");
  const nlohmann::json j = {{"bias_nT", -104.5}, {"tags", {1, 2, 3}}};
  write_json_file(path, j);
  CHECK(read_json_file(path) == j);

  {
    std::ofstream f(path);
    f << "{not json";
  }
  CHECK_THROWS_AS(read_json_file(path), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_json_file(path), IoError);
}
