#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "panco/io.hpp"
#include "panco/scenarios.hpp"

using namespace panco;
using nlohmann::json;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("panco_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("scenario specs serialise and reload losslessly") {
  for (const auto& name : scenario_names()) {
    const ScenarioSpec spec = default_scenario(name);
    const json j = spec.to_json();
    const ScenarioSpec back = ScenarioSpec::from_json(j);
    CHECK(back.to_json() == j);
  }
}

TEST_CASE("unknown config keys are rejected with their path") {
  json j = default_scenario("fig2").to_json();
  SUBCASE("top level") {
    j["banana"] = 1;
    CHECK_THROWS_WITH_AS(ScenarioSpec::from_json(j),
                         "unknown config key: config.banana", ScenarioError);
  }
  SUBCASE("drive") {
    j["drive"]["Bx_typo"] = 1.0;
    CHECK_THROWS_WITH_AS(ScenarioSpec::from_json(j),
                         "unknown config key: drive.Bx_typo", ScenarioError);
  }
  SUBCASE("cell species") {
    j["cell"]["alkali"]["gamma_typo"] = 1.0;
    CHECK_THROWS_WITH_AS(ScenarioSpec::from_json(j),
                         "unknown config key: cell.alkali.gamma_typo",
                         ScenarioError);
  }
  SUBCASE("params") {
    j["params"]["nonsense"] = 1.0;
    CHECK_THROWS_WITH_AS(ScenarioSpec::from_json(j),
                         "unknown config key: params.nonsense", ScenarioError);
  }
  SUBCASE("unknown scenario name") {
    j["scenario"] = "fig99";
    CHECK_THROWS_AS(ScenarioSpec::from_json(j), ScenarioError);
  }
}

TEST_CASE("spec validation rejects bad scalar fields") {
  ScenarioSpec spec = default_scenario("square_wave");
  SUBCASE("workers") {
    spec.workers = 0;
    CHECK_THROWS_AS(spec.validate(), ScenarioError);
  }
  SUBCASE("noise") {
    spec.noise_sigma = -1.0;
    CHECK_THROWS_AS(spec.validate(), ScenarioError);
  }
  SUBCASE("rtol") {
    spec.rtol = 0.0;
    CHECK_THROWS_AS(spec.validate(), ScenarioError);
  }
}

TEST_CASE("fig2 produces set points, positive Gram and clean fits") {
  const std::string out = temp_dir("fig2");
  const json rep = run_scenario(default_scenario("fig2"), out);

  for (const auto& sp : rep.at("set_points"))
    CHECK(sp.at("rotation_residual").get<double>() < 0.01);
  for (const auto& ev : rep.at("gram_eigenvalues"))
    CHECK(ev.get<double>() > 0.0);
  // Drive amplitudes are chosen to give comparable electron signals.
  const double ratio = rep.at("peak_ratio_B_over_Om").get<double>();
  CHECK(ratio > 0.5);
  CHECK(ratio < 2.0);
  // Fits recover the applied drives.
  const auto& fits = rep.at("fits");
  CHECK(fits[0].at("Bx_pT").get<double>() == doctest::Approx(1.43).epsilon(1e-3));
  CHECK(fits[3].at("Om_y_uHz").get<double>() ==
        doctest::Approx(269.0).epsilon(1e-3));
  CHECK(std::filesystem::exists(out + "/config.json"));
  CHECK(std::filesystem::exists(out + "/traces.csv"));
  CHECK(std::filesystem::exists(out + "/channels.csv"));
  CHECK(std::filesystem::exists(out + "/report.json"));
}

TEST_CASE("fig2 with all drives zero gives flat traces") {
  ScenarioSpec spec = default_scenario("fig2");
  spec.drive = ScalarDrive{};
  const std::string out = temp_dir("fig2_zero");
  run_scenario(spec, out);
  const CsvTable t = CsvTable::read(out + "/traces.csv");
  double peak = 0.0;
  const int ix = t.column_index("Pe_x_Bx");
  const int iy = t.column_index("Pe_x_Omx");
  for (const auto& r : t.rows)
    peak = std::max({peak, std::abs(r[ix]), std::abs(r[iy])});
  CHECK(peak < 1e-12);
}

TEST_CASE("square_wave reruns are bit-identical") {
  const std::string a = temp_dir("sq_a"), b = temp_dir("sq_b");
  ScenarioSpec spec = default_scenario("square_wave");
  spec.params["duration_s"] = 10.0;
  spec.params["amp_y_pT"] = 0.0;
  run_scenario(spec, a);
  // Reload from the written config to exercise the self-describing run dir.
  const ScenarioSpec again =
      ScenarioSpec::from_json(read_json_file(a + "/config.json"));
  run_scenario(again, b);
  CHECK(slurp(a + "/traces.csv") == slurp(b + "/traces.csv"));
  CHECK(slurp(a + "/channels.csv") == slurp(b + "/channels.csv"));
}

TEST_CASE("square_wave recovers the applied x amplitude") {
  const std::string out = temp_dir("sq_amp");
  const json rep = run_scenario(default_scenario("square_wave"), out);
  const double fit = rep.at("amp_x_fitted_pT").get<double>();
  CHECK(fit == doctest::Approx(70.0).epsilon(0.02));
}

TEST_CASE("square_wave with zero amplitudes stays at the noise floor") {
  ScenarioSpec spec = default_scenario("square_wave");
  spec.params["amp_x_pT"] = 0.0;
  spec.params["amp_y_pT"] = 0.0;
  spec.params["duration_s"] = 2.0;
  const std::string out = temp_dir("sq_zero");
  run_scenario(spec, out);
  const CsvTable ch = CsvTable::read(out + "/channels.csv");
  double peak = 0.0;
  for (const auto& r : ch.rows)
    for (int c : {ch.column_index("Bx_pT"), ch.column_index("Om_x_uHz")})
      peak = std::max(peak, std::abs(r[c]));
  CHECK(peak < 1e-6);
}

TEST_CASE("step_decomposition rejects steps inside the noble response time") {
  ScenarioSpec spec = default_scenario("step_decomposition");
  spec.params["period_s"] = 0.2;
  const std::string out = temp_dir("step_fast");
  CHECK_THROWS_AS(run_scenario(spec, out), ScenarioError);
}

TEST_CASE("step_decomposition with zero amplitude gives zero traces") {
  ScenarioSpec spec = default_scenario("step_decomposition");
  spec.params["step_amp_pT"] = 0.0;
  spec.params["n_steps"] = 2;
  const std::string out = temp_dir("step_zero");
  run_scenario(spec, out);
  const CsvTable t = CsvTable::read(out + "/traces.csv");
  double peak = 0.0;
  for (const auto& r : t.rows)
    for (const char* c : {"S_B", "S_B_direct", "S_Bn"})
      peak = std::max(peak, std::abs(r[t.column_index(c)]));
  CHECK(peak == 0.0);
}

TEST_CASE("wobble recovers the applied modulation with small leakage") {
  const std::string out = temp_dir("wobble");
  const json rep = run_scenario(default_scenario("wobble"), out);
  CHECK(rep.at("omega_peak_recovered_uHz").get<double>() ==
        doctest::Approx(100.0).epsilon(0.05));
  CHECK(rep.at("leakage_Om_x_uHz_per_pT").get<double>() < 0.01);
  CHECK(rep.at("leakage_Om_y_uHz_per_pT").get<double>() < 0.01);
}
