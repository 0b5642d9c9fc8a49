#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "panco/estimation.hpp"
#include "panco/io.hpp"
#include "panco/scenarios.hpp"

using nlohmann::json;
using namespace panco;
namespace u = panco::units;

namespace {

// Applies a dotted-path override onto a config JSON.  The value is parsed
// as JSON when possible, otherwise taken as a string.  Creating new keys is
// allowed here; schema validation rejects unknown paths afterwards.
void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ScenarioError("--set expects key=value, got: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &cfg;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ScenarioError("--set key must be non-empty");
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) {
      std::string prefix = parts[0];
      for (size_t k = 1; k <= i; ++k) prefix += "." + parts[k];
      throw ScenarioError("--set path is not an object: " + prefix);
    }
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

void write_error_report(const std::string& out_dir, const std::string& stage,
                        const std::string& message) {
  try {
    std::filesystem::create_directories(out_dir);
    write_json_file(out_dir + "/report.json",
                    json{{"status", "error"},
                         {"stage", stage},
                         {"error", message}});
  } catch (const std::exception&) {
    // Reporting failures must not mask the original error.
  }
}

int cmd_run(const std::string& scenario, const std::string& config_path,
            const std::vector<std::string>& sets, const std::string& out_dir,
            bool seed_given, std::uint64_t seed, int workers, double tol) {
  json cfg;
  try {
    if (!config_path.empty())
      cfg = read_json_file(config_path);
    else if (!scenario.empty())
      cfg = default_scenario(scenario).to_json();
    else
      throw ScenarioError("run: give a scenario name or --config FILE");
    for (const auto& s : sets) apply_override(cfg, s);
    if (seed_given) cfg["seed"] = seed;
    if (workers > 0) cfg["workers"] = workers;
    if (tol > 0) cfg["rtol"] = tol;
    const ScenarioSpec spec = ScenarioSpec::from_json(cfg);
    if (spec.noise_sigma > 0 && !seed_given && config_path.empty())
      throw ScenarioError("noisy runs require --seed");
    const json report = run_scenario(spec, out_dir);
    std::printf("%s\n", report.dump(2).c_str());
    return 0;
  } catch (const std::exception& e) {
    write_error_report(out_dir, "run", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int cmd_signatures(const std::string& config_path,
                   const std::vector<std::string>& sets,
                   const std::string& out_dir, double eps_B_nT,
                   double eps_Om_Hz, int workers, double tol) {
  (void)workers;
  try {
    json cfg = config_path.empty() ? default_scenario("fig7").to_json()
                                   : read_json_file(config_path);
    for (const auto& s : sets) apply_override(cfg, s);
    if (tol > 0) cfg["rtol"] = tol;
    const ScenarioSpec spec = ScenarioSpec::from_json(cfg);
    const auto sig = generate_signatures(
        spec.cell, spec.schedule, u::from_nT(eps_B_nT),
        u::omega_from_Hz(eps_Om_Hz),
        ProtocolOptions{0.0, 0, IntegratorOptions{spec.rtol, spec.rtol * 1e-3,
                                                  1e-2, 1e-5}});
    std::filesystem::create_directories(out_dir);
    sig.write(out_dir + "/signatures.csv", out_dir + "/signatures.json");
    std::printf("wrote %s/signatures.csv\n", out_dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    write_error_report(out_dir, "signatures", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int cmd_fit(const std::string& sig_csv, const std::string& sig_meta,
            const std::string& trace_csv, const std::string& out_dir,
            bool with_baseline) {
  try {
    const SignatureSet sig = SignatureSet::read(sig_csv, sig_meta);
    const CsvTable trace = CsvTable::read(trace_csv);
    const int it = trace.column_index("t");
    const int iy = trace.column_index("sample");
    std::vector<double> t, y;
    t.reserve(trace.rows.size());
    y.reserve(trace.rows.size());
    for (const auto& r : trace.rows) {
      t.push_back(r.at(it));
      y.push_back(r.at(iy));
    }
    const long n = sig.size();
    if (y.empty()) throw EstimationError("fit: trace is empty");
    if (static_cast<long>(y.size()) % n != 0)
      throw EstimationError(
          "fit: trace length is not a whole number of cycles matching the "
          "signature grid");
    const long n_cycles = static_cast<long>(y.size()) / n;

    std::filesystem::create_directories(out_dir);
    CsvWriter channels(out_dir + "/channels.csv",
                       {"t", "Bx_pT", "By_pT", "Om_x_uHz", "Om_y_uHz",
                        "residual_rms"});
    double rss = 0.0;
    MeasuredCycle m;
    m.window_len = n / 2;
    m.noise_sigma = 1.0;
    for (long c = 0; c < n_cycles; ++c) {
      m.samples.assign(y.begin() + c * n, y.begin() + (c + 1) * n);
      const auto fit = fit_cycle(m, sig, with_baseline);
      channels.row({t[c * n], u::to_pT(fit.Bx), u::to_pT(fit.By),
                    fit.om_x_Hz() * 1e6, fit.om_y_Hz() * 1e6,
                    fit.residual_rms});
      rss += fit.residual_rms * fit.residual_rms;
    }
    write_json_file(out_dir + "/fit_summary.json",
                    json{{"n_cycles", n_cycles},
                         {"samples_per_cycle", n},
                         {"residual_rms",
                          std::sqrt(rss / std::max<long>(n_cycles, 1))},
                         {"with_baseline", with_baseline}});
    std::printf("wrote %s/channels.csv (%ld cycles)\n", out_dir.c_str(),
                n_cycles);
    return 0;
  } catch (const std::exception& e) {
    write_error_report(out_dir, "fit", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int cmd_scan_bias(const std::string& config_path,
                  const std::vector<std::string>& sets,
                  const std::string& out_dir, int workers, double tol,
                  std::uint64_t seed) {
  try {
    json cfg = config_path.empty() ? default_scenario("fig7").to_json()
                                   : read_json_file(config_path);
    cfg["scenario"] = "fig7";
    for (const auto& s : sets) apply_override(cfg, s);
    if (workers > 0) cfg["workers"] = workers;
    if (tol > 0) cfg["rtol"] = tol;
    cfg["seed"] = seed;
    const ScenarioSpec spec = ScenarioSpec::from_json(cfg);
    const json report = scenario_fig7(spec, out_dir);
    std::printf("%s\n", report.dump(2).c_str());
    return 0;
  } catch (const std::exception& e) {
    write_error_report(out_dir, "scan-bias", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int cmd_crosstalk(const std::string& config_path,
                  const std::vector<std::string>& sets,
                  const std::string& out_dir, double offset_nT, double tol) {
  try {
    json cfg = config_path.empty() ? default_scenario("fig7").to_json()
                                   : read_json_file(config_path);
    for (const auto& s : sets) apply_override(cfg, s);
    if (tol > 0) cfg["rtol"] = tol;
    const ScenarioSpec spec = ScenarioSpec::from_json(cfg);
    ProtocolOptions opt;
    opt.integ.rtol = spec.rtol;
    opt.integ.atol = spec.rtol * 1e-3;
    const auto sig =
        generate_signatures(spec.cell, spec.schedule, u::from_nT(1e-4),
                            u::omega_from_Hz(1e-4), opt);
    const double bias_actual = spec.cell.bias_z - u::from_nT(offset_nT);
    const double ct = crosstalk(spec.cell, spec.schedule, sig, bias_actual,
                                u::from_pT(1.0), opt);
    const json report =
        json{{"bias_nT", -u::to_nT(spec.cell.bias_z)},
             {"offset_nT", offset_nT},
             {"crosstalk_uHz_per_pT", u::crosstalk_to_uHz_per_pT(std::abs(ct))},
             {"suppression",
              suppression_factor(std::abs(ct), spec.cell.noble.gamma)}};
    std::filesystem::create_directories(out_dir);
    write_json_file(out_dir + "/report.json", report);
    std::printf("%s\n", report.dump(2).c_str());
    return 0;
  } catch (const std::exception& e) {
    write_error_report(out_dir, "crosstalk", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panco: pulsed alkali/noble-gas comagnetometer simulator"};
  app.require_subcommand(1);

  std::string scenario, config_path, out_dir = "out";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  int workers = 0;
  double tol = 0.0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* sub, bool with_seed = true) {
    sub->add_option("--config", config_path, "Config JSON file");
    sub->add_option("--set", sets, "Override config key, dotted path: k=v");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--workers", workers, "Worker threads for scans");
    sub->add_option("--tol", tol, "Integrator relative tolerance");
    if (with_seed)
      sub->add_option("--seed", seed, "RNG seed")
          ->each([&](const std::string&) { seed_given = true; });
  };

  auto* run = app.add_subcommand("run", "Run a scenario end to end");
  run->add_option("scenario", scenario,
                  "Scenario name (fig2, fig7, square_wave, "
                  "step_decomposition, wobble)");
  add_common(run);

  auto* sig_cmd =
      app.add_subcommand("signatures", "Generate and export signatures");
  double eps_B_nT = 1e-4, eps_Om_Hz = 1e-4;
  sig_cmd->add_option("--eps-B-nT", eps_B_nT, "Probe field, nT");
  sig_cmd->add_option("--eps-Om-Hz", eps_Om_Hz, "Probe rotation, Hz");
  add_common(sig_cmd, false);

  auto* fit = app.add_subcommand("fit", "Fit channels from an exported trace");
  std::string fit_sig, fit_meta, fit_trace;
  bool with_baseline = false;
  fit->add_option("--signatures", fit_sig, "signatures CSV")->required();
  fit->add_option("--meta", fit_meta, "signatures meta JSON")->required();
  fit->add_option("--trace", fit_trace, "trace CSV (columns t, sample)")
      ->required();
  fit->add_flag("--baseline", with_baseline, "Fit per-window baselines");
  fit->add_option("--out", out_dir, "Output directory");

  auto* scan = app.add_subcommand("scan-bias", "Bias scan (fig7 grid)");
  add_common(scan);

  auto* xt = app.add_subcommand("crosstalk", "Cross-talk at a bias offset");
  double offset_nT = 0.2;
  xt->add_option("--offset-nT", offset_nT, "True bias offset, nT");
  add_common(xt, false);

  CLI11_PARSE(app, argc, argv);

  if (run->parsed())
    return cmd_run(scenario, config_path, sets, out_dir, seed_given, seed,
                   workers, tol);
  if (sig_cmd->parsed())
    return cmd_signatures(config_path, sets, out_dir, eps_B_nT, eps_Om_Hz,
                          workers, tol);
  if (fit->parsed())
    return cmd_fit(fit_sig, fit_meta, fit_trace, out_dir, with_baseline);
  if (scan->parsed())
    return cmd_scan_bias(config_path, sets, out_dir, workers, tol, seed);
  if (xt->parsed()) return cmd_crosstalk(config_path, sets, out_dir, offset_nT, tol);
  return 1;
}
