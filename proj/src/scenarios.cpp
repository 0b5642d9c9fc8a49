#include "panco/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "panco/io.hpp"

namespace panco {

using nlohmann::json;
using namespace units;

namespace {

void expect_keys(const json& obj, const std::vector<std::string>& allowed,
                 const std::string& path) {
  if (!obj.is_object())
    throw ScenarioError("expected an object at " + path);
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ScenarioError("unknown config key: " + path + "." + key);
  }
}

void check_cell_keys(const json& j, const std::string& path) {
  expect_keys(j,
              {"alkali", "noble", "R_se_en_per_s", "R_se_ne_per_s",
               "R_p_on_per_s", "pump_axis", "q_model", "bias_nT",
               "rotation_convention"},
              path);
  for (const char* sp : {"alkali", "noble"})
    if (j.contains(sp))
      expect_keys(j.at(sp),
                  {"name", "gamma_MHz_per_T", "lambda_M_nT", "R_sd_per_s"},
                  path + "." + sp);
  if (j.contains("q_model"))
    expect_keys(j.at("q_model"), {"kind", "q0"}, path + ".q_model");
}

void check_schedule_keys(const json& j, const std::string& path) {
  expect_keys(j,
              {"tau_ms", "pump_ms", "pulse_area_rad", "pulse_mode", "pulse_ms",
               "sample_rate_kSps", "p_sat", "settle_s"},
              path);
}

void check_drive_keys(const json& j, const std::string& path) {
  expect_keys(j, {"B", "Omega"}, path);
  for (const char* arm : {"B", "Omega"}) {
    if (!j.contains(arm)) continue;
    long i = 0;
    for (const auto& p : j.at(arm)) {
      std::ostringstream os;
      os << path << "." << arm << "[" << i++ << "]";
      expect_keys(p,
                  {"kind", "axis", "amplitude_pT", "amplitude_nT",
                   "amplitude_uHz", "t0_s", "period_s", "frequency_Hz",
                   "phase_rad"},
                  os.str());
    }
  }
}

struct ParamSchema {
  std::vector<std::string> keys;
  json defaults;
};

const std::map<std::string, ParamSchema>& param_schemas() {
  static const std::map<std::string, ParamSchema> schemas = {
      {"fig2", {{}, json::object()}},
      {"fig7",
       {{"bias_min_nT", "bias_max_nT", "n_bias", "nominal_bias_nT",
         "eps_B_nT", "eps_Om_Hz", "fisher_sigma", "crosstalk_offset_nT"},
        json{{"bias_min_nT", 95.0},
             {"bias_max_nT", 115.0},
             {"n_bias", 41},
             {"nominal_bias_nT", 106.3},
             {"eps_B_nT", 1e-4},
             {"eps_Om_Hz", 1e-4},
             {"fisher_sigma", 1.0},
             {"crosstalk_offset_nT", 0.2}}}},
      {"square_wave",
       {{"amp_x_pT", "amp_y_pT", "period_x_s", "period_y_s", "duration_s"},
        json{{"amp_x_pT", 70.0},
             {"amp_y_pT", 100.0},
             {"period_x_s", 10.0},
             {"period_y_s", 14.0},
             {"duration_s", 20.0}}}},
      {"step_decomposition",
       {{"step_amp_pT", "n_steps", "period_s"},
        json{{"step_amp_pT", 70.0}, {"n_steps", 70}, {"period_s", 10.0}}}},
      {"wobble",
       {{"omega_peak_uHz", "wobble_freq_Hz", "drift_amp_pT", "drift_period_s",
         "duration_s", "signature_bias_offset_nT"},
        json{{"omega_peak_uHz", 100.0},
             {"wobble_freq_Hz", 0.1},
             {"drift_amp_pT", 25.0},
             {"drift_period_s", 200.0},
             {"duration_s", 40.0},
             {"signature_bias_offset_nT", 0.0}}}}};
  return schemas;
}

json merged_params(const std::string& name, const json& given) {
  const auto it = param_schemas().find(name);
  if (it == param_schemas().end())
    throw ScenarioError("unknown scenario: " + name);
  expect_keys(given.is_null() ? json::object() : given, it->second.keys,
              "params");
  json out = it->second.defaults;
  if (!given.is_null())
    for (const auto& [k, v] : given.items()) out[k] = v;
  return out;
}

json scalar_drive_to_json(const ScalarDrive& d) {
  return json{{"B_x", d.B_x}, {"B_y", d.B_y}, {"Om_x", d.Om_x},
              {"Om_y", d.Om_y}};
}

ScalarDrive scalar_drive_from_json(const json& j) {
  expect_keys(j, {"B_x", "B_y", "Om_x", "Om_y"}, "drive");
  ScalarDrive d;
  if (j.contains("B_x")) d.B_x = j.at("B_x").get<double>();
  if (j.contains("B_y")) d.B_y = j.at("B_y").get<double>();
  if (j.contains("Om_x")) d.Om_x = j.at("Om_x").get<double>();
  if (j.contains("Om_y")) d.Om_y = j.at("Om_y").get<double>();
  return d;
}

// Constant drive program from the scalar DC components (plus extra_drive).
DriveTimeline base_drive(const ScenarioSpec& spec) {
  DriveTimeline d = spec.extra_drive;
  const Vec3 b(from_pT(spec.drive.B_x), from_pT(spec.drive.B_y), 0.0);
  const Vec3 om(omega_from_uHz(spec.drive.Om_x),
                omega_from_uHz(spec.drive.Om_y), 0.0);
  if (b.norm() > 0) d.B.push_back(DrivePrimitive::constant(b / b.norm(), b.norm()));
  if (om.norm() > 0)
    d.Omega.push_back(DrivePrimitive::constant(om / om.norm(), om.norm()));
  return d;
}

ProtocolOptions protocol_options(const ScenarioSpec& spec) {
  ProtocolOptions opt;
  opt.noise_sigma = spec.noise_sigma;
  opt.seed = spec.seed;
  opt.integ.rtol = spec.rtol;
  opt.integ.atol = spec.rtol * 1e-3;
  return opt;
}

// Runs the protocol for the configured settle time and returns the last
// cycle, enforcing near-periodicity.
MeasuredCycle settled_cycle(const CellConfig& cfg, const PulseSchedule& sch,
                            const DriveTimeline& drive,
                            const ProtocolOptions& opt, double* disc_out,
                            SpinState* state_out = nullptr) {
  const double cycle = sch.cycle_duration();
  const long n_cycles = std::max<long>(
      2, static_cast<long>(std::ceil(sch.settle_time / cycle - 1e-9)));
  auto res = run_protocol(cfg, sch, drive, n_cycles * cycle, opt, 2);
  auto rms = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s / std::max<size_t>(v.size(), 1));
  };
  std::vector<double> d(res.cycles[0].truth_x.size());
  for (size_t i = 0; i < d.size(); ++i)
    d[i] = res.cycles[1].truth_x[i] - res.cycles[0].truth_x[i];
  const double scale = rms(res.cycles[1].truth_x);
  const double disc = rms(d) / (scale > 0.0 ? scale : 1.0);
  if (disc_out) *disc_out = disc;
  if (disc > opt.settle_threshold) {
    std::ostringstream os;
    os << "scenario run not settled: consecutive cycles differ by relative "
       << "RMS " << disc << " after " << sch.settle_time << " s";
    throw ScenarioError(os.str());
  }
  if (state_out) *state_out = res.final_state;
  return res.cycles[1];
}

std::vector<double> cycle_time_grid(const PulseSchedule& sch) {
  const long nw = sch.samples_per_window();
  std::vector<double> t(2 * nw);
  for (long i = 0; i < 2 * nw; ++i) {
    const long w = i / nw, k = i % nw;
    t[i] = w * sch.tau + sch.pump_duration + double(k) / sch.sample_rate;
  }
  return t;
}

Eigen::Vector4d normalised_gram_eigenvalues(const SignatureSet& sig) {
  const long n = sig.size();
  const std::vector<double>* cols[4] = {&sig.S_Bx, &sig.S_By, &sig.S_Omx,
                                        &sig.S_Omy};
  Eigen::Matrix4d gram;
  double norms[4];
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (long k = 0; k < n; ++k) s += (*cols[i])[k] * (*cols[i])[k];
    norms[i] = std::sqrt(std::max(s, 1e-300));
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (long k = 0; k < n; ++k) s += (*cols[i])[k] * (*cols[j])[k];
      gram(i, j) = s / (norms[i] * norms[j]);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(gram);
  return es.eigenvalues();
}

void write_config(const ScenarioSpec& spec, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir + "/config.json", spec.to_json());
}

json finish(const std::string& out_dir, json report) {
  write_json_file(out_dir + "/report.json", report);
  return report;
}

// Per-cycle channel extraction shared by the time-series scenarios.
struct ChannelSeries {
  std::vector<double> t;  // first sample time, seconds from run start
  std::vector<double> Bx_pT, By_pT, Om_x_uHz, Om_y_uHz, residual;

  void push(double t_start, const FitResult& fit) {
    t.push_back(t_start);
    Bx_pT.push_back(to_pT(fit.Bx));
    By_pT.push_back(to_pT(fit.By));
    Om_x_uHz.push_back(fit.om_x_Hz() * 1e6);
    Om_y_uHz.push_back(fit.om_y_Hz() * 1e6);
    residual.push_back(fit.residual_rms);
  }

  void write(const std::string& path) const {
    CsvWriter csv(path,
                  {"t", "Bx_pT", "By_pT", "Om_x_uHz", "Om_y_uHz",
                   "residual_rms"});
    for (size_t i = 0; i < t.size(); ++i)
      csv.row({t[i], Bx_pT[i], By_pT[i], Om_x_uHz[i], Om_y_uHz[i],
               residual[i]});
  }
};

double mean_over(const std::vector<double>& t, const std::vector<double>& v,
                 double t0, double t1, bool absolute = false) {
  double s = 0;
  long n = 0;
  for (size_t i = 0; i < t.size(); ++i)
    if (t[i] >= t0 && t[i] < t1) {
      s += absolute ? std::abs(v[i]) : v[i];
      ++n;
    }
  return n > 0 ? s / n : 0.0;
}

double peak_abs_over(const std::vector<double>& t,
                     const std::vector<double>& v, double t0, double t1) {
  double peak = 0;
  for (size_t i = 0; i < t.size(); ++i)
    if (t[i] >= t0 && t[i] < t1) peak = std::max(peak, std::abs(v[i]));
  return peak;
}

}  // namespace

CellConfig khe_idealised_cell(double bias_nT) {
  CellConfig c;
  c.alkali.name = "K";
  c.alkali.gamma = gamma_from_MHz_per_T(28e3);
  c.alkali.lambda_M = from_nT(9.0);
  c.alkali.R_sd = 50.0;
  c.noble.name = "He3";
  c.noble.gamma = gamma_from_MHz_per_T(32.43);
  c.noble.lambda_M = from_nT(100.0);
  c.noble.R_sd = 0.0;
  c.R_se_en = 0.0;
  c.R_se_ne = 0.0;
  c.q_model = QModel::constant(1.0);
  c.bias_z = -from_nT(bias_nT);
  return c;
}

CellConfig rb_xe_cell() {
  CellConfig c;
  c.alkali.name = "Rb87";
  c.alkali.gamma = gamma_from_MHz_per_T(28e3);
  c.alkali.lambda_M = from_nT(54.0);
  c.alkali.R_sd = 1.0 / 3.3e-3;
  c.noble.name = "Xe129";
  c.noble.gamma = gamma_from_MHz_per_T(11.8);
  c.noble.lambda_M = from_nT(58.0);
  c.noble.R_sd = 1.0 / 10.0;
  // Balanced spin exchange between the species.  The shared rate sets how
  // fast the noble gas re-equilibrates after a field step and how closely
  // the step-decomposition proxy tracks the rotational signature.
  c.R_se_en = 10.9;
  c.R_se_ne = 10.9;
  c.q_model = QModel::polarisation_dependent();
  c.bias_z = -from_nT(41.0);
  return c;
}

PulseSchedule khe_schedule() {
  PulseSchedule s;
  s.tau = 0.02;
  s.pump_duration = 1e-3;
  s.sample_rate = 125e3;
  s.p_sat = 0.99;
  s.settle_time = 120.0;
  return s;
}

PulseSchedule rb_xe_schedule() {
  PulseSchedule s;
  s.tau = 2e-3;
  s.pump_duration = 0.3e-3;
  s.sample_rate = 12.5e3;
  s.p_sat = 1.0;
  s.settle_time = 30.0;
  return s;
}

std::vector<std::string> scenario_names() {
  std::vector<std::string> names;
  for (const auto& [name, schema] : param_schemas()) {
    (void)schema;
    names.push_back(name);
  }
  return names;
}

ScenarioSpec default_scenario(const std::string& name) {
  ScenarioSpec spec;
  spec.name = name;
  spec.params = merged_params(name, json::object());
  if (name == "fig7") {
    spec.cell = khe_idealised_cell();
    spec.schedule = khe_schedule();
  } else if (name == "fig2") {
    spec.cell = rb_xe_cell();
    spec.schedule = rb_xe_schedule();
    spec.schedule.sample_rate = 125e3;
    spec.drive = ScalarDrive{1.43, 1.43, 269.0, 269.0};
  } else if (name == "square_wave" || name == "step_decomposition" ||
             name == "wobble") {
    spec.cell = rb_xe_cell();
    spec.schedule = rb_xe_schedule();
  } else {
    throw ScenarioError("unknown scenario: " + name);
  }
  return spec;
}

void ScenarioSpec::validate() const {
  if (param_schemas().find(name) == param_schemas().end())
    throw ScenarioError("unknown scenario: " + name);
  cell.validate();
  schedule.validate();
  if (!(noise_sigma >= 0.0))
    throw ScenarioError("noise_sigma must be >= 0");
  if (workers < 1) throw ScenarioError("workers must be >= 1");
  if (!(rtol > 0.0)) throw ScenarioError("rtol must be > 0");
  merged_params(name, params);
}

json ScenarioSpec::to_json() const {
  return json{{"scenario", name},
              {"cell", cell_to_json(cell)},
              {"schedule", schedule_to_json(schedule)},
              {"drive", scalar_drive_to_json(drive)},
              {"extra_drive", drive_to_json(extra_drive)},
              {"noise_sigma", noise_sigma},
              {"seed", seed},
              {"workers", workers},
              {"rtol", rtol},
              {"params", merged_params(name, params)}};
}

ScenarioSpec ScenarioSpec::from_json(const json& j) {
  expect_keys(j,
              {"scenario", "cell", "schedule", "drive", "extra_drive",
               "noise_sigma", "seed", "workers", "rtol", "params"},
              "config");
  if (!j.contains("scenario"))
    throw ScenarioError("missing config key: config.scenario");
  ScenarioSpec spec = default_scenario(j.at("scenario").get<std::string>());
  if (j.contains("cell")) {
    check_cell_keys(j.at("cell"), "cell");
    spec.cell = cell_from_json(j.at("cell"));
  }
  if (j.contains("schedule")) {
    check_schedule_keys(j.at("schedule"), "schedule");
    spec.schedule = schedule_from_json(j.at("schedule"));
  }
  if (j.contains("drive")) spec.drive = scalar_drive_from_json(j.at("drive"));
  if (j.contains("extra_drive")) {
    check_drive_keys(j.at("extra_drive"), "extra_drive");
    spec.extra_drive = drive_from_json(j.at("extra_drive"));
  }
  if (j.contains("noise_sigma"))
    spec.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("workers")) spec.workers = j.at("workers").get<int>();
  if (j.contains("rtol")) spec.rtol = j.at("rtol").get<double>();
  if (j.contains("params"))
    spec.params = merged_params(spec.name, j.at("params"));
  spec.validate();
  return spec;
}

json scenario_fig2(const ScenarioSpec& spec, const std::string& out_dir) {
  write_config(spec, out_dir);
  const ProtocolOptions opt = protocol_options(spec);

  const char* case_names[4] = {"B_x", "B_y", "Om_x", "Om_y"};
  const double amps[4] = {from_pT(spec.drive.B_x), from_pT(spec.drive.B_y),
                          omega_from_uHz(spec.drive.Om_x),
                          omega_from_uHz(spec.drive.Om_y)};
  DriveTimeline drives[4] = {
      DriveTimeline::constant_B(Vec3(amps[0], 0, 0)),
      DriveTimeline::constant_B(Vec3(0, amps[1], 0)),
      DriveTimeline::constant_Omega(Vec3(amps[2], 0, 0)),
      DriveTimeline::constant_Omega(Vec3(0, amps[3], 0))};
  for (auto& d : drives) {
    for (const auto& p : spec.extra_drive.B) d.B.push_back(p);
    for (const auto& p : spec.extra_drive.Omega) d.Omega.push_back(p);
  }

  MeasuredCycle cycles[4];
  double discs[4];
  for (int c = 0; c < 4; ++c)
    cycles[c] = settled_cycle(spec.cell, spec.schedule, drives[c], opt,
                              &discs[c]);

  const long nw = spec.schedule.samples_per_window();
  const auto t = cycle_time_grid(spec.schedule);

  // Noble-gas set points: mean transverse position per window, and the
  // residual of mapping window 1 onto window 2 by the +pulse z-rotation.
  json set_points = json::array();
  for (int c = 0; c < 4; ++c) {
    Vec3 s1 = Vec3::Zero(), s2 = Vec3::Zero();
    for (long k = 0; k < nw; ++k) {
      s1 += Vec3(cycles[c].pn_x[k], cycles[c].pn_y[k], 0.0);
      s2 += Vec3(cycles[c].pn_x[nw + k], cycles[c].pn_y[nw + k], 0.0);
    }
    s1 /= double(nw);
    s2 /= double(nw);
    const Vec3 mapped = rotated_z(s1, spec.schedule.pulse_area);
    const double scale = std::max(s1.norm(), s2.norm());
    const double resid = scale > 0 ? (mapped - s2).norm() / scale : 0.0;
    set_points.push_back(json{{"case", case_names[c]},
                              {"window1", {s1.x(), s1.y()}},
                              {"window2", {s2.x(), s2.y()}},
                              {"rotation_residual", resid}});
  }

  // Small-drive signatures for fitting and the Gram analysis; they stay
  // valid even when a case amplitude is set to zero.
  const auto sig =
      generate_signatures(spec.cell, spec.schedule, from_nT(1e-4),
                          omega_from_Hz(1e-4), opt);
  const Eigen::Vector4d gram_eig = normalised_gram_eigenvalues(sig);

  CsvWriter traces(out_dir + "/traces.csv",
                   {"t", "Pe_x_Bx", "Pe_y_Bx", "Pn_x_Bx", "Pn_y_Bx",
                    "Pe_x_By", "Pe_y_By", "Pn_x_By", "Pn_y_By", "Pe_x_Omx",
                    "Pe_y_Omx", "Pn_x_Omx", "Pn_y_Omx", "Pe_x_Omy",
                    "Pe_y_Omy", "Pn_x_Omy", "Pn_y_Omy"});
  for (long i = 0; i < 2 * nw; ++i) {
    std::vector<double> row{t[i]};
    for (int c = 0; c < 4; ++c) {
      row.push_back(cycles[c].truth_x[i]);
      row.push_back(cycles[c].truth_y[i]);
      row.push_back(cycles[c].pn_x[i]);
      row.push_back(cycles[c].pn_y[i]);
    }
    traces.row(row);
  }

  CsvWriter channels(out_dir + "/channels.csv",
                     {"case", "Bx_pT", "By_pT", "Om_x_uHz", "Om_y_uHz",
                      "residual_rms"});
  json fits = json::array();
  for (int c = 0; c < 4; ++c) {
    const auto fit = fit_cycle(cycles[c], sig, false);
    channels.row({double(c), to_pT(fit.Bx), to_pT(fit.By),
                  fit.om_x_Hz() * 1e6, fit.om_y_Hz() * 1e6,
                  fit.residual_rms});
    fits.push_back(json{{"case", case_names[c]},
                        {"Bx_pT", to_pT(fit.Bx)},
                        {"By_pT", to_pT(fit.By)},
                        {"Om_x_uHz", fit.om_x_Hz() * 1e6},
                        {"Om_y_uHz", fit.om_y_Hz() * 1e6},
                        {"residual_rms", fit.residual_rms}});
  }

  auto peak_pe = [&](int c) {
    double peak = 0;
    for (long i = 0; i < 2 * nw; ++i)
      peak = std::max(peak, std::hypot(cycles[c].truth_x[i],
                                       cycles[c].truth_y[i]));
    return peak;
  };
  const double peak_b = peak_pe(0), peak_om = peak_pe(2);

  return finish(out_dir,
                json{{"scenario", "fig2"},
                     {"amplitudes",
                      json{{"B_x_pT", spec.drive.B_x},
                           {"B_y_pT", spec.drive.B_y},
                           {"Om_x_uHz", spec.drive.Om_x},
                           {"Om_y_uHz", spec.drive.Om_y}}},
                     {"set_points", set_points},
                     {"gram_eigenvalues",
                      {gram_eig(0), gram_eig(1), gram_eig(2), gram_eig(3)}},
                     {"gram_condition", gram_eig(3) / gram_eig(0)},
                     {"fits", fits},
                     {"peak_Pe_transverse_B", peak_b},
                     {"peak_Pe_transverse_Om", peak_om},
                     {"peak_ratio_B_over_Om",
                      peak_om > 0 ? peak_b / peak_om : 0.0},
                     {"settle_discrepancies",
                      {discs[0], discs[1], discs[2], discs[3]}}});
}

json scenario_fig7(const ScenarioSpec& spec, const std::string& out_dir) {
  write_config(spec, out_dir);
  const json params = merged_params("fig7", spec.params);
  const double lo = params.at("bias_min_nT").get<double>();
  const double hi = params.at("bias_max_nT").get<double>();
  const int n = params.at("n_bias").get<int>();
  if (n < 2 || !(hi > lo))
    throw ScenarioError("fig7 requires n_bias >= 2 and bias_max > bias_min");

  BiasScanOptions opt;
  opt.noise_sigma = params.at("fisher_sigma").get<double>();
  opt.eps_B = from_nT(params.at("eps_B_nT").get<double>());
  opt.eps_Om = omega_from_Hz(params.at("eps_Om_Hz").get<double>());
  opt.workers = spec.workers;
  opt.protocol = protocol_options(spec);
  // Signatures and cross-talk probes are evaluated on noiseless traces.
  opt.protocol.noise_sigma = 0.0;

  std::vector<double> biases;
  for (int i = 0; i < n; ++i)
    biases.push_back(-from_nT(lo + (hi - lo) * i / (n - 1)));

  const auto reports = bias_scan(spec.cell, spec.schedule, biases, opt);

  CsvWriter channels(out_dir + "/channels.csv",
                     {"bias_nT", "sens_Bx", "sens_By", "sens_Om_x",
                      "sens_Om_y", "cw_om_sens", "serf_B_sens",
                      "gram_condition", "degenerate"});
  int best_panco = -1, best_cw = -1;
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    channels.row({-to_nT(r.bias_z), r.sens_Bx, r.sens_By, r.sens_Om_x,
                  r.sens_Om_y, r.cw_om_sens, r.serf_B_sens, r.gram_condition,
                  r.degenerate ? 1.0 : 0.0});
    if (!r.degenerate) {
      if (best_panco < 0 || r.sens_Om_x < reports[best_panco].sens_Om_x)
        best_panco = static_cast<int>(i);
      if (std::isfinite(r.cw_om_sens) &&
          (best_cw < 0 || r.cw_om_sens < reports[best_cw].cw_om_sens))
        best_cw = static_cast<int>(i);
    }
  }
  if (best_panco < 0 || best_cw < 0)
    throw ScenarioError("fig7: no non-degenerate scan points");

  // Signatures and cross-talk at the nominal operating point.
  const double nominal = params.at("nominal_bias_nT").get<double>();
  const double offset = params.at("crosstalk_offset_nT").get<double>();
  CellConfig nominal_cell = spec.cell;
  nominal_cell.bias_z = -from_nT(nominal);
  const auto sig = generate_signatures(nominal_cell, spec.schedule, opt.eps_B,
                                       opt.eps_Om, opt.protocol);
  const auto t = cycle_time_grid(spec.schedule);
  CsvWriter traces(out_dir + "/traces.csv",
                   {"t", "S_Bx", "S_By", "S_Omx", "S_Omy"});
  for (long i = 0; i < sig.size(); ++i)
    traces.row({t[i], sig.S_Bx[i], sig.S_By[i], sig.S_Omx[i], sig.S_Omy[i]});

  const double ct =
      crosstalk(nominal_cell, spec.schedule, sig, -from_nT(nominal + offset),
                from_pT(1.0), opt.protocol);
  const double ct_zero = crosstalk(nominal_cell, spec.schedule, sig,
                                   -from_nT(nominal), from_pT(1.0),
                                   opt.protocol);

  const auto& pb = reports[best_panco];
  const auto& cb = reports[best_cw];
  return finish(
      out_dir,
      json{{"scenario", "fig7"},
           {"cw_optimum", json{{"bias_nT", -to_nT(cb.bias_z)},
                               {"sens_Om", cb.cw_om_sens}}},
           {"panco_optimum", json{{"bias_nT", -to_nT(pb.bias_z)},
                                  {"sens_Om", pb.sens_Om_x}}},
           {"panco_over_cw_optimum", pb.sens_Om_x / cb.cw_om_sens},
           {"serf_B_sens", reports[0].serf_B_sens},
           {"magnetic_ratio_at_panco_optimum",
            pb.sens_Bx / pb.serf_B_sens},
           {"crosstalk",
            json{{"nominal_bias_nT", nominal},
                 {"offset_nT", offset},
                 {"uHz_per_pT", crosstalk_to_uHz_per_pT(std::abs(ct))},
                 {"zero_offset_uHz_per_pT",
                  crosstalk_to_uHz_per_pT(std::abs(ct_zero))},
                 {"suppression",
                  suppression_factor(std::abs(ct), spec.cell.noble.gamma)}}},
           {"grid",
            json{{"min_nT", lo}, {"max_nT", hi}, {"n", n}}}});
}

json scenario_square_wave(const ScenarioSpec& spec,
                          const std::string& out_dir) {
  write_config(spec, out_dir);
  const json params = merged_params("square_wave", spec.params);
  const double ax = from_pT(params.at("amp_x_pT").get<double>());
  const double ay = from_pT(params.at("amp_y_pT").get<double>());
  const double px = params.at("period_x_s").get<double>();
  const double py = params.at("period_y_s").get<double>();
  const double duration = params.at("duration_s").get<double>();
  const ProtocolOptions opt = protocol_options(spec);
  const double cycle = spec.schedule.cycle_duration();

  const auto sig =
      generate_signatures(spec.cell, spec.schedule, from_nT(1e-4),
                          omega_from_Hz(1e-4), protocol_options(spec));
  sig.write(out_dir + "/signatures.csv", out_dir + "/signatures.json");

  // Settle on the waves' initial plateau, then start the waves.
  DriveTimeline plateau = base_drive(spec);
  plateau.B.push_back(DrivePrimitive::constant(Vec3(1, 0, 0), ax));
  plateau.B.push_back(DrivePrimitive::constant(Vec3(0, 1, 0), ay));
  SpinState state = settle(spec.cell, spec.schedule, plateau, opt);
  const double t_run0 = state.t;

  DriveTimeline waves = base_drive(spec);
  if (ax > 0)
    waves.B.push_back(DrivePrimitive::square_wave(Vec3(1, 0, 0), ax, px,
                                                  t_run0));
  if (ay > 0)
    waves.B.push_back(DrivePrimitive::square_wave(Vec3(0, 1, 0), ay, py,
                                                  t_run0));

  ChannelSeries series;
  CsvWriter traces(out_dir + "/traces.csv", {"t", "sample"});
  const auto grid = cycle_time_grid(spec.schedule);
  run_protocol_stream(
      spec.cell, spec.schedule, waves, duration, opt,
      [&](const MeasuredCycle& cyc) {
        const double t0 = cyc.t_start - t_run0;
        for (size_t i = 0; i < cyc.samples.size(); ++i)
          traces.row({t0 + grid[i], cyc.samples[i]});
        series.push(t0 + grid[0], fit_cycle(cyc, sig, false));
      },
      state);
  series.write(out_dir + "/channels.csv");

  // Plateau amplitudes away from any edge.
  const double amp_x_fit =
      mean_over(series.t, series.Bx_pT, 0.2 * px, 0.45 * px, true);
  const double amp_y_fit =
      mean_over(series.t, series.By_pT, 0.2 * py, 0.45 * py, true);

  // Rotation-channel step response: for each x-wave edge whose following
  // 3.5 s contain no other edge, the post-step peak and the value 4 s later.
  std::vector<double> edges_x, edges_y;
  if (ax > 0)
    for (double e = px / 2; e < duration - 4.0; e += px / 2)
      edges_x.push_back(e);
  if (ay > 0)
    for (double e = py / 2; e < duration; e += py / 2) edges_y.push_back(e);
  json steps = json::array();
  double worst_ratio = 0.0;
  int n_clean = 0;
  for (double e : edges_x) {
    bool clean = true;
    for (double o : edges_x)
      if (o > e && o <= e + 3.5) clean = false;
    for (double o : edges_y)
      if (o > e && o <= e + 3.5) clean = false;
    if (!clean) continue;
    const double peak = peak_abs_over(series.t, series.Om_x_uHz, e,
                                      e + 0.5);
    const double tail = mean_over(series.t, series.Om_x_uHz, e + 3.5,
                                  e + 4.0 - cycle / 2, true);
    const double ratio = peak > 0 ? tail / peak : 0.0;
    steps.push_back(json{{"t_edge_s", e},
                         {"peak_uHz", peak},
                         {"tail_uHz", tail},
                         {"ratio", ratio}});
    worst_ratio = std::max(worst_ratio, ratio);
    ++n_clean;
  }
  if (ax > 0 && n_clean == 0)
    throw ScenarioError(
        "square_wave: no step edge with a clean 4 s decay window; "
        "increase duration or periods");

  return finish(out_dir,
                json{{"scenario", "square_wave"},
                     {"amp_x_applied_pT", to_pT(ax)},
                     {"amp_x_fitted_pT", amp_x_fit},
                     {"amp_y_applied_pT", to_pT(ay)},
                     {"amp_y_fitted_pT", amp_y_fit},
                     {"step_responses", steps},
                     {"worst_step_ratio_at_4s", worst_ratio},
                     {"suppression_at_4s",
                      worst_ratio > 0 ? 1.0 / worst_ratio : 0.0}});
}

json scenario_step_decomposition(const ScenarioSpec& spec,
                                 const std::string& out_dir) {
  write_config(spec, out_dir);
  const json params = merged_params("step_decomposition", spec.params);
  const double amp = from_pT(params.at("step_amp_pT").get<double>());
  const long n_steps = params.at("n_steps").get<long>();
  const double period = params.at("period_s").get<double>();
  if (n_steps < 1) throw ScenarioError("n_steps must be >= 1");
  const ProtocolOptions opt = protocol_options(spec);
  const double cycle = spec.schedule.cycle_duration();
  const double half = period / 2;
  const long steps_per_half =
      static_cast<long>(std::llround(half / cycle));
  if (std::abs(steps_per_half * cycle - half) > 1e-9)
    throw ScenarioError(
        "step_decomposition: period/2 must be a whole number of cycles");
  // The noble gas must re-equilibrate between edges.
  const double noble_rate = spec.cell.R_se_ne + spec.cell.noble.R_sd;
  if (half * noble_rate < 5.0)
    throw ScenarioError(
        "step_decomposition: steps too closely spaced for the noble-gas "
        "response time");

  const auto sig =
      generate_signatures(spec.cell, spec.schedule, from_nT(1e-4),
                          omega_from_Hz(1e-4), protocol_options(spec));
  sig.write(out_dir + "/signatures.csv", out_dir + "/signatures.json");

  DriveTimeline plateau = base_drive(spec);
  plateau.B.push_back(DrivePrimitive::constant(Vec3(1, 0, 0), amp));
  SpinState state = settle(spec.cell, spec.schedule, plateau, opt);
  const double t_run0 = state.t;

  DriveTimeline wave = base_drive(spec);
  wave.B.push_back(
      DrivePrimitive::square_wave(Vec3(1, 0, 0), amp, period, t_run0));

  // Keep only the cycles needed: the one before each edge, the first one
  // after it, and the last one before the next edge.
  std::map<long, std::vector<double>> kept;
  for (long k = 1; k <= n_steps; ++k) {
    const long e = k * steps_per_half;
    kept[e - 1] = {};
    kept[e] = {};
    kept[e + steps_per_half - 1] = {};
  }
  const double duration = (n_steps + 1) * half;
  run_protocol_stream(
      spec.cell, spec.schedule, wave, duration, opt,
      [&](const MeasuredCycle& cyc) {
        auto it = kept.find(cyc.index);
        if (it != kept.end()) it->second = cyc.samples;
      },
      state);

  const long n = sig.size();
  std::vector<double> s_direct(n, 0.0), s_b(n, 0.0);
  CsvWriter channels(out_dir + "/channels.csv",
                     {"t_edge_s", "delta_B_pT", "Bx_before_pT",
                      "Bx_after_pT"});
  MeasuredCycle fit_buf;
  fit_buf.window_len = spec.schedule.samples_per_window();
  fit_buf.noise_sigma = std::max(spec.noise_sigma, 1e-12);
  for (long k = 1; k <= n_steps; ++k) {
    const long e = k * steps_per_half;
    const auto& before = kept.at(e - 1);
    const auto& first = kept.at(e);
    const auto& late = kept.at(e + steps_per_half - 1);
    const double sign_before = (k % 2 == 1) ? 1.0 : -1.0;
    const double delta = -2.0 * amp * sign_before;
    if (delta != 0.0)
      for (long i = 0; i < n; ++i) {
        s_direct[i] += (first[i] - before[i]) / delta / n_steps;
        s_b[i] += (late[i] - before[i]) / delta / n_steps;
      }
    fit_buf.samples = before;
    const auto fit_before = fit_cycle(fit_buf, sig, false);
    fit_buf.samples = late;
    const auto fit_after = fit_cycle(fit_buf, sig, false);
    channels.row({k * half, to_pT(delta), to_pT(fit_before.Bx),
                  to_pT(fit_after.Bx)});
  }
  std::vector<double> s_bn(n);
  for (long i = 0; i < n; ++i) s_bn[i] = s_b[i] - s_direct[i];

  const auto t = cycle_time_grid(spec.schedule);
  CsvWriter traces(out_dir + "/traces.csv",
                   {"t", "S_B", "S_B_direct", "S_Bn", "S_Bx_true",
                    "S_Omx_true"});
  for (long i = 0; i < n; ++i)
    traces.row({t[i], s_b[i], s_direct[i], s_bn[i], sig.S_Bx[i],
                sig.S_Omx[i]});

  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (long i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  };
  const double cos_sim =
      std::abs(dot(s_bn, sig.S_Omx)) /
      std::sqrt(std::max(dot(s_bn, s_bn) * dot(sig.S_Omx, sig.S_Omx),
                         1e-300));
  const double scale = dot(s_bn, sig.S_Omx) / dot(sig.S_Omx, sig.S_Omx);

  return finish(out_dir,
                json{{"scenario", "step_decomposition"},
                     {"n_steps", n_steps},
                     {"step_amp_pT", to_pT(amp)},
                     {"correlation_S_Bn_vs_Om_signature", cos_sim},
                     {"scale_T_per_rad_s", scale},
                     {"rms_S_Bn", std::sqrt(dot(s_bn, s_bn) / n)},
                     {"rms_S_direct",
                      std::sqrt(dot(s_direct, s_direct) / n)}});
}

json scenario_wobble(const ScenarioSpec& spec, const std::string& out_dir) {
  write_config(spec, out_dir);
  const json params = merged_params("wobble", spec.params);
  const double om_peak = omega_from_uHz(params.at("omega_peak_uHz").get<double>());
  const double f_wobble = params.at("wobble_freq_Hz").get<double>();
  const double drift_amp = from_pT(params.at("drift_amp_pT").get<double>());
  const double drift_period = params.at("drift_period_s").get<double>();
  const double duration = params.at("duration_s").get<double>();
  const double sig_offset =
      params.at("signature_bias_offset_nT").get<double>();
  const ProtocolOptions opt = protocol_options(spec);

  CellConfig sig_cell = spec.cell;
  sig_cell.bias_z -= from_nT(sig_offset);
  const auto sig = generate_signatures(sig_cell, spec.schedule, from_nT(1e-4),
                                       omega_from_Hz(1e-4),
                                       protocol_options(spec));
  sig.write(out_dir + "/signatures.csv", out_dir + "/signatures.json");

  SpinState state = settle(spec.cell, spec.schedule, base_drive(spec), opt);
  const double t_run0 = state.t;

  DriveTimeline drive = base_drive(spec);
  if (om_peak > 0)
    drive.Omega.push_back(DrivePrimitive::sinusoid(
        Vec3(0, 1, 0), om_peak, f_wobble, -two_pi * f_wobble * t_run0));
  if (drift_amp > 0)
    drive.B.push_back(DrivePrimitive::sinusoid(
        Vec3(1, 0, 0), drift_amp, 1.0 / drift_period,
        -two_pi / drift_period * t_run0));

  ChannelSeries series;
  CsvWriter traces(out_dir + "/traces.csv", {"t", "sample"});
  const auto grid = cycle_time_grid(spec.schedule);
  run_protocol_stream(
      spec.cell, spec.schedule, drive, duration, opt,
      [&](const MeasuredCycle& cyc) {
        const double t0 = cyc.t_start - t_run0;
        for (size_t i = 0; i < cyc.samples.size(); ++i)
          traces.row({t0 + grid[i], cyc.samples[i]});
        series.push(t0 + grid[0], fit_cycle(cyc, sig, false));
      },
      state);
  series.write(out_dir + "/channels.csv");

  // Recovered wobble amplitude and drift leakage by least squares against
  // the known waveforms.
  // Regressors: wobble quadratures, offset, the drift waveform, and its
  // time derivative.  The derivative column absorbs the transient
  // noble-gas adaptation so the drift coefficient measures DC leakage.
  const long m = static_cast<long>(series.t.size());
  Eigen::MatrixXd g(m, 5);
  for (long i = 0; i < m; ++i) {
    const double tc = series.t[i] + spec.schedule.cycle_duration() / 2;
    g(i, 0) = std::sin(two_pi * f_wobble * tc);
    g(i, 1) = std::cos(two_pi * f_wobble * tc);
    g(i, 2) = 1.0;
    g(i, 3) = to_pT(drift_amp) * std::sin(two_pi * tc / drift_period);
    g(i, 4) = to_pT(drift_amp) * std::cos(two_pi * tc / drift_period) *
              (two_pi / drift_period);
  }
  auto solve = [&](const std::vector<double>& y) {
    const Eigen::VectorXd v =
        Eigen::Map<const Eigen::VectorXd>(y.data(), m);
    return Eigen::VectorXd(
        g.colPivHouseholderQr().solve(v).eval());
  };
  const Eigen::VectorXd cy = solve(series.Om_y_uHz);
  const Eigen::VectorXd cx = solve(series.Om_x_uHz);
  const double recovered_uHz = std::hypot(cy(0), cy(1));

  return finish(
      out_dir,
      json{{"scenario", "wobble"},
           {"omega_peak_applied_uHz", omega_to_uHz(om_peak)},
           {"omega_peak_recovered_uHz", recovered_uHz},
           {"drift_amp_pT", to_pT(drift_amp)},
           {"leakage_Om_x_uHz_per_pT", std::abs(cx(3))},
           {"leakage_Om_y_uHz_per_pT", std::abs(cy(3))},
           {"signature_bias_offset_nT", sig_offset}});
}

json run_scenario(const ScenarioSpec& spec, const std::string& out_dir) {
  spec.validate();
  if (spec.name == "fig2") return scenario_fig2(spec, out_dir);
  if (spec.name == "fig7") return scenario_fig7(spec, out_dir);
  if (spec.name == "square_wave") return scenario_square_wave(spec, out_dir);
  if (spec.name == "step_decomposition")
    return scenario_step_decomposition(spec, out_dir);
  if (spec.name == "wobble") return scenario_wobble(spec, out_dir);
  throw ScenarioError("unknown scenario: " + spec.name);
}

}  // namespace panco
