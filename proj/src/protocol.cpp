#include "panco/protocol.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "panco/io.hpp"

namespace panco {

using nlohmann::json;
using namespace units;

long PulseSchedule::samples_per_window() const {
  return static_cast<long>(
      std::floor(sample_rate * (tau - pump_duration) + 1e-9));
}

void PulseSchedule::validate() const {
  if (!(tau > 0.0) || !(pump_duration >= 0.0) || pump_duration >= tau)
    throw ProtocolError("schedule requires 0 <= pump_duration < tau");
  if (std::abs(pulse_area) > pi + 1e-12)
    throw ProtocolError("|pulse_area| must be <= pi");
  if (!(sample_rate > 0.0)) throw ProtocolError("sample_rate must be > 0");
  if (samples_per_window() < 16)
    throw ProtocolError("need at least 16 samples per window");
  if (pulse_mode == PulseMode::Finite && pulse_duration > pump_duration)
    throw ProtocolError("finite pulse_duration must not exceed pump_duration");
  if (!(p_sat > 0.0 && p_sat <= 1.0))
    throw ProtocolError("p_sat must be in (0, 1]");
  if (!(settle_time > 0.0)) throw ProtocolError("settle_time must be > 0");
}

json schedule_to_json(const PulseSchedule& s) {
  return json{{"tau_ms", to_ms(s.tau)},
              {"pump_ms", to_ms(s.pump_duration)},
              {"pulse_area_rad", s.pulse_area},
              {"pulse_mode",
               s.pulse_mode == PulseMode::Impulse ? "impulse" : "finite"},
              {"pulse_ms", to_ms(s.pulse_duration)},
              {"sample_rate_kSps", rate_to_kSps(s.sample_rate)},
              {"p_sat", s.p_sat},
              {"settle_s", s.settle_time}};
}

PulseSchedule schedule_from_json(const json& j) {
  PulseSchedule s;
  s.tau = from_ms(j.at("tau_ms").get<double>());
  s.pump_duration = from_ms(j.at("pump_ms").get<double>());
  s.pulse_area = j.at("pulse_area_rad").get<double>();
  const auto mode = j.at("pulse_mode").get<std::string>();
  if (mode == "impulse")
    s.pulse_mode = PulseMode::Impulse;
  else if (mode == "finite")
    s.pulse_mode = PulseMode::Finite;
  else
    throw ProtocolError("unknown pulse_mode: " + mode);
  if (j.contains("pulse_ms")) s.pulse_duration = from_ms(j.at("pulse_ms").get<double>());
  s.sample_rate = rate_from_kSps(j.at("sample_rate_kSps").get<double>());
  if (j.contains("p_sat")) s.p_sat = j.at("p_sat").get<double>();
  if (j.contains("settle_s")) s.settle_time = j.at("settle_s").get<double>();
  s.validate();
  return s;
}

void SignatureSet::validate() const {
  const auto n = S_Bx.size();
  if (n == 0 || S_By.size() != n || S_Omx.size() != n || S_Omy.size() != n)
    throw ProtocolError("signature arrays must be non-empty and equal length");
}

SpinState run_protocol_stream(const CellConfig& cfg, const PulseSchedule& sch,
                              const DriveTimeline& drive, double duration,
                              const ProtocolOptions& opt,
                              const CycleCallback& on_cycle, SpinState init) {
  cfg.validate();
  sch.validate();
  const long n_cycles =
      static_cast<long>(std::floor(duration / sch.cycle_duration() + 1e-9));
  if (n_cycles < 1)
    throw ProtocolError("duration must cover at least one full cycle (2 tau)");

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const long nw = sch.samples_per_window();
  SpinState state = init;

  MeasuredCycle cyc;
  cyc.window_len = nw;
  cyc.noise_sigma = opt.noise_sigma;

  const double pulse_len =
      sch.pulse_duration > 0.0 ? sch.pulse_duration : sch.pump_duration;

  for (long c = 0; c < n_cycles; ++c) {
    cyc.index = c;
    cyc.t_start = state.t;
    cyc.truth_x.assign(2 * nw, 0.0);
    cyc.truth_y.assign(2 * nw, 0.0);
    cyc.pn_x.assign(2 * nw, 0.0);
    cyc.pn_y.assign(2 * nw, 0.0);

    for (int w = 0; w < 2; ++w) {
      const double sign = (w == 0) ? -1.0 : 1.0;
      const double t0 = state.t;

      if (sch.pulse_mode == PulseMode::Impulse) {
        apply_magnetic_pulse(state, sign * sch.pulse_area, PulseMode::Impulse,
                             cfg, 0.0, sch.p_sat);
        // Pump pinning: Pe held on the pump axis while Pn evolves.
        RhsOptions pinned;
        pinned.pin_pe = true;
        integrate(state, t0 + sch.pump_duration, drive, cfg, pinned,
                  opt.integ);
      } else {
        RhsOptions pumped;
        pumped.pump_on = true;
        pumped.pulse_field_z =
            sign * sch.pulse_area / (cfg.noble.gamma * pulse_len);
        integrate(state, t0 + pulse_len, drive, cfg, pumped, opt.integ);
        pumped.pulse_field_z = 0.0;
        integrate(state, t0 + sch.pump_duration, drive, cfg, pumped,
                  opt.integ);
      }

      Sampler sp;
      sp.t0 = t0 + sch.pump_duration;
      sp.rate = sch.sample_rate;
      sp.n = nw;
      double* tx = cyc.truth_x.data() + w * nw;
      double* ty = cyc.truth_y.data() + w * nw;
      double* nx = cyc.pn_x.data() + w * nw;
      double* ny = cyc.pn_y.data() + w * nw;
      sp.emit = [tx, ty, nx, ny](long k, double, const Vec3& Pe,
                                 const Vec3& Pn) {
        tx[k] = Pe.x();
        ty[k] = Pe.y();
        nx[k] = Pn.x();
        ny[k] = Pn.y();
      };
      RhsOptions free_opt;
      integrate(state, t0 + sch.tau, drive, cfg, free_opt, opt.integ, &sp);
      if (sp.next != nw)
        throw ProtocolError("internal: sample grid not filled");
    }

    if (opt.noise_sigma > 0.0) {
      cyc.samples.resize(2 * nw);
      for (long i = 0; i < 2 * nw; ++i)
        cyc.samples[i] = cyc.truth_x[i] + opt.noise_sigma * gauss(rng);
    } else {
      cyc.samples = cyc.truth_x;
    }
    if (on_cycle) on_cycle(cyc);
  }
  return state;
}

ProtocolResult run_protocol(const CellConfig& cfg, const PulseSchedule& sch,
                            const DriveTimeline& drive, double duration,
                            const ProtocolOptions& opt, long keep_last,
                            SpinState init) {
  ProtocolResult res;
  res.final_state = run_protocol_stream(
      cfg, sch, drive, duration, opt,
      [&](const MeasuredCycle& c) {
        res.cycles.push_back(c);
        if (keep_last >= 0 &&
            res.cycles.size() > static_cast<size_t>(keep_last))
          res.cycles.erase(res.cycles.begin());
      },
      init);
  return res;
}

namespace {

double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / std::max<size_t>(v.size(), 1));
}

double cycle_discrepancy(const MeasuredCycle& a, const MeasuredCycle& b) {
  std::vector<double> d(a.truth_x.size());
  for (size_t i = 0; i < d.size(); ++i) d[i] = a.truth_x[i] - b.truth_x[i];
  const double scale = rms(b.truth_x);
  return rms(d) / (scale > 0.0 ? scale : 1.0);
}

}  // namespace

SpinState settle(const CellConfig& cfg, const PulseSchedule& sch,
                 const DriveTimeline& drive, const ProtocolOptions& opt,
                 SpinState init, double* discrepancy) {
  const double cycle = sch.cycle_duration();
  const long n_cycles =
      std::max<long>(2, static_cast<long>(std::ceil(sch.settle_time / cycle - 1e-9)));
  auto res =
      run_protocol(cfg, sch, drive, n_cycles * cycle, opt, 2, init);
  const double disc = cycle_discrepancy(res.cycles[0], res.cycles[1]);
  if (discrepancy) *discrepancy = disc;
  if (disc > opt.settle_threshold) {
    std::ostringstream os;
    os << "settle: consecutive cycles differ by relative RMS " << disc
       << " (threshold " << opt.settle_threshold << ") after "
       << sch.settle_time << " s";
    throw ProtocolError(os.str());
  }
  return res.final_state;
}

std::vector<double> symmetry_map(const std::vector<double>& pe_y_from_x_drive,
                                 double eps) {
  std::vector<double> out(pe_y_from_x_drive.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = -pe_y_from_x_drive[i] / eps;
  return out;
}

namespace {

// Condition number of the Gram matrix of the unit-normalised signatures.
double normalised_gram_condition(const SignatureSet& sig) {
  const long n = sig.size();
  const std::vector<double>* cols[4] = {&sig.S_Bx, &sig.S_By, &sig.S_Omx,
                                        &sig.S_Omy};
  Eigen::Matrix4d gram;
  double norms[4];
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (long k = 0; k < n; ++k) s += (*cols[i])[k] * (*cols[i])[k];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) return std::numeric_limits<double>::infinity();
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (long k = 0; k < n; ++k) s += (*cols[i])[k] * (*cols[j])[k];
      gram(i, j) = s / (norms[i] * norms[j]);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(gram);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace

SignatureSet generate_signatures(const CellConfig& cfg,
                                 const PulseSchedule& sch, double eps_B,
                                 double eps_Om, const ProtocolOptions& opt) {
  if (!(eps_B > 0.0 && eps_Om > 0.0))
    throw ProtocolError("signature drives must be > 0");

  const double cycle = sch.cycle_duration();
  const long n_cycles = std::max<long>(
      2, static_cast<long>(std::ceil(sch.settle_time / cycle - 1e-9)));
  const double duration = n_cycles * cycle;

  auto settled_cycle = [&](const DriveTimeline& drive, double* disc) {
    auto res = run_protocol(cfg, sch, drive, duration, opt, 2);
    *disc = cycle_discrepancy(res.cycles[0], res.cycles[1]);
    if (*disc > opt.settle_threshold) {
      std::ostringstream os;
      os << "generate_signatures: drive run not settled (relative RMS " << *disc
         << " after " << sch.settle_time << " s)";
      throw ProtocolError(os.str());
    }
    return res.cycles[1];
  };

  double disc_b = 0.0, disc_om = 0.0;
  const auto cyc_b =
      settled_cycle(DriveTimeline::constant_B(Vec3(eps_B, 0.0, 0.0)), &disc_b);
  const auto cyc_om = settled_cycle(
      DriveTimeline::constant_Omega(Vec3(eps_Om, 0.0, 0.0)), &disc_om);

  SignatureSet sig;
  const long n = sch.samples_per_cycle();
  sig.S_Bx.resize(n);
  sig.S_Omx.resize(n);
  for (long i = 0; i < n; ++i) {
    sig.S_Bx[i] = cyc_b.truth_x[i] / eps_B;
    sig.S_Omx[i] = cyc_om.truth_x[i] / eps_Om;
  }
  sig.S_By = symmetry_map(cyc_b.truth_y, eps_B);
  sig.S_Omy = symmetry_map(cyc_om.truth_y, eps_Om);

  const double cond = normalised_gram_condition(sig);
  sig.meta = json{{"cell", cell_to_json(cfg)},
                  {"schedule", schedule_to_json(sch)},
                  {"bias_nT", to_nT(cfg.bias_z)},
                  {"eps_B_nT", to_nT(eps_B)},
                  {"eps_Om_uHz", omega_to_uHz(eps_Om)},
                  {"settle_s", sch.settle_time},
                  {"settle_discrepancy_B", disc_b},
                  {"settle_discrepancy_Om", disc_om},
                  {"gram_condition", cond}};
  if (!(cond < kDegenerateConditionLimit)) {
    std::ostringstream os;
    os << "signatures are degenerate: normalised Gram condition " << cond
       << " at bias " << to_nT(cfg.bias_z) << " nT";
    throw DegenerateSignatureError(os.str());
  }
  return sig;
}

void SignatureSet::write(const std::string& csv_path,
                         const std::string& meta_path) const {
  validate();
  CsvWriter csv(csv_path, {"t", "S_Bx", "S_By", "S_Omx", "S_Omy"});
  PulseSchedule sch;
  bool have_sch = meta.contains("schedule");
  if (have_sch) sch = schedule_from_json(meta.at("schedule"));
  const long nw = have_sch ? sch.samples_per_window() : 0;
  for (long i = 0; i < size(); ++i) {
    double t = static_cast<double>(i);
    if (have_sch) {
      const long w = i / nw, k = i % nw;
      t = w * sch.tau + sch.pump_duration + double(k) / sch.sample_rate;
    }
    csv.row({t, S_Bx[i], S_By[i], S_Omx[i], S_Omy[i]});
  }
  write_json_file(meta_path, meta);
}

SignatureSet SignatureSet::read(const std::string& csv_path,
                                const std::string& meta_path) {
  SignatureSet sig;
  CsvTable tab = CsvTable::read(csv_path);
  const int bx = tab.column_index("S_Bx"), by = tab.column_index("S_By"),
            ox = tab.column_index("S_Omx"), oy = tab.column_index("S_Omy");
  for (const auto& row : tab.rows) {
    sig.S_Bx.push_back(row[bx]);
    sig.S_By.push_back(row[by]);
    sig.S_Omx.push_back(row[ox]);
    sig.S_Omy.push_back(row[oy]);
  }
  sig.meta = read_json_file(meta_path);
  sig.validate();
  return sig;
}

double run_cw_scc(const CellConfig& cfg, const DriveTimeline& drive,
                  double r_p, double duration, const ProtocolOptions& opt) {
  CellConfig cw = cfg;
  cw.R_p_on = r_p;
  cw.validate();

  SpinState s;
  const double pz = r_p > 0.0 ? r_p / (r_p + cfg.alkali.R_sd) : 0.0;
  s.Pe = Vec3(0.0, 0.0, pz);
  s.Pn = Vec3(0.0, 0.0, 1.0);

  RhsOptions ro;
  ro.pump_on = true;
  const double probe_gap = std::max(0.04, 0.01 * duration);
  integrate(s, duration - probe_gap, drive, cw, ro, opt.integ);
  const double pe_x_before = s.Pe.x();
  integrate(s, duration, drive, cw, ro, opt.integ);
  const double pe_x = s.Pe.x();
  const double scale = std::max(std::abs(pe_x), 1e-300);
  if (std::abs(pe_x - pe_x_before) > 1e-4 * scale + 1e-15)
    throw ProtocolError("run_cw_scc: response not converged to DC steady state");
  return pe_x;
}

double run_serf_reference(const CellConfig& cfg, double r_p, double eps_B,
                          double duration, const ProtocolOptions& opt) {
  CellConfig serf = cfg;
  serf.noble.lambda_M = 0.0;
  serf.R_se_en = 0.0;
  serf.R_se_ne = 0.0;
  serf.bias_z = 0.0;
  serf.R_p_on = r_p;
  serf.validate();

  SpinState s;
  s.Pe = Vec3(0.0, 0.0, r_p / (r_p + cfg.alkali.R_sd));
  s.Pn = Vec3::Zero();

  // Pe_x is the probe projection; its linear response at zero bias is to
  // the y-axis field, so the reference drive is applied along y.
  const auto drive = DriveTimeline::constant_B(Vec3(0.0, eps_B, 0.0));
  RhsOptions ro;
  ro.pump_on = true;
  integrate(s, duration, drive, serf, ro, opt.integ);
  return s.Pe.x() / eps_B;
}

}  // namespace panco
