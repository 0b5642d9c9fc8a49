// Acceptance checks for the simulator.  Each criterion prints one PASS/FAIL
// line with the measured values; the process exit code is the number of
// failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "panco/estimation.hpp"
#include "panco/scenarios.hpp"

using namespace panco;
using nlohmann::json;
namespace u = panco::units;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s - %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::string out_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("panco_accept_" + tag);
  std::filesystem::remove_all(p);
  return p.string();
}

double rel_rms(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

void criteria_1_to_5() {
  const auto t0 = std::chrono::steady_clock::now();
  json rep;
  try {
    rep = scenario_fig7(default_scenario("fig7"), out_dir("fig7"));
  } catch (const std::exception& e) {
    for (int c = 1; c <= 5; ++c)
      report(c, false, std::string("bias scan failed: ") + e.what());
    return;
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const double cw_bias = rep["cw_optimum"]["bias_nT"].get<double>();
  const double grid_step = 20.0 / 40.0;
  report(1,
         std::abs(cw_bias - 104.5) <= grid_step + 1e-9 && wall < 1800.0,
         fmt("continuous-wave optimum at %.2f nT (expected 104.5 +/- 0.5), "
             "41-point scan over [95,115] nT in %.1f s",
             cw_bias, wall));

  const double p_bias = rep["panco_optimum"]["bias_nT"].get<double>();
  const double ratio = rep["panco_over_cw_optimum"].get<double>();
  report(2, std::abs(p_bias - 106.3) <= 0.5 && ratio >= 0.70 && ratio <= 0.80,
         fmt("pulsed rotational optimum at %.2f nT (expected 106.3 +/- 0.5), "
             "sensitivity ratio to CW optimum %.3f (expected 0.70-0.80)",
             p_bias, ratio));

  const double mag_ratio = rep["magnetic_ratio_at_panco_optimum"].get<double>();
  report(3, mag_ratio >= 3.0 && mag_ratio <= 5.0,
         fmt("magnetic sensitivity at rotational optimum is %.2fx the SERF "
             "reference (expected 4x +/- 25%%)",
             mag_ratio));

  const double ct = rep["crosstalk"]["uHz_per_pT"].get<double>();
  const double ct0 = rep["crosstalk"]["zero_offset_uHz_per_pT"].get<double>();
  report(4, ct >= 0.1 && ct <= 0.4 && ct0 < 1e-3,
         fmt("cross-talk at 0.2 nT offset %.4f uHz/pT (expected 0.2 within "
             "factor 2), zero-offset %.2e uHz/pT (expected < 1e-3)",
             ct, ct0));

  const double supp = suppression_factor(u::crosstalk_from_uHz_per_pT(0.2),
                                         u::gamma_from_MHz_per_T(32.43));
  report(5, std::abs(supp - 162.0) <= 3.0,
         fmt("0.2 uHz/pT converts to suppression %.2f (expected 162 +/- 3)",
             supp));
}

void criterion_6() {
  try {
    const json rep = scenario_fig2(default_scenario("fig2"), out_dir("fig2"));
    double worst = 0.0;
    for (const auto& sp : rep.at("set_points"))
      worst = std::max(worst, sp.at("rotation_residual").get<double>());
    double min_eig = 1e300;
    for (const auto& ev : rep.at("gram_eigenvalues"))
      min_eig = std::min(min_eig, ev.get<double>());
    report(6, worst < 0.01 && min_eig > 0.0,
           fmt("noble set points map onto each other by the pulse rotation "
               "with residual %.4f (expected < 0.01); smallest normalised "
               "Gram eigenvalue %.4f (expected > 0)",
               worst, min_eig));
  } catch (const std::exception& e) {
    report(6, false, std::string("fig2 scenario failed: ") + e.what());
  }
}

void criterion_7() {
  try {
    const json rep =
        scenario_square_wave(default_scenario("square_wave"), out_dir("sq"));
    const double worst = rep.at("worst_step_ratio_at_4s").get<double>();
    report(7, worst < 1.0 / 180.0,
           fmt("rotation-channel response 4 s after a magnetic step is "
               "%.2e of the post-step peak (expected < 1/180 = 5.6e-3)",
               worst));
  } catch (const std::exception& e) {
    report(7, false, std::string("square_wave scenario failed: ") + e.what());
  }
}

void criterion_8() {
  try {
    const json rep = scenario_step_decomposition(
        default_scenario("step_decomposition"), out_dir("step"));
    const double corr =
        rep.at("correlation_S_Bn_vs_Om_signature").get<double>();
    report(8, corr >= 0.999,
           fmt("step-decomposition proxy correlates with the rotational "
               "signature at %.6f (expected >= 0.999)",
               corr));
  } catch (const std::exception& e) {
    report(8, false,
           std::string("step_decomposition scenario failed: ") + e.what());
  }
}

void criterion_9() {
  try {
    const CellConfig cfg = khe_idealised_cell();
    const PulseSchedule sch = khe_schedule();
    ProtocolOptions opt;
    const auto sig =
        generate_signatures(cfg, sch, 1e-13, u::two_pi * 1e-4, opt);

    const double sigma = 1e-6;
    const long n_mc = 1000;
    opt.noise_sigma = sigma;
    opt.seed = 20260823;

    Eigen::Matrix4d F = fisher_information(sig, sigma);
    Eigen::Vector4d pred_var = F.inverse().diagonal();

    // Zero drive: the settled trace is identically zero, so every fitted
    // channel has true value zero and the scatter is pure noise.
    Eigen::MatrixXd samples(n_mc, 4);
    long row = 0;
    run_protocol_stream(cfg, sch, DriveTimeline::none(),
                        n_mc * sch.cycle_duration(), opt,
                        [&](const MeasuredCycle& m) {
                          const FitResult fit = fit_cycle(m, sig, false);
                          samples(row, 0) = fit.Bx;
                          samples(row, 1) = fit.By;
                          samples(row, 2) = fit.Om_x;
                          samples(row, 3) = fit.Om_y;
                          ++row;
                        });

    double worst_var = 0.0, worst_bias = 0.0;
    for (int c = 0; c < 4; ++c) {
      const double mean = samples.col(c).mean();
      const double var =
          (samples.col(c).array() - mean).square().sum() / (n_mc - 1);
      worst_var = std::max(worst_var, std::abs(var / pred_var(c) - 1.0));
      worst_bias = std::max(
          worst_bias, std::abs(mean) / (4.0 * std::sqrt(pred_var(c) / n_mc)));
    }
    report(9, worst_var <= 0.15 && worst_bias <= 1.0,
           fmt("1000 noisy cycles: worst covariance-diagonal deviation %.1f%% "
               "(expected <= 15%%), worst bias %.2f of the 4-sigma/sqrt(N) "
               "allowance (expected <= 1)",
               100.0 * worst_var, worst_bias));
  } catch (const std::exception& e) {
    report(9, false, std::string("Monte-Carlo calibration failed: ") + e.what());
  }
}

void criterion_10() {
  try {
    // (a) norm conservation with all rates off.
    CellConfig cfg = khe_idealised_cell();
    cfg.alkali.R_sd = 0.0;
    cfg.noble.R_sd = 0.0;
    cfg.R_se_en = cfg.R_se_ne = 0.0;
    SpinState s;
    s.Pe = Vec3(0.6, 0.0, 0.8);
    s.Pn = Vec3(0.0, 0.6, 0.8);
    const DriveTimeline drive =
        DriveTimeline::constant_B(Vec3(u::from_nT(5.0), 0.0, 0.0));
    RhsOptions rhs;
    IntegratorOptions io;
    // The oracle asserts at 1e-8 after ~900 rad of precession, so request a
    // truncation error well below that.
    IntegratorOptions tight;
    tight.rtol = 1e-12;
    tight.atol = 1e-15;
    integrate(s, 1.0, drive, cfg, rhs, tight);
    const double norm_drift = std::max(std::abs(s.Pe.norm() - 1.0),
                                       std::abs(s.Pn.norm() - 1.0));

    // (b) analytic Larmor rotation and exponential decay.
    CellConfig iso = khe_idealised_cell();
    iso.alkali.lambda_M = iso.noble.lambda_M = 0.0;
    iso.alkali.R_sd = 0.0;
    iso.noble.R_sd = 0.0;
    iso.bias_z = u::from_nT(100.0);
    SpinState l;
    l.Pe = Vec3(1.0, 0.0, 0.0);
    l.Pn = Vec3(1.0, 0.0, 0.0);
    const double t_rot = 5e-4;
    integrate(l, t_rot, DriveTimeline::none(), iso, rhs, io);
    const Vec3 pe_exp = rotated_z(Vec3(1, 0, 0), iso.alkali.gamma *
                                                     iso.bias_z * t_rot);
    const Vec3 pn_exp = rotated_z(Vec3(1, 0, 0), iso.noble.gamma *
                                                     iso.bias_z * t_rot);
    const double larmor_err =
        std::max((l.Pe - pe_exp).norm(), (l.Pn - pn_exp).norm());

    CellConfig dec = khe_idealised_cell();
    dec.alkali.lambda_M = dec.noble.lambda_M = 0.0;
    dec.bias_z = 0.0;
    dec.alkali.R_sd = 50.0;
    dec.noble.R_sd = 2.0;
    SpinState d;
    d.Pe = Vec3(0.0, 0.0, 0.9);
    d.Pn = Vec3(0.0, 0.0, 0.9);
    integrate(d, 0.05, DriveTimeline::none(), dec, rhs, io);
    const double decay_err = std::max(
        std::abs(d.Pe.z() / (0.9 * std::exp(-50.0 * 0.05)) - 1.0),
        std::abs(d.Pn.z() / (0.9 * std::exp(-2.0 * 0.05)) - 1.0));

    // (c) symmetry-mapped signatures against a direct y-drive run.
    const CellConfig op = khe_idealised_cell();
    const PulseSchedule sch = khe_schedule();
    ProtocolOptions opt;
    const double eps_B = 1e-13;
    const auto sig = generate_signatures(op, sch, eps_B, u::two_pi * 1e-4, opt);
    const auto run_y = run_protocol(
        op, sch, DriveTimeline::constant_B(Vec3(0.0, eps_B, 0.0)),
        sch.settle_time, opt, 1);
    std::vector<double> s_by_direct(run_y.cycles[0].truth_x.size());
    for (size_t i = 0; i < s_by_direct.size(); ++i)
      s_by_direct[i] = run_y.cycles[0].truth_x[i] / eps_B;
    const double sym_err = rel_rms(sig.S_By, s_by_direct);

    report(10,
           norm_drift < 1e-8 && larmor_err < 1e-8 && decay_err < 1e-8 &&
               sym_err < 1e-6,
           fmt("norm drift %.1e (expected < 1e-8); analytic rotation/decay "
               "errors %.1e (expected < 1e-8); symmetry-mapped signature vs "
               "direct y-drive relative RMS %.1e (expected < 1e-6)",
               norm_drift, std::max(larmor_err, decay_err), sym_err));
  } catch (const std::exception& e) {
    report(10, false, std::string("dynamics oracles failed: ") + e.what());
  }
}

}  // namespace

int main() {
  criteria_1_to_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures;
}
