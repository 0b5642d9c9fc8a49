#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panco/protocol.hpp"

namespace panco {

struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-cycle least-squares extraction of the four channels.
struct FitResult {
  double Bx = 0.0, By = 0.0;      // tesla
  double Om_x = 0.0, Om_y = 0.0;  // rad/s
  std::vector<double> baseline;   // per-window constants when fitted
  double residual_rms = 0.0;
  Eigen::MatrixXd covariance;  // 4x4, or 6x6 with baselines

  double om_x_Hz() const { return Om_x / units::two_pi; }
  double om_y_Hz() const { return Om_y / units::two_pi; }
};

// Ordinary least squares of m.samples against the four signature columns
// (plus two per-window constants when with_baseline).  Coefficients come
// out in physical units because the signatures are per-unit-drive.
FitResult fit_cycle(const MeasuredCycle& m, const SignatureSet& sig,
                    bool with_baseline = false);

// F_ij = (1/sigma^2) sum_t S_i(t) S_j(t); order (Bx, By, Om_x, Om_y).
Eigen::Matrix4d fisher_information(const SignatureSet& sig,
                                   double noise_sigma);

// sqrt(diag(F^-1)): per-cycle 1-sigma resolution per channel.
// Throws EstimationError on a singular/indefinite Fisher matrix.
Eigen::Vector4d sensitivities(const Eigen::Matrix4d& F);

// Multiply per-cycle sensitivities by sqrt(cycle duration) to express them
// per sqrt(Hz).
inline double per_sqrt_hz(double per_cycle, double cycle_duration) {
  return per_cycle * std::sqrt(cycle_duration);
}

struct SensitivityReport {
  double bias_z = 0.0;  // tesla, signed applied bias
  bool degenerate = false;
  std::string error;  // reason when degenerate
  double sens_Bx = 0.0, sens_By = 0.0;      // tesla per cycle
  double sens_Om_x = 0.0, sens_Om_y = 0.0;  // rad/s per cycle
  double cw_om_sens = 0.0;   // CW-SCC rotational reference, rad/s per cycle
  double serf_B_sens = 0.0;  // SERF magnetic reference, tesla per cycle
  double gram_condition = 0.0;
};

struct BiasScanOptions {
  double noise_sigma = 1.0;  // per-sample white noise
  double eps_B = 1e-13;      // tesla (1e-4 nT)
  double eps_Om = units::two_pi * 1e-4;  // rad/s (1e-4 Hz)
  double r_p_cw = 50.0;      // CW pump rate, 1/s
  double cw_duration = 40.0;  // s
  int workers = 1;
  ProtocolOptions protocol;
};

// For each signed bias value: settle, generate signatures, Fisher analysis,
// plus CW-SCC and SERF references computed with the identical covariance
// procedure over one cycle of samples.  Degenerate points are marked, not
// fatal.
std::vector<SensitivityReport> bias_scan(const CellConfig& cfg,
                                         const PulseSchedule& sch,
                                         const std::vector<double>& bias_list,
                                         const BiasScanOptions& opt = {});

// Apparent rotation per unit DC transverse field when fitting with
// signatures from a different (nominal) operating point.  Returns the
// fitted Om_x in Hz-equivalent per tesla of applied B_x (signed).
double crosstalk(const CellConfig& cfg, const PulseSchedule& sch,
                 const SignatureSet& sig_nominal, double bias_actual,
                 double B_probe = 1e-12, const ProtocolOptions& opt = {});

// Suppression relative to an unsuppressed nuclear species:
// (gamma_n / 2pi) / crosstalk, with crosstalk in Hz/T.
double suppression_factor(double crosstalk_hz_per_tesla, double gamma_n);

}  // namespace panco
