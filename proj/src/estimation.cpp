#include "panco/estimation.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "panco/util.hpp"

namespace panco {

using namespace units;

namespace {

Eigen::MatrixXd design_matrix(const SignatureSet& sig, long window_len,
                              bool with_baseline) {
  const long n = sig.size();
  const int p = with_baseline ? 6 : 4;
  Eigen::MatrixXd g(n, p);
  for (long i = 0; i < n; ++i) {
    g(i, 0) = sig.S_Bx[i];
    g(i, 1) = sig.S_By[i];
    g(i, 2) = sig.S_Omx[i];
    g(i, 3) = sig.S_Omy[i];
    if (with_baseline) {
      g(i, 4) = i < window_len ? 1.0 : 0.0;
      g(i, 5) = i < window_len ? 0.0 : 1.0;
    }
  }
  return g;
}

}  // namespace

FitResult fit_cycle(const MeasuredCycle& m, const SignatureSet& sig,
                    bool with_baseline) {
  sig.validate();
  if (static_cast<long>(m.samples.size()) != sig.size())
    throw EstimationError("measured cycle and signatures have different grids");

  const Eigen::MatrixXd g =
      design_matrix(sig, m.window_len, with_baseline);
  const long n = g.rows();
  const int p = static_cast<int>(g.cols());

  // Column scaling keeps the solve well conditioned despite the very
  // different physical units of the columns.
  Eigen::VectorXd norms(p);
  for (int j = 0; j < p; ++j) {
    norms(j) = g.col(j).norm();
    if (norms(j) == 0.0)
      throw EstimationError("degenerate signatures: zero design column");
  }
  const Eigen::MatrixXd gs = g * norms.cwiseInverse().asDiagonal();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      gs, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double cond =
      svd.singularValues()(0) / svd.singularValues()(p - 1);
  if (!(cond * cond < kDegenerateConditionLimit)) {
    std::ostringstream os;
    os << "degenerate signatures: design condition " << cond * cond;
    throw EstimationError(os.str());
  }

  const Eigen::VectorXd y =
      Eigen::Map<const Eigen::VectorXd>(m.samples.data(), n);
  const Eigen::VectorXd beta =
      norms.cwiseInverse().asDiagonal() * svd.solve(y);

  FitResult fit;
  fit.Bx = beta(0);
  fit.By = beta(1);
  fit.Om_x = beta(2);
  fit.Om_y = beta(3);
  if (with_baseline) fit.baseline = {beta(4), beta(5)};
  fit.residual_rms = (y - g * beta).norm() / std::sqrt(double(n));

  // covariance = sigma^2 (G^T G)^-1, via the scaled inverse.
  const Eigen::MatrixXd gram_inv_scaled =
      (gs.transpose() * gs).inverse();
  fit.covariance = m.noise_sigma * m.noise_sigma *
                   norms.cwiseInverse().asDiagonal() * gram_inv_scaled *
                   norms.cwiseInverse().asDiagonal();
  return fit;
}

Eigen::Matrix4d fisher_information(const SignatureSet& sig,
                                   double noise_sigma) {
  sig.validate();
  if (!(noise_sigma > 0.0))
    throw EstimationError("fisher_information requires noise_sigma > 0");
  const long n = sig.size();
  const std::vector<double>* cols[4] = {&sig.S_Bx, &sig.S_By, &sig.S_Omx,
                                        &sig.S_Omy};
  Eigen::Matrix4d f;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      double s = 0.0;
      for (long k = 0; k < n; ++k) s += (*cols[i])[k] * (*cols[j])[k];
      f(i, j) = f(j, i) = s / (noise_sigma * noise_sigma);
    }
  return f;
}

Eigen::Vector4d sensitivities(const Eigen::Matrix4d& F) {
  // The channels carry different units (tesla vs rad/s), so conditioning is
  // judged on the correlation matrix, which is scale invariant.
  const Eigen::Vector4d d = F.diagonal();
  if (!(d.minCoeff() > 0.0))
    throw EstimationError("singular Fisher matrix: zero-power channel");
  const Eigen::Vector4d s = d.cwiseSqrt().cwiseInverse();
  const Eigen::Matrix4d corr = s.asDiagonal() * F * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(corr);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kDegenerateConditionLimit)
    throw EstimationError("singular Fisher matrix: degenerate signatures");
  const Eigen::Matrix4d cov =
      s.asDiagonal() * corr.inverse() * s.asDiagonal();
  return cov.diagonal().cwiseSqrt();
}

std::vector<SensitivityReport> bias_scan(const CellConfig& cfg,
                                         const PulseSchedule& sch,
                                         const std::vector<double>& bias_list,
                                         const BiasScanOptions& opt) {
  if (bias_list.empty()) throw EstimationError("bias_list must be non-empty");

  const long n_samples = sch.samples_per_cycle();
  const double sigma = opt.noise_sigma;

  // SERF reference is bias independent: one run.
  const double serf_slope =
      run_serf_reference(cfg, opt.r_p_cw, opt.eps_B, 2.0, opt.protocol);
  const double serf_sens =
      sigma / (std::sqrt(double(n_samples)) * std::abs(serf_slope));

  std::vector<SensitivityReport> out(bias_list.size());
  parallel_for(static_cast<long>(bias_list.size()), opt.workers, [&](long i) {
    SensitivityReport rep;
    rep.bias_z = bias_list[i];
    rep.serf_B_sens = serf_sens;

    CellConfig c = cfg;
    c.bias_z = bias_list[i];

    try {
      const auto sig =
          generate_signatures(c, sch, opt.eps_B, opt.eps_Om, opt.protocol);
      rep.gram_condition = sig.meta.at("gram_condition").get<double>();
      const auto sens = sensitivities(fisher_information(sig, sigma));
      rep.sens_Bx = sens(0);
      rep.sens_By = sens(1);
      rep.sens_Om_x = sens(2);
      rep.sens_Om_y = sens(3);
    } catch (const std::runtime_error& e) {
      rep.degenerate = true;
      rep.error = e.what();
    }

    try {
      // The probe reads Pe_x; for a CW scheme its DC rotational response is
      // to the y axis (the x-axis response cancels at the compensation
      // point), so the reference drive is applied along y.
      const auto drive =
          DriveTimeline::constant_Omega(Vec3(0.0, opt.eps_Om, 0.0));
      const double s_om =
          run_cw_scc(c, drive, opt.r_p_cw, opt.cw_duration, opt.protocol) /
          opt.eps_Om;
      rep.cw_om_sens =
          sigma / (std::sqrt(double(n_samples)) * std::abs(s_om));
    } catch (const std::runtime_error& e) {
      rep.cw_om_sens = std::numeric_limits<double>::quiet_NaN();
      if (rep.error.empty()) rep.error = e.what();
    }

    out[i] = rep;
  });
  return out;
}

double crosstalk(const CellConfig& cfg, const PulseSchedule& sch,
                 const SignatureSet& sig_nominal, double bias_actual,
                 double B_probe, const ProtocolOptions& opt) {
  if (!(B_probe > 0.0)) throw EstimationError("B_probe must be > 0");
  CellConfig c = cfg;
  c.bias_z = bias_actual;

  const double cycle = sch.cycle_duration();
  const long n_cycles = std::max<long>(
      2, static_cast<long>(std::ceil(sch.settle_time / cycle - 1e-9)));
  const auto drive = DriveTimeline::constant_B(Vec3(B_probe, 0.0, 0.0));
  auto res = run_protocol(c, sch, drive, n_cycles * cycle, opt, 1);

  auto cycle_copy = res.cycles.back();
  const auto fit = fit_cycle(cycle_copy, sig_nominal, false);
  return fit.om_x_Hz() / B_probe;
}

double suppression_factor(double crosstalk_hz_per_tesla, double gamma_n) {
  if (!(crosstalk_hz_per_tesla > 0.0))
    throw EstimationError("suppression_factor requires crosstalk > 0");
  return (gamma_n / two_pi) / crosstalk_hz_per_tesla;
}

}  // namespace panco
