#include <doctest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "panco/estimation.hpp"
#include "panco/units.hpp"

using namespace panco;
namespace u = panco::units;

namespace {

// Synthetic, well-conditioned signatures on a 2 x 200 sample cycle.
SignatureSet synthetic_signatures() {
  SignatureSet sig;
  const long n = 400;
  for (long i = 0; i < n; ++i) {
    const double t = double(i) / n;
    sig.S_Bx.push_back(1e6 * std::sin(u::two_pi * 3.0 * t));
    sig.S_By.push_back(1e6 * std::cos(u::two_pi * 3.0 * t));
    sig.S_Omx.push_back(200.0 * std::sin(u::two_pi * 7.0 * t + 0.3));
    sig.S_Omy.push_back(200.0 * (t - 0.5));
  }
  return sig;
}

MeasuredCycle cycle_from(const SignatureSet& sig, double bx, double by,
                         double ox, double oy, double base0 = 0.0,
                         double base1 = 0.0) {
  MeasuredCycle m;
  m.window_len = sig.size() / 2;
  m.noise_sigma = 1.0;
  for (long i = 0; i < sig.size(); ++i) {
    double v = bx * sig.S_Bx[i] + by * sig.S_By[i] + ox * sig.S_Omx[i] +
               oy * sig.S_Omy[i];
    v += i < m.window_len ? base0 : base1;
    m.truth_x.push_back(v);
    m.samples.push_back(v);
  }
  m.truth_y = m.truth_x;
  return m;
}

}  // namespace

TEST_CASE("noiseless fit recovers the injected channels exactly") {
  const auto sig = synthetic_signatures();
  const double bx = 2.3e-12, by = -0.7e-12;
  const double ox = u::omega_from_uHz(269.0), oy = u::omega_from_uHz(-41.0);
  const auto m = cycle_from(sig, bx, by, ox, oy);

  const auto fit = fit_cycle(m, sig);
  CHECK(fit.Bx == doctest::Approx(bx).epsilon(1e-10));
  CHECK(fit.By == doctest::Approx(by).epsilon(1e-10));
  CHECK(fit.Om_x == doctest::Approx(ox).epsilon(1e-10));
  CHECK(fit.Om_y == doctest::Approx(oy).epsilon(1e-10));
  CHECK(fit.om_x_Hz() == doctest::Approx(269e-6).epsilon(1e-10));
  CHECK(fit.residual_rms < 1e-9);
}

TEST_CASE("per-window baselines are absorbed when requested") {
  const auto sig = synthetic_signatures();
  const double bx = 1e-12, ox = u::omega_from_uHz(100.0);
  const auto m = cycle_from(sig, bx, 0.0, ox, 0.0, 0.05, -0.02);

  const auto fit = fit_cycle(m, sig, true);
  CHECK(fit.Bx == doctest::Approx(bx).epsilon(1e-8));
  CHECK(fit.Om_x == doctest::Approx(ox).epsilon(1e-8));
  REQUIRE(fit.baseline.size() == 2);
  CHECK(fit.baseline[0] == doctest::Approx(0.05).epsilon(1e-8));
  CHECK(fit.baseline[1] == doctest::Approx(-0.02).epsilon(1e-8));
}

TEST_CASE("fit rejects degenerate designs") {
  auto sig = synthetic_signatures();
  sig.S_By = sig.S_Bx;  // collinear columns
  const auto m = cycle_from(synthetic_signatures(), 1e-12, 0, 0, 0);
  CHECK_THROWS_AS(fit_cycle(m, sig), EstimationError);
}

TEST_CASE("reported covariance matches Monte Carlo scatter") {
  const auto sig = synthetic_signatures();
  const double sigma = 0.5;
  auto base = cycle_from(sig, 1e-12, 0.0, u::omega_from_uHz(50.0), 0.0);
  base.noise_sigma = sigma;

  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, sigma);

  const int n_mc = 500;
  double sum_bx = 0.0, sum_bx2 = 0.0, sum_ox = 0.0, sum_ox2 = 0.0;
  Eigen::MatrixXd cov;
  for (int k = 0; k < n_mc; ++k) {
    MeasuredCycle m = base;
    for (auto& v : m.samples) v += gauss(rng);
    const auto fit = fit_cycle(m, sig);
    cov = fit.covariance;
    sum_bx += fit.Bx;
    sum_bx2 += fit.Bx * fit.Bx;
    sum_ox += fit.Om_x;
    sum_ox2 += fit.Om_x * fit.Om_x;
  }
  const double sd_bx =
      std::sqrt(sum_bx2 / n_mc - (sum_bx / n_mc) * (sum_bx / n_mc));
  const double sd_ox =
      std::sqrt(sum_ox2 / n_mc - (sum_ox / n_mc) * (sum_ox / n_mc));

  CHECK(sd_bx == doctest::Approx(std::sqrt(cov(0, 0))).epsilon(0.15));
  CHECK(sd_ox == doctest::Approx(std::sqrt(cov(2, 2))).epsilon(0.15));
}

TEST_CASE("Fisher information is symmetric and positive definite") {
  const auto sig = synthetic_signatures();
  const auto F = fisher_information(sig, 0.5);
  CHECK((F - F.transpose()).norm() == doctest::Approx(0.0));
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(F);
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  // diagonal entries are the column energies over sigma^2
  double e = 0.0;
  for (double v : sig.S_Bx) e += v * v;
  CHECK(F(0, 0) == doctest::Approx(e / 0.25));

  CHECK_THROWS_AS(fisher_information(sig, 0.0), EstimationError);
}

TEST_CASE("orthogonal signatures give the textbook sensitivities") {
  // two-sample orthogonal toy: sensitivity per channel is sigma / |column|
  SignatureSet sig;
  const long n = 256;
  for (long i = 0; i < n; ++i) {
    sig.S_Bx.push_back((i % 2 == 0) ? 3.0 : -3.0);
    sig.S_By.push_back((i % 4 < 2) ? 2.0 : -2.0);
    sig.S_Omx.push_back((i % 8 < 4) ? 5.0 : -5.0);
    sig.S_Omy.push_back((i % 16 < 8) ? 7.0 : -7.0);
  }
  const double sigma = 2.0;
  const auto sens = sensitivities(fisher_information(sig, sigma));
  CHECK(sens(0) == doctest::Approx(sigma / (3.0 * std::sqrt(double(n)))));
  CHECK(sens(1) == doctest::Approx(sigma / (2.0 * std::sqrt(double(n)))));
  CHECK(sens(2) == doctest::Approx(sigma / (5.0 * std::sqrt(double(n)))));
  CHECK(sens(3) == doctest::Approx(sigma / (7.0 * std::sqrt(double(n)))));
}

TEST_CASE("sensitivities reject a singular Fisher matrix") {
  Eigen::Matrix4d F = Eigen::Matrix4d::Zero();
  F(0, 0) = 1.0;
  CHECK_THROWS_AS(sensitivities(F), EstimationError);
}

TEST_CASE("per-root-hertz conversion and suppression arithmetic") {
  // 1e-12 T per cycle of 40 ms -> 1e-12 * sqrt(0.04) T/sqrt(Hz)
  CHECK(per_sqrt_hz(1e-12, 0.04) == doctest::Approx(2e-13));

  // 0.2 uHz/pT cross-talk with the 32.43 MHz/T species suppresses the
  // nuclear response by 162.15
  const double ct = u::crosstalk_from_uHz_per_pT(0.2);
  const double gamma_n = u::gamma_from_MHz_per_T(32.43);
  CHECK(suppression_factor(ct, gamma_n) == doctest::Approx(162.15));
  CHECK_THROWS_AS(suppression_factor(0.0, gamma_n), EstimationError);
}
