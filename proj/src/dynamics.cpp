#include "panco/dynamics.hpp"

#include <cassert>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "panco/units.hpp"

namespace panco {

void bloch_rhs(const SpinState& s, const DriveTimeline& drive,
               const CellConfig& cfg, const RhsOptions& opt, Vec3& dPe,
               Vec3& dPn) {
  const Vec3 B_applied =
      drive.B_at(s.t) +
      Vec3(0.0, 0.0, cfg.bias_z + opt.pulse_field_z);
  const Vec3 omega = double(cfg.rotation_sign) * drive.Omega_at(s.t);

  const Vec3 B_e = B_applied + cfg.noble.lambda_M * s.Pn;
  const Vec3 B_n = B_applied + cfg.alkali.lambda_M * s.Pe;

  if (opt.pin_pe) {
    dPe.setZero();
  } else {
    const double q = slowing_down_factor(s.Pe, cfg.q_model);
    Vec3 bracket = cfg.alkali.gamma * B_e.cross(s.Pe) +
                   cfg.R_se_ne * s.Pn -
                   (cfg.alkali.R_sd + cfg.R_se_en) * s.Pe;
    if (opt.pump_on) bracket += cfg.R_p_on * (cfg.pump_axis - s.Pe);
    dPe = bracket / q + omega.cross(s.Pe);
  }
  dPn = cfg.noble.gamma * B_n.cross(s.Pn) + omega.cross(s.Pn) +
        cfg.R_se_en * s.Pe - (cfg.R_se_ne + cfg.noble.R_sd) * s.Pn;

  assert(dPe.allFinite() && dPn.allFinite());
}

namespace {

constexpr int kDim = 6;

struct System {
  const DriveTimeline* drive;
  const CellConfig* cfg;
  const RhsOptions* opt;

  void operator()(double t, const double y[kDim], double dy[kDim]) const {
    SpinState s;
    s.Pe = Vec3(y[0], y[1], y[2]);
    s.Pn = Vec3(y[3], y[4], y[5]);
    s.t = t;
    Vec3 dPe, dPn;
    bloch_rhs(s, *drive, *cfg, *opt, dPe, dPn);
    dy[0] = dPe.x(); dy[1] = dPe.y(); dy[2] = dPe.z();
    dy[3] = dPn.x(); dy[4] = dPn.y(); dy[5] = dPn.z();
  }
};

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                 a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// Error estimate coefficients: y5 - y4 = h * sum(e_i * k_i).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense-output coefficients (Hairer & Wanner).
constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;

struct DenseStep {
  double t, h;
  double rcont[5][kDim];

  void eval(double ts, double y[kDim]) const {
    const double th = (ts - t) / h;
    const double th1 = 1.0 - th;
    for (int i = 0; i < kDim; ++i)
      y[i] = rcont[0][i] +
             th * (rcont[1][i] +
                   th1 * (rcont[2][i] +
                          th * (rcont[3][i] + th1 * rcont[4][i])));
  }
};

void emit_samples(Sampler& sp, const DenseStep& ds, double t_end,
                  const double y_end[kDim]) {
  const double eps = 1e-9 / std::max(sp.rate, 1.0);
  while (sp.next < sp.n) {
    const double tk = sp.t0 + double(sp.next) / sp.rate;
    if (tk > t_end + eps) break;
    double y[kDim];
    if (std::abs(tk - t_end) <= eps) {
      for (int i = 0; i < kDim; ++i) y[i] = y_end[i];
    } else {
      ds.eval(tk, y);
    }
    sp.emit(sp.next, tk, Vec3(y[0], y[1], y[2]), Vec3(y[3], y[4], y[5]));
    ++sp.next;
  }
}

std::string state_string(double t, const double y[kDim]) {
  std::ostringstream os;
  os << "t=" << t << " Pe=(" << y[0] << "," << y[1] << "," << y[2]
     << ") Pn=(" << y[3] << "," << y[4] << "," << y[5] << ")";
  return os.str();
}

}  // namespace

void integrate_segment(SpinState& s, double t1, const DriveTimeline& drive,
                       const CellConfig& cfg, const RhsOptions& opt,
                       const IntegratorOptions& io, Sampler* sampler) {
  if (t1 < s.t) throw IntegrationError("integrate_segment: t1 < t0");

  double y[kDim] = {s.Pe.x(), s.Pe.y(), s.Pe.z(),
                    s.Pn.x(), s.Pn.y(), s.Pn.z()};
  double t = s.t;
  System sys{&drive, &cfg, &opt};

  // Emit any samples that fall at or before the segment start.
  if (sampler && sampler->emit) {
    const double eps = 1e-9 / std::max(sampler->rate, 1.0);
    while (sampler->next < sampler->n) {
      const double tk = sampler->t0 + double(sampler->next) / sampler->rate;
      if (tk > t + eps) break;
      sampler->emit(sampler->next, tk, Vec3(y[0], y[1], y[2]),
                    Vec3(y[3], y[4], y[5]));
      ++sampler->next;
    }
  }
  // Segments shorter than the step-size floor (ulp-scale slivers between a
  // drive discontinuity and a window boundary) are treated as time jumps.
  if (t1 - t < 2e-14 * std::max(1.0, std::abs(t1))) {
    s.t = t1;
    return;
  }

  double k1[kDim], k2[kDim], k3[kDim], k4[kDim], k5[kDim], k6[kDim], k7[kDim];
  double yt[kDim], ynew[kDim];
  sys(t, y, k1);

  double h = std::min({io.h_init, io.h_max, t1 - t});

  while (t < t1) {
    if (t + h > t1) h = t1 - t;
    const double h_floor = 1e-14 * std::max(1.0, std::abs(t));
    if (h < h_floor)
      throw IntegrationError("step-size underflow at " + state_string(t, y));

    for (int i = 0; i < kDim; ++i) yt[i] = y[i] + h * a21 * k1[i];
    sys(t + c2 * h, yt, k2);
    for (int i = 0; i < kDim; ++i)
      yt[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    sys(t + c3 * h, yt, k3);
    for (int i = 0; i < kDim; ++i)
      yt[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    sys(t + c4 * h, yt, k4);
    for (int i = 0; i < kDim; ++i)
      yt[i] = y[i] +
              h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    sys(t + c5 * h, yt, k5);
    for (int i = 0; i < kDim; ++i)
      yt[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] +
                          a64 * k4[i] + a65 * k5[i]);
    sys(t + h, yt, k6);
    for (int i = 0; i < kDim; ++i)
      ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] +
                            a75 * k5[i] + a76 * k6[i]);
    sys(t + h, ynew, k7);

    double err2 = 0.0;
    for (int i = 0; i < kDim; ++i) {
      const double ei = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] +
                             e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sk =
          io.atol + io.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err2 += (ei / sk) * (ei / sk);
    }
    const double err = std::sqrt(err2 / kDim);

    if (err <= 1.0) {
      for (int i = 0; i < kDim; ++i)
        if (!std::isfinite(ynew[i]))
          throw IntegrationError("non-finite state at " +
                                 state_string(t + h, ynew));

      if (sampler && sampler->emit && sampler->next < sampler->n) {
        DenseStep ds;
        ds.t = t;
        ds.h = h;
        for (int i = 0; i < kDim; ++i) {
          const double dy = ynew[i] - y[i];
          ds.rcont[0][i] = y[i];
          ds.rcont[1][i] = dy;
          ds.rcont[2][i] = h * k1[i] - dy;
          ds.rcont[3][i] = dy - h * k7[i] - ds.rcont[2][i];
          ds.rcont[4][i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] +
                                d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
        }
        emit_samples(*sampler, ds, t + h, ynew);
      }

      t += h;
      for (int i = 0; i < kDim; ++i) {
        y[i] = ynew[i];
        k1[i] = k7[i];  // FSAL
      }
      const double fac =
          std::min(5.0, std::max(0.2, 0.9 * std::pow(err, -0.2)));
      h = std::min(h * fac, io.h_max);
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
  }

  s.Pe = Vec3(y[0], y[1], y[2]);
  s.Pn = Vec3(y[3], y[4], y[5]);
  s.t = t1;
}

void integrate(SpinState& s, double t1, const DriveTimeline& drive,
               const CellConfig& cfg, const RhsOptions& opt,
               const IntegratorOptions& io, Sampler* sampler) {
  for (double te : drive.discontinuities(s.t, t1))
    integrate_segment(s, te, drive, cfg, opt, io, sampler);
  integrate_segment(s, t1, drive, cfg, opt, io, sampler);
}

void Trajectory::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "t,Pe_x,Pe_y,Pe_z,Pn_x,Pn_y,Pn_z\n";
  char buf[64];
  for (size_t i = 0; i < t.size(); ++i) {
    auto put = [&](double v, char sep) {
      std::snprintf(buf, sizeof buf, "%.17g%c", v, sep);
      f << buf;
    };
    put(t[i], ',');
    put(Pe[i].x(), ','); put(Pe[i].y(), ','); put(Pe[i].z(), ',');
    put(Pn[i].x(), ','); put(Pn[i].y(), ','); put(Pn[i].z(), '\n');
  }
}

Trajectory integrate_sampled(SpinState& s, double t1,
                             const DriveTimeline& drive, const CellConfig& cfg,
                             double sample_rate, const IntegratorOptions& io) {
  Trajectory traj;
  Sampler sp;
  sp.t0 = s.t;
  sp.rate = sample_rate;
  sp.n = static_cast<long>(std::floor((t1 - s.t) * sample_rate + 1e-9)) + 1;
  sp.emit = [&](long, double t, const Vec3& Pe, const Vec3& Pn) {
    traj.t.push_back(t);
    traj.Pe.push_back(Pe);
    traj.Pn.push_back(Pn);
  };
  RhsOptions opt;
  integrate(s, t1, drive, cfg, opt, io, &sp);
  return traj;
}

void apply_magnetic_pulse(SpinState& s, double area, PulseMode mode,
                          const CellConfig& cfg, double duration, double p_sat,
                          const IntegratorOptions& io) {
  if (std::abs(area) > units::pi + 1e-12)
    throw std::invalid_argument("pulse area must satisfy |area| <= pi");
  if (mode == PulseMode::Impulse) {
    s.Pn = rotated_z(s.Pn, area);
    s.Pe = p_sat * cfg.pump_axis;
    return;
  }
  if (!(duration > 0.0))
    throw std::invalid_argument("finite pulse mode requires duration > 0");
  RhsOptions opt;
  opt.pump_on = true;
  opt.pulse_field_z = area / (cfg.noble.gamma * duration);
  DriveTimeline none;
  integrate_segment(s, s.t + duration, none, cfg, opt, io);
}

}  // namespace panco
