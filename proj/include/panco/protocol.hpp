#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "panco/dynamics.hpp"
#include "panco/units.hpp"

namespace panco {

// Condition-number limit above which a signature design is degenerate.
inline constexpr double kDegenerateConditionLimit = 1e8;

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateSignatureError : ProtocolError {
  using ProtocolError::ProtocolError;
};

// Timing of the measurement cycle.  A cycle is two windows in fixed order:
// [-pulse window, +pulse window].  Each window starts with a magnetic pulse
// and optical pumping over pump_duration, followed by free precession that
// is sampled at sample_rate until the window ends at tau.
struct PulseSchedule {
  double tau = 0.02;            // window length, s
  double pump_duration = 1e-3;  // s
  double pulse_area = units::pi / 2.0;  // rad, sign alternates -,+
  PulseMode pulse_mode = PulseMode::Impulse;
  double pulse_duration = 0.0;  // finite mode; 0 means pump_duration
  double sample_rate = 125e3;   // samples/s
  double p_sat = 0.99;          // impulse-mode pump saturation
  double settle_time = 40.0;    // s

  long samples_per_window() const;
  long samples_per_cycle() const { return 2 * samples_per_window(); }
  double cycle_duration() const { return 2.0 * tau; }
  void validate() const;
};

nlohmann::json schedule_to_json(const PulseSchedule& s);
PulseSchedule schedule_from_json(const nlohmann::json& j);

// One measured cycle: the polarimeter proxy is Pe_x on the sample grid.
// Noiseless ground truth (x and y components) is retained alongside.
struct MeasuredCycle {
  std::vector<double> samples;  // noisy Pe_x
  std::vector<double> truth_x;  // noiseless Pe_x
  std::vector<double> truth_y;  // noiseless Pe_y
  std::vector<double> pn_x, pn_y;  // noble-gas transverse components
  long window_len = 0;
  double noise_sigma = 0.0;
  double t_start = 0.0;
  long index = 0;
};

// The four unit-drive response traces on the cycle sample grid.
// S_Bx, S_By are per tesla; S_Omx, S_Omy per rad/s.
struct SignatureSet {
  std::vector<double> S_Bx, S_By, S_Omx, S_Omy;
  nlohmann::json meta;

  long size() const { return static_cast<long>(S_Bx.size()); }
  void validate() const;
  void write(const std::string& csv_path, const std::string& meta_path) const;
  static SignatureSet read(const std::string& csv_path,
                           const std::string& meta_path);
};

struct ProtocolOptions {
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  IntegratorOptions integ;
  // Relative RMS discrepancy between consecutive cycles accepted as settled.
  double settle_threshold = 1e-8;
};

using CycleCallback = std::function<void(const MeasuredCycle&)>;

inline SpinState default_initial_state() {
  SpinState s;
  s.Pe = Vec3(0.0, 0.0, 1.0);
  s.Pn = Vec3(0.0, 0.0, 1.0);
  return s;
}

// Runs the pulse-pump-precess cycle for `duration` (whole cycles), invoking
// on_cycle for each measured cycle.  Returns the final state at a cycle
// boundary.
SpinState run_protocol_stream(const CellConfig& cfg, const PulseSchedule& sch,
                              const DriveTimeline& drive, double duration,
                              const ProtocolOptions& opt,
                              const CycleCallback& on_cycle,
                              SpinState init = default_initial_state());

struct ProtocolResult {
  std::vector<MeasuredCycle> cycles;
  SpinState final_state;
};

// Convenience wrapper keeping the last keep_last cycles (all if < 0).
ProtocolResult run_protocol(const CellConfig& cfg, const PulseSchedule& sch,
                            const DriveTimeline& drive, double duration,
                            const ProtocolOptions& opt = {},
                            long keep_last = -1,
                            SpinState init = default_initial_state());

// Runs the protocol for the configured settle time and returns the state at
// a cycle boundary.  Throws ProtocolError if consecutive cycles still differ
// by more than opt.settle_threshold (relative RMS).  The measured
// discrepancy is reported through *discrepancy when non-null.
SpinState settle(const CellConfig& cfg, const PulseSchedule& sch,
                 const DriveTimeline& drive, const ProtocolOptions& opt = {},
                 SpinState init = default_initial_state(),
                 double* discrepancy = nullptr);

// Maps an x-drive run onto the y-drive signature: by the axial symmetry of
// the scheme, the Pe_x response to a y drive equals minus the Pe_y response
// to the same-size x drive.
std::vector<double> symmetry_map(const std::vector<double>& pe_y_from_x_drive,
                                 double eps);

// Two settled runs (B_x = eps_B, Omega_x = eps_Om) give all four signatures;
// the y-axis pair comes from symmetry_map.  Throws DegenerateSignatureError
// when the unit-normalised Gram matrix is ill-conditioned.
SignatureSet generate_signatures(const CellConfig& cfg,
                                 const PulseSchedule& sch, double eps_B,
                                 double eps_Om,
                                 const ProtocolOptions& opt = {});

// Continuous-wave reference: steady pumping at r_p, no pulses.  Returns the
// steady-state Pe_x under the given drive; callers divide by the drive size.
double run_cw_scc(const CellConfig& cfg, const DriveTimeline& drive,
                  double r_p, double duration = 40.0,
                  const ProtocolOptions& opt = {});

// Alkali-only CW magnetometer (noble gas removed, bias zero).  Returns the
// steady Pe_x per tesla of transverse field.  The probe reads Pe_x, so the
// responsive transverse axis is y; the reference drive is applied there.
double run_serf_reference(const CellConfig& cfg, double r_p, double eps_B,
                          double duration = 2.0,
                          const ProtocolOptions& opt = {});

}  // namespace panco
