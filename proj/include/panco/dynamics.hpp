#pragma once

#include <functional>
#include <string>
#include <vector>

#include "panco/drive.hpp"
#include "panco/model.hpp"
#include "panco/types.hpp"

namespace panco {

// Joint spin state of the two species.
struct SpinState {
  Vec3 Pe{0.0, 0.0, 0.0};  // alkali polarisation
  Vec3 Pn{0.0, 0.0, 0.0};  // noble-gas polarisation
  double t = 0.0;          // seconds
};

// Modifiers for the equations of motion within one integration segment.
struct RhsOptions {
  bool pump_on = false;      // adds R_p_on * (pump_axis - Pe)
  bool pin_pe = false;       // hold Pe fixed (pump pinning during pulses)
  double pulse_field_z = 0.0;  // extra z field during a finite pulse, tesla
};

// Right-hand side of the coupled Bloch equations.
void bloch_rhs(const SpinState& s, const DriveTimeline& drive,
               const CellConfig& cfg, const RhsOptions& opt, Vec3& dPe,
               Vec3& dPn);

struct IntegratorOptions {
  double rtol = 1e-9;
  double atol = 1e-12;
  double h_max = 1e-2;   // seconds
  double h_init = 1e-5;  // seconds
};

struct IntegrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Receives dense-output samples on a uniform grid:
//   t_k = t0 + k / rate,  k = 0 .. n-1
struct Sampler {
  double t0 = 0.0;
  double rate = 0.0;  // samples/s
  long n = 0;
  long next = 0;  // index of the next sample to emit
  std::function<void(long k, double t, const Vec3& Pe, const Vec3& Pn)> emit;
};

// Integrates the state in place from s.t to t1 over one smooth segment
// (no drive discontinuities inside; the caller splits at them).
// Dormand-Prince 5(4) with PI-free step control and 4th-order dense output.
void integrate_segment(SpinState& s, double t1, const DriveTimeline& drive,
                       const CellConfig& cfg, const RhsOptions& opt,
                       const IntegratorOptions& io, Sampler* sampler = nullptr);

// Integrates from s.t to t1, splitting at drive discontinuities so no step
// straddles one.
void integrate(SpinState& s, double t1, const DriveTimeline& drive,
               const CellConfig& cfg, const RhsOptions& opt,
               const IntegratorOptions& io, Sampler* sampler = nullptr);

// Convenience trajectory record.
struct Trajectory {
  std::vector<double> t;
  std::vector<Vec3> Pe;
  std::vector<Vec3> Pn;

  void write_csv(const std::string& path) const;
};

// Integrates and samples the full state at sample_rate over [s.t, t1].
Trajectory integrate_sampled(SpinState& s, double t1,
                             const DriveTimeline& drive, const CellConfig& cfg,
                             double sample_rate,
                             const IntegratorOptions& io = {});

enum class PulseMode { Impulse, Finite };

// Applies one magnetic pulse of the given area (rad) about z.
// Impulse mode rotates Pn and resets Pe to p_sat * pump_axis.
// Finite mode integrates the full dynamics for `duration` with the pulse
// field B = area / (gamma_n * duration) along z and the pump on.
void apply_magnetic_pulse(SpinState& s, double area, PulseMode mode,
                          const CellConfig& cfg, double duration = 0.0,
                          double p_sat = 0.99,
                          const IntegratorOptions& io = {});

}  // namespace panco
