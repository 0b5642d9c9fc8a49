#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "panco/types.hpp"

namespace panco {

// One additive term of a drive program.  Sums of primitives make up the
// applied field B(t) [tesla] and the rotation rate Omega(t) [rad/s].
struct DrivePrimitive {
  enum class Kind { Constant, Step, SquareWave, Sinusoid } kind =
      Kind::Constant;
  Vec3 axis{1.0, 0.0, 0.0};  // unit direction
  double amplitude = 0.0;    // tesla or rad/s
  double t0 = 0.0;           // step onset / square-wave phase reference, s
  double period = 1.0;       // square wave, s
  double frequency = 0.0;    // sinusoid, Hz
  double phase = 0.0;        // sinusoid, rad

  Vec3 value(double t) const;
  // Appends discontinuity times in (t_begin, t_end) to out.
  void discontinuities(double t_begin, double t_end,
                       std::vector<double>& out) const;

  static DrivePrimitive constant(const Vec3& axis, double amplitude);
  static DrivePrimitive step(const Vec3& axis, double amplitude, double t0);
  static DrivePrimitive square_wave(const Vec3& axis, double amplitude,
                                    double period, double t0 = 0.0);
  static DrivePrimitive sinusoid(const Vec3& axis, double amplitude,
                                 double frequency, double phase = 0.0);
};

// Time-dependent applied field and rotation programs.  Piecewise smooth;
// the integrator queries discontinuities() so that no step straddles one.
struct DriveTimeline {
  std::vector<DrivePrimitive> B;      // tesla
  std::vector<DrivePrimitive> Omega;  // rad/s

  Vec3 B_at(double t) const;
  Vec3 Omega_at(double t) const;
  // Sorted, de-duplicated discontinuity times in (t_begin, t_end).
  std::vector<double> discontinuities(double t_begin, double t_end) const;

  static DriveTimeline none() { return {}; }
  static DriveTimeline constant_B(const Vec3& field);
  static DriveTimeline constant_Omega(const Vec3& rate);
};

nlohmann::json drive_to_json(const DriveTimeline& d);
DriveTimeline drive_from_json(const nlohmann::json& j);

}  // namespace panco
