#include "panco/drive.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "panco/model.hpp"
#include "panco/units.hpp"

namespace panco {

Vec3 DrivePrimitive::value(double t) const {
  switch (kind) {
    case Kind::Constant:
      return amplitude * axis;
    case Kind::Step:
      return t >= t0 ? Vec3(amplitude * axis) : Vec3(Vec3::Zero());
    case Kind::SquareWave: {
      double u = std::fmod(t - t0, period);
      if (u < 0) u += period;
      return (u < 0.5 * period ? amplitude : -amplitude) * axis;
    }
    case Kind::Sinusoid:
      return amplitude * std::sin(units::two_pi * frequency * t + phase) *
             axis;
  }
  return Vec3::Zero();
}

void DrivePrimitive::discontinuities(double t_begin, double t_end,
                                     std::vector<double>& out) const {
  switch (kind) {
    case Kind::Constant:
    case Kind::Sinusoid:
      return;
    case Kind::Step:
      if (t0 > t_begin && t0 < t_end) out.push_back(t0);
      return;
    case Kind::SquareWave: {
      const double half = 0.5 * period;
      long k = static_cast<long>(std::floor((t_begin - t0) / half));
      for (double te = t0 + k * half; te < t_end; te = t0 + (++k) * half)
        if (te > t_begin) out.push_back(te);
      return;
    }
  }
}

DrivePrimitive DrivePrimitive::constant(const Vec3& axis, double amplitude) {
  DrivePrimitive p;
  p.kind = Kind::Constant;
  p.axis = axis;
  p.amplitude = amplitude;
  return p;
}

DrivePrimitive DrivePrimitive::step(const Vec3& axis, double amplitude,
                                    double t0) {
  DrivePrimitive p;
  p.kind = Kind::Step;
  p.axis = axis;
  p.amplitude = amplitude;
  p.t0 = t0;
  return p;
}

DrivePrimitive DrivePrimitive::square_wave(const Vec3& axis, double amplitude,
                                           double period, double t0) {
  DrivePrimitive p;
  p.kind = Kind::SquareWave;
  p.axis = axis;
  p.amplitude = amplitude;
  p.period = period;
  p.t0 = t0;
  return p;
}

DrivePrimitive DrivePrimitive::sinusoid(const Vec3& axis, double amplitude,
                                        double frequency, double phase) {
  DrivePrimitive p;
  p.kind = Kind::Sinusoid;
  p.axis = axis;
  p.amplitude = amplitude;
  p.frequency = frequency;
  p.phase = phase;
  return p;
}

Vec3 DriveTimeline::B_at(double t) const {
  Vec3 v = Vec3::Zero();
  for (const auto& p : B) v += p.value(t);
  return v;
}

Vec3 DriveTimeline::Omega_at(double t) const {
  Vec3 v = Vec3::Zero();
  for (const auto& p : Omega) v += p.value(t);
  return v;
}

std::vector<double> DriveTimeline::discontinuities(double t_begin,
                                                   double t_end) const {
  std::vector<double> out;
  for (const auto& p : B) p.discontinuities(t_begin, t_end, out);
  for (const auto& p : Omega) p.discontinuities(t_begin, t_end, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

DriveTimeline DriveTimeline::constant_B(const Vec3& field) {
  DriveTimeline d;
  if (field.norm() > 0)
    d.B.push_back(DrivePrimitive::constant(field.normalized(), field.norm()));
  return d;
}

DriveTimeline DriveTimeline::constant_Omega(const Vec3& rate) {
  DriveTimeline d;
  if (rate.norm() > 0)
    d.Omega.push_back(
        DrivePrimitive::constant(rate.normalized(), rate.norm()));
  return d;
}

namespace {

using nlohmann::json;
using namespace units;

const char* kind_name(DrivePrimitive::Kind k) {
  switch (k) {
    case DrivePrimitive::Kind::Constant: return "constant";
    case DrivePrimitive::Kind::Step: return "step";
    case DrivePrimitive::Kind::SquareWave: return "square_wave";
    case DrivePrimitive::Kind::Sinusoid: return "sinusoid";
  }
  return "constant";
}

json prim_to_json(const DrivePrimitive& p, bool is_field) {
  json j{{"kind", kind_name(p.kind)},
         {"axis", {p.axis.x(), p.axis.y(), p.axis.z()}}};
  if (is_field)
    j["amplitude_pT"] = to_pT(p.amplitude);
  else
    j["amplitude_uHz"] = omega_to_uHz(p.amplitude);
  switch (p.kind) {
    case DrivePrimitive::Kind::Constant:
      break;
    case DrivePrimitive::Kind::Step:
      j["t0_s"] = p.t0;
      break;
    case DrivePrimitive::Kind::SquareWave:
      j["period_s"] = p.period;
      j["t0_s"] = p.t0;
      break;
    case DrivePrimitive::Kind::Sinusoid:
      j["frequency_Hz"] = p.frequency;
      j["phase_rad"] = p.phase;
      break;
  }
  return j;
}

DrivePrimitive prim_from_json(const json& j, bool is_field) {
  DrivePrimitive p;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "constant")
    p.kind = DrivePrimitive::Kind::Constant;
  else if (kind == "step")
    p.kind = DrivePrimitive::Kind::Step;
  else if (kind == "square_wave")
    p.kind = DrivePrimitive::Kind::SquareWave;
  else if (kind == "sinusoid")
    p.kind = DrivePrimitive::Kind::Sinusoid;
  else
    throw ConfigError("unknown drive primitive kind: " + kind);
  const auto& ax = j.at("axis");
  p.axis = Vec3(ax.at(0).get<double>(), ax.at(1).get<double>(),
                ax.at(2).get<double>());
  if (is_field) {
    if (j.contains("amplitude_nT"))
      p.amplitude = from_nT(j.at("amplitude_nT").get<double>());
    else
      p.amplitude = from_pT(j.at("amplitude_pT").get<double>());
  } else {
    p.amplitude = omega_from_uHz(j.at("amplitude_uHz").get<double>());
  }
  if (j.contains("t0_s")) p.t0 = j.at("t0_s").get<double>();
  if (j.contains("period_s")) p.period = j.at("period_s").get<double>();
  if (j.contains("frequency_Hz"))
    p.frequency = j.at("frequency_Hz").get<double>();
  if (j.contains("phase_rad")) p.phase = j.at("phase_rad").get<double>();
  return p;
}

}  // namespace

nlohmann::json drive_to_json(const DriveTimeline& d) {
  json b = json::array(), om = json::array();
  for (const auto& p : d.B) b.push_back(prim_to_json(p, true));
  for (const auto& p : d.Omega) om.push_back(prim_to_json(p, false));
  return json{{"B", b}, {"Omega", om}};
}

DriveTimeline drive_from_json(const nlohmann::json& j) {
  DriveTimeline d;
  for (const auto& p : j.at("B")) d.B.push_back(prim_from_json(p, true));
  for (const auto& p : j.at("Omega"))
    d.Omega.push_back(prim_from_json(p, false));
  return d;
}

}  // namespace panco
