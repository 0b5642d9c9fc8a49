#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "panco/types.hpp"

namespace panco {

// Slowing-down factor model for the alkali species.  The polarisation
// dependent form is q = 4 / (2 - 4/(3 + |Pe|^2)), range [4, 6].
struct QModel {
  enum class Kind { PolarisationDependent, Constant } kind =
      Kind::PolarisationDependent;
  double q0 = 4.0;  // used by Kind::Constant only

  static QModel polarisation_dependent() { return {}; }
  static QModel constant(double q0);
};

// One spin species.  lambda_M is the maximum magnetisation as seen through
// the coupling, i.e. the product lambda * M, in tesla.  R_sd is the
// spin-destruction rate in 1/s.
struct SpeciesParams {
  std::string name;
  double gamma = 0.0;     // rad/(s T)
  double lambda_M = 0.0;  // tesla
  double R_sd = 0.0;      // 1/s

  void validate() const;
};

// Full physical parameter set for the two-species cell.
struct CellConfig {
  SpeciesParams alkali;
  SpeciesParams noble;
  double R_se_en = 0.0;  // alkali -> noble spin-exchange rate, 1/s
  double R_se_ne = 0.0;  // noble -> alkali spin-exchange rate, 1/s
  double R_p_on = 0.0;   // pump rate while the pump is on, 1/s
  Vec3 pump_axis{0.0, 0.0, 1.0};
  QModel q_model;
  double bias_z = 0.0;  // signed applied z bias field, tesla
  // Sign of the Omega x P terms.  +1 is the standard convention; -1 is
  // exposed for sensitivity studies.
  int rotation_sign = +1;

  void validate() const;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Slowing-down factor q for alkali polarisation Pe.  |Pe|^2 is clamped to
// [0, 1] to absorb integrator overshoot.
double slowing_down_factor(const Vec3& Pe, const QModel& q);

// Bias magnitude that cancels the combined species magnetisation,
// lambda_M_n * Pn_z + lambda_M_e * <Pe_z>.  The bias is applied opposing
// the magnetisation, so the returned value is a (positive) magnitude for
// the usual polarised-up cell.
double compensation_point(const CellConfig& cfg, double mean_Pe_z,
                          double Pn_z);

// JSON (de)serialisation in display units; see README for the schema.
nlohmann::json cell_to_json(const CellConfig& cfg);
CellConfig cell_from_json(const nlohmann::json& j);

}  // namespace panco
