#include "panco/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "panco/units.hpp"

namespace panco {

QModel QModel::constant(double q0) {
  if (!(q0 >= 1.0 && q0 <= 10.0))
    throw ConfigError("constant q model requires q0 in [1, 10]");
  QModel q;
  q.kind = Kind::Constant;
  q.q0 = q0;
  return q;
}

void SpeciesParams::validate() const {
  if (gamma == 0.0 || !std::isfinite(gamma))
    throw ConfigError(name + ": gamma must be finite and nonzero");
  if (!(lambda_M >= 0.0) || !std::isfinite(lambda_M))
    throw ConfigError(name + ": lambda_M must be >= 0");
  if (!(R_sd >= 0.0) || !std::isfinite(R_sd))
    throw ConfigError(name + ": R_sd must be >= 0");
}

void CellConfig::validate() const {
  alkali.validate();
  noble.validate();
  if (!(R_se_en >= 0.0 && R_se_ne >= 0.0 && R_p_on >= 0.0))
    throw ConfigError("rates must be >= 0");
  if (std::abs(pump_axis.norm() - 1.0) > 1e-9)
    throw ConfigError("pump_axis must be normalised");
  if (q_model.kind == QModel::Kind::Constant &&
      !(q_model.q0 >= 1.0 && q_model.q0 <= 10.0))
    throw ConfigError("constant q model requires q0 in [1, 10]");
  if (!std::isfinite(bias_z)) throw ConfigError("bias_z must be finite");
  if (rotation_sign != 1 && rotation_sign != -1)
    throw ConfigError("rotation_sign must be +1 or -1");
}

double slowing_down_factor(const Vec3& Pe, const QModel& q) {
  if (q.kind == QModel::Kind::Constant) return q.q0;
  const double p2 = std::clamp(Pe.squaredNorm(), 0.0, 1.0);
  return 4.0 / (2.0 - 4.0 / (3.0 + p2));
}

double compensation_point(const CellConfig& cfg, double mean_Pe_z,
                          double Pn_z) {
  return cfg.noble.lambda_M * Pn_z + cfg.alkali.lambda_M * mean_Pe_z;
}

namespace {

using nlohmann::json;
using namespace units;

json species_to_json(const SpeciesParams& s) {
  return json{{"name", s.name},
              {"gamma_MHz_per_T", gamma_to_MHz_per_T(s.gamma)},
              {"lambda_M_nT", to_nT(s.lambda_M)},
              {"R_sd_per_s", s.R_sd}};
}

SpeciesParams species_from_json(const json& j) {
  SpeciesParams s;
  s.name = j.at("name").get<std::string>();
  s.gamma = gamma_from_MHz_per_T(j.at("gamma_MHz_per_T").get<double>());
  s.lambda_M = from_nT(j.at("lambda_M_nT").get<double>());
  s.R_sd = j.at("R_sd_per_s").get<double>();
  return s;
}

}  // namespace

nlohmann::json cell_to_json(const CellConfig& cfg) {
  json q;
  if (cfg.q_model.kind == QModel::Kind::Constant)
    q = json{{"kind", "constant"}, {"q0", cfg.q_model.q0}};
  else
    q = json{{"kind", "polarisation_dependent"}};
  return json{
      {"alkali", species_to_json(cfg.alkali)},
      {"noble", species_to_json(cfg.noble)},
      {"R_se_en_per_s", cfg.R_se_en},
      {"R_se_ne_per_s", cfg.R_se_ne},
      {"R_p_on_per_s", cfg.R_p_on},
      {"pump_axis", {cfg.pump_axis.x(), cfg.pump_axis.y(), cfg.pump_axis.z()}},
      {"q_model", q},
      {"bias_nT", to_nT(cfg.bias_z)},
      {"rotation_convention", cfg.rotation_sign > 0 ? "standard" : "opposite"}};
}

CellConfig cell_from_json(const nlohmann::json& j) {
  CellConfig cfg;
  cfg.alkali = species_from_json(j.at("alkali"));
  cfg.noble = species_from_json(j.at("noble"));
  cfg.R_se_en = j.at("R_se_en_per_s").get<double>();
  cfg.R_se_ne = j.at("R_se_ne_per_s").get<double>();
  cfg.R_p_on = j.at("R_p_on_per_s").get<double>();
  const auto& ax = j.at("pump_axis");
  cfg.pump_axis = Vec3(ax.at(0).get<double>(), ax.at(1).get<double>(),
                       ax.at(2).get<double>());
  const auto& q = j.at("q_model");
  const auto kind = q.at("kind").get<std::string>();
  if (kind == "constant")
    cfg.q_model = QModel::constant(q.at("q0").get<double>());
  else if (kind == "polarisation_dependent")
    cfg.q_model = QModel::polarisation_dependent();
  else
    throw ConfigError("unknown q_model kind: " + kind);
  cfg.bias_z = from_nT(j.at("bias_nT").get<double>());
  if (j.contains("rotation_convention")) {
    const auto conv = j.at("rotation_convention").get<std::string>();
    if (conv == "standard")
      cfg.rotation_sign = +1;
    else if (conv == "opposite")
      cfg.rotation_sign = -1;
    else
      throw ConfigError("unknown rotation_convention: " + conv);
  }
  cfg.validate();
  return cfg;
}

}  // namespace panco
