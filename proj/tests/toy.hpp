#pragma once

// Scaled-down cell parameters for fast unit tests.  Precession frequencies
// are in the tens of Hz so the adaptive integrator takes large steps, while
// the structure (coupled species, pulses, pumping) matches production use.

#include "panco/model.hpp"
#include "panco/protocol.hpp"
#include "panco/units.hpp"

inline panco::CellConfig toy_cell() {
  using namespace panco;
  CellConfig c;
  c.alkali.name = "alkali";
  c.alkali.gamma = units::gamma_from_MHz_per_T(28.0);
  c.alkali.lambda_M = units::from_nT(9.0);
  c.alkali.R_sd = 50.0;
  c.noble.name = "noble";
  c.noble.gamma = units::gamma_from_MHz_per_T(0.03243);
  c.noble.lambda_M = units::from_nT(100.0);
  c.noble.R_sd = 2.0;
  c.q_model = panco::QModel::constant(1.0);
  c.bias_z = -units::from_nT(104.5);
  return c;
}

inline panco::PulseSchedule toy_schedule() {
  panco::PulseSchedule s;
  s.tau = 0.02;
  s.pump_duration = 1e-3;
  s.sample_rate = 25e3;
  s.settle_time = 4.0;
  return s;
}
