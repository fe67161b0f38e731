#ifndef GRIDEDGE_POWERFLOW_HPP
#define GRIDEDGE_POWERFLOW_HPP

#include <Eigen/Dense>

#include <span>

#include "gridedge/feeder.hpp"

namespace gridedge::powerflow {

using Eigen::VectorXcd;
using Eigen::VectorXd;

// Complex net power injections at the PQ node-phases (volt-amperes,
// generation positive). Entries are zero away from declared load phases.
struct InjectionVector {
  VectorXcd s;
};

struct VoltageProfile {
  VectorXcd v;          // PQ node-phase voltages, volts
  int iterations = 0;
  double residual = 0;  // max entrywise power mismatch, volt-amperes
};

struct SolveOptions {
  // Convergence when max power mismatch <= tol_rel * max(1, max |s|).
  double tol_rel = 1e-9;
  int max_iter = 100;
};

// Z-bus style fixed-point iteration v <- w + YLL^-1 conj(s ./ v), seeded at
// the zero-load voltage. Throws NumericalError on divergence (the message
// carries the final residual and the injection scale).
VoltageProfile solve_fixed_point(const feeder::AdmittanceModel& adm,
                                 const InjectionVector& inj,
                                 const SolveOptions& opts = {});

// Sensor readings from a converged profile, stacked like the rows of H
// (per sensor: active power per phase, then reactive). Exact nonlinear
// evaluation through the sensor cut lines.
VectorXd feeder_quantities(const feeder::AdmittanceModel& adm,
                           const VoltageProfile& profile,
                           std::span<const feeder::SensorPlacement> sensors);

// Total series losses per measurement phase order (diagnostic helper used by
// conservation checks): sum over lines of (vi - vj) .* conj(y (vi - vj)).
Eigen::VectorXcd total_line_losses(const feeder::AdmittanceModel& adm,
                                   const VoltageProfile& profile);

}  // namespace gridedge::powerflow

#endif  // GRIDEDGE_POWERFLOW_HPP
