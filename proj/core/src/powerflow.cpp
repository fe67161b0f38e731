#include "gridedge/powerflow.hpp"

#include <cmath>
#include <complex>
#include <sstream>

namespace gridedge::powerflow {

using feeder::AdmittanceModel;
using feeder::SensorCut;
using feeder::SensorPlacement;
using std::complex;

namespace {

// Max entrywise power mismatch at the PQ node-phases.
double mismatch(const AdmittanceModel& adm, const VectorXcd& v,
                const VectorXcd& s) {
  const VectorXcd i_pq = adm.yl0() * adm.v0() + adm.yll() * v;
  const VectorXcd s_calc = v.array() * i_pq.array().conjugate();
  return (s_calc - s).cwiseAbs().maxCoeff();
}

}  // namespace

VoltageProfile solve_fixed_point(const AdmittanceModel& adm,
                                 const InjectionVector& inj,
                                 const SolveOptions& opts) {
  if (inj.s.size() != adm.num_pq_phases()) {
    throw ConfigError("injection vector has wrong dimension");
  }
  if (!(opts.tol_rel > 0)) throw ConfigError("power-flow tolerance must be positive");

  const VectorXcd w = feeder::zero_load_voltage(adm);
  const double s_scale = std::max(1.0, inj.s.cwiseAbs().maxCoeff());
  const double tol = opts.tol_rel * s_scale;
  const double v_floor = 1e-9 * adm.v0().cwiseAbs().maxCoeff();

  VoltageProfile out;
  out.v = w;
  out.residual = mismatch(adm, out.v, inj.s);
  out.iterations = 0;
  if (out.residual <= tol) {
    out.iterations = 1;
    return out;
  }

  for (int k = 1; k <= opts.max_iter; ++k) {
    if (out.v.cwiseAbs().minCoeff() < v_floor) {
      throw NumericalError("power flow produced a near-zero voltage iterate");
    }
    const VectorXcd rhs = (inj.s.array() / out.v.array()).conjugate();
    out.v = w + adm.yll_factor().solve(rhs.matrix());
    out.iterations = k;
    out.residual = mismatch(adm, out.v, inj.s);
    if (out.residual <= tol) return out;
  }

  std::ostringstream oss;
  oss << "power flow did not converge in " << opts.max_iter
      << " iterations (residual " << out.residual << " VA at injection scale "
      << s_scale << " VA); the loading is likely beyond the contraction region";
  throw NumericalError(oss.str());
}

VectorXd feeder_quantities(const AdmittanceModel& adm,
                           const VoltageProfile& profile,
                           std::span<const SensorPlacement> sensors) {
  const auto& desc = adm.description();
  const VectorXcd& v = profile.v;

  auto voltage_at = [&](int bus, int phase) -> complex<double> {
    const int idx = adm.node_phase_index(bus, phase);
    return bus == adm.reference_bus() ? adm.v0()[idx]
                                      : v[idx - adm.num_ref_phases()];
  };

  std::vector<double> readings;
  for (const auto& sensor : sensors) {
    const SensorCut cut = feeder::resolve_sensor(adm, sensor);
    Eigen::VectorXcd s_phase = Eigen::VectorXcd::Zero(cut.phases.size());
    for (auto [line_idx, far_bus] : cut.cut_lines) {
      const auto& line = desc.lines[line_idx];
      const int out_bus = (sensor.kind == SensorPlacement::Kind::FeederHeadPower)
                              ? cut.bus
                              : far_bus;
      const int in_bus = (sensor.kind == SensorPlacement::Kind::FeederHeadPower)
                             ? far_bus
                             : cut.bus;
      for (size_t k = 0; k < cut.phases.size(); ++k) {
        const int p = cut.phases[k];
        complex<double> i_down(0, 0);
        for (int q = 0; q < feeder::kNumPhases; ++q) {
          const complex<double> ypq = line.y(p, q);
          if (ypq == complex<double>(0, 0)) continue;
          i_down += ypq * (voltage_at(out_bus, q) - voltage_at(in_bus, q));
        }
        s_phase[k] += voltage_at(cut.bus, p) * std::conj(i_down);
      }
    }
    for (size_t k = 0; k < cut.phases.size(); ++k) readings.push_back(s_phase[k].real());
    for (size_t k = 0; k < cut.phases.size(); ++k) readings.push_back(s_phase[k].imag());
  }
  return Eigen::Map<VectorXd>(readings.data(), readings.size());
}

Eigen::VectorXcd total_line_losses(const AdmittanceModel& adm,
                                   const VoltageProfile& profile) {
  const auto& desc = adm.description();
  Eigen::VectorXcd losses = Eigen::VectorXcd::Zero(feeder::kNumPhases);

  auto voltage_at = [&](int bus, int phase) -> complex<double> {
    const int idx = adm.node_phase_index(bus, phase);
    return bus == adm.reference_bus() ? adm.v0()[idx]
                                      : profile.v[idx - adm.num_ref_phases()];
  };
  auto has_phase = [&](int bus, int phase) {
    const auto& ph = desc.buses[bus].phases;
    return std::find(ph.begin(), ph.end(), phase) != ph.end();
  };

  for (const auto& line : desc.lines) {
    const int bi = adm.bus_index(line.from);
    const int bj = adm.bus_index(line.to);
    for (int p = 0; p < feeder::kNumPhases; ++p) {
      if (!has_phase(bi, p) || !has_phase(bj, p)) continue;
      complex<double> i_pj(0, 0);
      for (int q = 0; q < feeder::kNumPhases; ++q) {
        const complex<double> ypq = line.y(p, q);
        if (ypq == complex<double>(0, 0)) continue;
        i_pj += ypq * (voltage_at(bi, q) - voltage_at(bj, q));
      }
      losses[p] += (voltage_at(bi, p) - voltage_at(bj, p)) * std::conj(i_pj);
    }
  }
  return losses;
}

}  // namespace gridedge::powerflow
