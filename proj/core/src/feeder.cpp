#include "gridedge/feeder.hpp"

#include "gridedge/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>
#include <map>
#include <set>
#include <sstream>

namespace gridedge::feeder {

namespace {

using std::complex;

std::string phase_name(int phase) {
  static const char* names[] = {"a", "b", "c"};
  return names[phase];
}

}  // namespace

int AdmittanceModel::bus_index(const std::string& id) const {
  for (int i = 0; i < static_cast<int>(desc_.buses.size()); ++i) {
    if (desc_.buses[i].id == id) return i;
  }
  throw ConfigError("unknown bus id '" + id + "'");
}

int AdmittanceModel::node_phase_index(int bus, int phase) const {
  const auto& phases = desc_.buses[bus].phases;
  auto it = std::find(phases.begin(), phases.end(), phase);
  if (it == phases.end()) {
    throw ConfigError("bus '" + desc_.buses[bus].id + "' has no phase " +
                      phase_name(phase));
  }
  return node_phase_offset_[bus] + static_cast<int>(it - phases.begin());
}

int AdmittanceModel::parent_bus(int bus) const {
  if (!radial_) throw TopologyError("feeder is meshed; no unique parent for bus");
  return parent_bus_[bus];
}

int AdmittanceModel::parent_line(int bus) const {
  if (!radial_) throw TopologyError("feeder is meshed; no unique feeding line");
  return parent_line_[bus];
}

std::vector<int> AdmittanceModel::downstream_loads(int bus) const {
  if (!radial_) throw TopologyError("downstream sets require a radial feeder");
  // Collect buses whose path to the reference passes through `bus`.
  std::vector<int> result;
  for (const auto& load : desc_.loads) {
    int b = -1;
    for (int i = 0; i < static_cast<int>(desc_.buses.size()); ++i) {
      if (desc_.buses[i].id == load.bus) { b = i; break; }
    }
    for (int cur = b; cur != -1; cur = parent_bus_[cur]) {
      if (cur == bus) {
        result.push_back(load.node);
        break;
      }
    }
  }
  std::sort(result.begin(), result.end());
  return result;
}

Eigen::VectorXcd AdmittanceModel::injection_from_demand(const VectorXd& x) const {
  const int n = num_loads_;
  if (x.size() != 2 * n) {
    throw ConfigError("demand vector has dimension " + std::to_string(x.size()) +
                      ", expected " + std::to_string(2 * n));
  }
  VectorXcd s = VectorXcd::Zero(n_pq_);
  for (int k = 0; k < n; ++k) {
    s[load_rows_[k]] -= complex<double>(x[k], x[n + k]);
  }
  return s;
}

AdmittanceModel::AdmittanceModel(FeederDescription desc) : desc_(std::move(desc)) {
  const int nb = static_cast<int>(desc_.buses.size());
  if (nb == 0) throw ConfigError("feeder has no buses");

  // Reference bus and phase bookkeeping.
  for (int i = 0; i < nb; ++i) {
    const auto& bus = desc_.buses[i];
    if (bus.phases.empty()) {
      throw ConfigError("bus '" + bus.id + "' declares no phases");
    }
    std::vector<int> sorted = bus.phases;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != bus.phases ||
        std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() ||
        sorted.front() < 0 || sorted.back() >= kNumPhases) {
      throw ConfigError("bus '" + bus.id + "' has an invalid phase list");
    }
    if (bus.is_reference) {
      if (ref_bus_ != -1) throw ConfigError("more than one reference bus");
      ref_bus_ = i;
    }
  }
  if (ref_bus_ == -1) throw ConfigError("no reference bus declared");

  for (int i = 1; i < nb; ++i) {
    for (int j = 0; j < i; ++j) {
      if (desc_.buses[i].id == desc_.buses[j].id) {
        throw ConfigError("duplicate bus id '" + desc_.buses[i].id + "'");
      }
    }
  }

  // Global node-phase ordering: reference phases first, then PQ buses in
  // declaration order.
  node_phase_offset_.assign(nb, -1);
  n_ref_ = static_cast<int>(desc_.buses[ref_bus_].phases.size());
  node_phase_offset_[ref_bus_] = 0;
  int next = n_ref_;
  for (int i = 0; i < nb; ++i) {
    if (i == ref_bus_) continue;
    node_phase_offset_[i] = next;
    next += static_cast<int>(desc_.buses[i].phases.size());
  }
  n_pq_ = next - n_ref_;

  if (desc_.v0.size() != n_ref_) {
    throw ConfigError("v0 has " + std::to_string(desc_.v0.size()) +
                      " phasors, reference bus has " + std::to_string(n_ref_) +
                      " phases");
  }

  auto find_bus = [&](const std::string& id) {
    for (int i = 0; i < nb; ++i) {
      if (desc_.buses[i].id == id) return i;
    }
    throw ConfigError("unknown bus id '" + id + "'");
  };

  // Assemble Y over the global ordering.
  const int total = n_ref_ + n_pq_;
  y_ = MatrixXcd::Zero(total, total);
  std::vector<std::vector<std::pair<int, int>>> adjacency(nb);  // (neighbor, line)
  for (int l = 0; l < static_cast<int>(desc_.lines.size()); ++l) {
    const auto& line = desc_.lines[l];
    const int bi = find_bus(line.from);
    const int bj = find_bus(line.to);
    if (bi == bj) throw ConfigError("line from '" + line.from + "' to itself");
    const double scale = line.y.cwiseAbs().maxCoeff();
    if (scale <= 0) throw ConfigError("line " + line.from + "-" + line.to + " has zero admittance");
    if ((line.y - line.y.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
      throw ConfigError("line " + line.from + "-" + line.to +
                        " has a non-symmetric admittance block");
    }
    auto has_phase = [&](int bus, int phase) {
      const auto& ph = desc_.buses[bus].phases;
      return std::find(ph.begin(), ph.end(), phase) != ph.end();
    };
    for (int p = 0; p < kNumPhases; ++p) {
      for (int q = 0; q < kNumPhases; ++q) {
        const complex<double> ypq = line.y(p, q);
        if (ypq == complex<double>(0, 0)) continue;
        if (!has_phase(bi, p) || !has_phase(bi, q) || !has_phase(bj, p) ||
            !has_phase(bj, q)) {
          throw ConfigError("line " + line.from + "-" + line.to +
                            " couples a phase absent at an endpoint");
        }
        const int ip = node_phase_index(bi, p);
        const int iq = node_phase_index(bi, q);
        const int jp = node_phase_index(bj, p);
        const int jq = node_phase_index(bj, q);
        y_(ip, iq) += ypq;
        y_(jp, jq) += ypq;
        y_(ip, jq) -= ypq;
        y_(jp, iq) -= ypq;
      }
    }
    adjacency[bi].push_back({bj, l});
    adjacency[bj].push_back({bi, l});
  }

  // Connectivity and (if radial) the tree structure.
  parent_bus_.assign(nb, -2);
  parent_line_.assign(nb, -1);
  bfs_depth_.assign(nb, -1);
  std::deque<int> queue{ref_bus_};
  parent_bus_[ref_bus_] = -1;
  bfs_depth_[ref_bus_] = 0;
  int visited = 0;
  int tree_edges = 0;
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    ++visited;
    for (auto [nb2, line] : adjacency[cur]) {
      if (parent_bus_[nb2] == -2) {
        parent_bus_[nb2] = cur;
        parent_line_[nb2] = line;
        bfs_depth_[nb2] = bfs_depth_[cur] + 1;
        ++tree_edges;
        queue.push_back(nb2);
      }
    }
  }
  if (visited != nb) {
    std::ostringstream oss;
    oss << "feeder graph is disconnected; unreachable buses:";
    for (int i = 0; i < nb; ++i) {
      if (parent_bus_[i] == -2) oss << " '" << desc_.buses[i].id << "'";
    }
    throw TopologyError(oss.str());
  }
  radial_ = (tree_edges == static_cast<int>(desc_.lines.size()));

  // Load map.
  num_loads_ = static_cast<int>(desc_.loads.size());
  std::vector<int> seen(num_loads_ + 1, 0);
  load_rows_.assign(num_loads_, -1);
  for (const auto& load : desc_.loads) {
    if (load.node < 1 || load.node > num_loads_) {
      throw ConfigError("load node index " + std::to_string(load.node) +
                        " outside 1.." + std::to_string(num_loads_));
    }
    if (seen[load.node]++) {
      throw ConfigError("load node index " + std::to_string(load.node) +
                        " appears more than once");
    }
    const int bus = find_bus(load.bus);
    if (bus == ref_bus_) {
      throw ConfigError("load node " + std::to_string(load.node) +
                        " is attached to the reference bus");
    }
    load_rows_[load.node - 1] = node_phase_index(bus, load.phase) - n_ref_;
  }

  // Partitions. Reference rows/columns come first by construction.
  y00_ = y_.topLeftCorner(n_ref_, n_ref_);
  y0l_ = y_.topRightCorner(n_ref_, n_pq_);
  yl0_ = y_.bottomLeftCorner(n_pq_, n_ref_);
  yll_ = y_.bottomRightCorner(n_pq_, n_pq_);

  yll_lu_.compute(yll_);
  const double rcond = yll_lu_.rcond();
  if (!(rcond > 1e-14)) {
    std::ostringstream oss;
    oss << "YLL is singular or near-singular (rcond ~ " << rcond
        << "); check line admittances around the PQ buses";
    throw ModelError(oss.str());
  }
}

AdmittanceModel build_admittance(FeederDescription desc) {
  return AdmittanceModel(std::move(desc));
}

VectorXcd zero_load_voltage(const AdmittanceModel& adm) {
  return zero_load_voltage(adm, adm.v0());
}

VectorXcd zero_load_voltage(const AdmittanceModel& adm, const VectorXcd& v0) {
  if (v0.size() != adm.num_ref_phases()) {
    throw ConfigError("reference voltage dimension mismatch");
  }
  const VectorXcd rhs = -adm.yl0() * v0;
  const VectorXcd w = adm.yll_factor().solve(rhs);
  const double resid = (adm.yll() * w - rhs).norm();
  const double scale = std::max(rhs.norm(), 1e-300);
  if (resid > 1e-10 * std::max(scale, adm.yll().norm() * w.norm())) {
    std::ostringstream oss;
    oss << "zero-load solve is inaccurate (relative residual "
        << resid / scale << ", rcond ~ " << adm.yll_factor().rcond() << ")";
    throw ModelError(oss.str());
  }
  return w;
}

SensorCut resolve_sensor(const AdmittanceModel& adm, const SensorPlacement& sensor) {
  const auto& desc = adm.description();
  SensorCut cut;
  cut.bus = adm.bus_index(sensor.bus);
  cut.phases = desc.buses[cut.bus].phases;

  if (sensor.kind == SensorPlacement::Kind::FeederHeadPower) {
    if (cut.bus != adm.reference_bus()) {
      throw ConfigError("feeder-head sensor must sit on the reference bus");
    }
    for (int l = 0; l < static_cast<int>(desc.lines.size()); ++l) {
      const auto& line = desc.lines[l];
      const int bi = adm.bus_index(line.from);
      const int bj = adm.bus_index(line.to);
      if (bi == cut.bus) cut.cut_lines.push_back({l, bj});
      if (bj == cut.bus) cut.cut_lines.push_back({l, bi});
    }
    for (int n = 1; n <= adm.num_load_nodes(); ++n) cut.downstream.push_back(n);
  } else {
    if (cut.bus == adm.reference_bus()) {
      throw ConfigError("lateral sensor cannot sit on the reference bus");
    }
    const int line = adm.parent_line(cut.bus);  // throws when meshed
    cut.cut_lines.push_back({line, adm.parent_bus(cut.bus)});
    cut.downstream = adm.downstream_loads(cut.bus);
  }

  if (!sensor.downstream.empty()) {
    std::vector<int> declared = sensor.downstream;
    std::sort(declared.begin(), declared.end());
    if (declared != cut.downstream) {
      std::ostringstream oss;
      oss << "sensor at '" << sensor.bus << "' declares a downstream set that "
          << "does not match the topology (expected {";
      for (size_t i = 0; i < cut.downstream.size(); ++i) {
        oss << (i ? "," : "") << cut.downstream[i];
      }
      oss << "})";
      throw ConfigError(oss.str());
    }
  }
  return cut;
}

namespace {

// Rows of the linear sensor response: diag(v_meas) * sum over cut lines of
// conj(Y_l) (conj(M_out) - conj(M_in)), with M zero at the reference. The
// affine term vanishes because the zero-load voltage is flat across a
// series-only network.
MatrixXcd sensor_response(const AdmittanceModel& adm, const SensorCut& cut,
                          const VectorXcd& vbar, const MatrixXcd& m_sens,
                          const SensorPlacement::Kind kind) {
  const auto& desc = adm.description();
  const int cols = static_cast<int>(m_sens.cols());
  const int np = static_cast<int>(cut.phases.size());
  MatrixXcd rows = MatrixXcd::Zero(np, cols);

  // Voltage at the measured bus: the reference uses v0, laterals use vbar.
  VectorXcd v_meas(np);
  for (int k = 0; k < np; ++k) {
    const int idx = adm.node_phase_index(cut.bus, cut.phases[k]);
    v_meas[k] = (cut.bus == adm.reference_bus())
                    ? adm.v0()[idx]
                    : vbar[idx - adm.num_ref_phases()];
  }

  auto m_row = [&](int bus, int phase) -> Eigen::RowVectorXcd {
    if (bus == adm.reference_bus()) return Eigen::RowVectorXcd::Zero(cols);
    const int idx = adm.node_phase_index(bus, phase) - adm.num_ref_phases();
    return m_sens.row(idx);
  };

  for (auto [line_idx, far_bus] : cut.cut_lines) {
    const auto& line = desc.lines[line_idx];
    // Current into the downstream region is Y_l (v_out - v_in); the head
    // measures on the out side (out = reference), laterals on the in side
    // (in = cut.bus).
    const int out_bus =
        (kind == SensorPlacement::Kind::FeederHeadPower) ? cut.bus : far_bus;
    const int in_bus =
        (kind == SensorPlacement::Kind::FeederHeadPower) ? far_bus : cut.bus;
    for (int k = 0; k < np; ++k) {
      const int p = cut.phases[k];
      for (int q = 0; q < kNumPhases; ++q) {
        const std::complex<double> ypq = line.y(p, q);
        if (ypq == std::complex<double>(0, 0)) continue;
        rows.row(k) += v_meas[k] * std::conj(ypq) *
                       (m_row(out_bus, q).conjugate() - m_row(in_bus, q).conjugate());
      }
    }
  }
  return rows;
}

const char* kind_tag(SensorPlacement::Kind kind) {
  return kind == SensorPlacement::Kind::FeederHeadPower ? "head" : "lat";
}

}  // namespace

MatrixXd assemble_measurement_operator(const LinearizedModel& lin,
                                       std::span<const SensorPlacement> sensors) {
  const AdmittanceModel& adm = *lin.model;
  int rows = 0;
  std::vector<SensorCut> cuts;
  cuts.reserve(sensors.size());
  for (const auto& s : sensors) {
    cuts.push_back(resolve_sensor(adm, s));
    rows += 2 * static_cast<int>(cuts.back().phases.size());
  }
  MatrixXd h(rows, 2 * adm.num_load_nodes());
  int r = 0;
  for (size_t s = 0; s < cuts.size(); ++s) {
    const MatrixXcd resp =
        sensor_response(adm, cuts[s], lin.vbar, lin.M, sensors[s].kind);
    h.middleRows(r, resp.rows()) = resp.real();
    h.middleRows(r + resp.rows(), resp.rows()) = resp.imag();
    r += 2 * static_cast<int>(resp.rows());
  }
  return h;
}

LinearizedModel linearize(std::shared_ptr<const AdmittanceModel> adm,
                          const VectorXcd& vbar,
                          std::span<const SensorPlacement> sensors) {
  const AdmittanceModel& model = *adm;
  if (vbar.size() != model.num_pq_phases()) {
    throw ConfigError("operating point has wrong dimension");
  }
  if (vbar.cwiseAbs().minCoeff() <= 0) {
    throw NumericalError("operating point contains a zero voltage entry");
  }

  LinearizedModel lin;
  lin.model = adm;
  lin.w = zero_load_voltage(model);
  lin.vbar = vbar;

  const int n = model.num_load_nodes();
  // Unit load demand at node n changes the PQ injections by -(1 + 0j) /
  // -(0 + 1j); through the fixed-point map the voltage moves by
  // YLL^-1 conj(s) ./ conj(vbar).
  MatrixXcd rhs(model.num_pq_phases(), 2 * n);
  rhs.setZero();
  for (int k = 0; k < n; ++k) {
    const int row = model.load_row(k);
    const std::complex<double> denom = std::conj(vbar[row]);
    rhs(row, k) += std::complex<double>(-1, 0) / denom;       // conj(-1)
    rhs(row, n + k) += std::complex<double>(0, 1) / denom;    // conj(-1j)
  }
  lin.M = model.yll_factor().solve(rhs);

  if (!sensors.empty()) {
    lin.sensors.assign(sensors.begin(), sensors.end());
    for (auto& s : lin.sensors) {
      if (s.downstream.empty()) {
        s.downstream = resolve_sensor(model, s).downstream;
      }
    }
    lin.H = assemble_measurement_operator(lin, lin.sensors);
    lin.channel_labels.clear();
    for (const auto& s : lin.sensors) {
      const SensorCut cut = resolve_sensor(model, s);
      for (const char* pq : {"p", "q"}) {
        for (int phase : cut.phases) {
          lin.channel_labels.push_back(std::string(kind_tag(s.kind)) + "_" +
                                       s.bus + "_" + pq + "_" +
                                       (phase == 0 ? "a" : phase == 1 ? "b" : "c"));
        }
      }
    }
  } else {
    lin.H.resize(0, 2 * n);
  }
  return lin;
}

LinearizedModel linearize(std::shared_ptr<const AdmittanceModel> adm,
                          std::span<const SensorPlacement> sensors) {
  const VectorXcd w = zero_load_voltage(*adm);
  return linearize(std::move(adm), w, sensors);
}

LinearizedModel refresh_operating_point(const LinearizedModel& lin,
                                        const VectorXd& x_hat) {
  const AdmittanceModel& adm = *lin.model;
  if (x_hat.size() != 2 * adm.num_load_nodes()) {
    throw ConfigError("refresh load vector has wrong dimension");
  }
  powerflow::InjectionVector inj{adm.injection_from_demand(x_hat)};
  const powerflow::VoltageProfile profile = powerflow::solve_fixed_point(adm, inj);
  return linearize(lin.model, profile.v, lin.sensors);
}

}  // namespace gridedge::feeder
