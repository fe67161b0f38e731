#ifndef GRIDEDGE_FEEDER_HPP
#define GRIDEDGE_FEEDER_HPP

#include <Eigen/Dense>
#include <Eigen/LU>

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gridedge/errors.hpp"

namespace gridedge::feeder {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Phases are indexed 0 (a), 1 (b), 2 (c) everywhere.
constexpr int kNumPhases = 3;

struct BusSpec {
  std::string id;
  std::vector<int> phases;  // subset of {0,1,2}, ascending
  bool is_reference = false;
};

// Series admittance block of one line, in siemens. Entries for phases absent
// at either endpoint must be zero; the block must be symmetric (reciprocal
// network).
struct LineSpec {
  std::string from;
  std::string to;
  Eigen::Matrix3cd y;
};

// One single-phase wye load. `node` is the 1-based load index n in 1..N.
struct LoadSpec {
  std::string bus;
  int phase = 0;
  int node = 0;
};

struct SensorPlacement {
  enum class Kind { FeederHeadPower, LateralPower };
  Kind kind = Kind::FeederHeadPower;
  std::string bus;
  // 1-based load indices aggregated by this sensor. Empty means "derive from
  // the feeder topology"; a non-empty set is validated against the topology.
  std::vector<int> downstream;
};

struct FeederDescription {
  std::vector<BusSpec> buses;
  std::vector<LineSpec> lines;
  std::vector<LoadSpec> loads;
  VectorXcd v0;  // reference-bus voltage, one phasor per reference phase
  std::vector<SensorPlacement> sensors;
};

// Assembled nodal admittance model with the reference-bus partition split
// out and the PQ-block factorization cached. Node-phase ordering: reference
// phases first, then PQ buses in declaration order, phases ascending.
class AdmittanceModel {
 public:
  explicit AdmittanceModel(FeederDescription desc);

  const FeederDescription& description() const { return desc_; }

  int num_load_nodes() const { return num_loads_; }        // N
  int num_ref_phases() const { return n_ref_; }            // rows of Y00
  int num_pq_phases() const { return n_pq_; }              // rows of YLL
  int num_node_phases() const { return n_ref_ + n_pq_; }

  const MatrixXcd& ybus() const { return y_; }
  const MatrixXcd& y00() const { return y00_; }
  const MatrixXcd& y0l() const { return y0l_; }
  const MatrixXcd& yl0() const { return yl0_; }
  const MatrixXcd& yll() const { return yll_; }
  const Eigen::PartialPivLU<MatrixXcd>& yll_factor() const { return yll_lu_; }

  const VectorXcd& v0() const { return desc_.v0; }

  // Global node-phase index for (bus, phase); throws if absent.
  int node_phase_index(int bus, int phase) const;
  int bus_index(const std::string& id) const;
  int reference_bus() const { return ref_bus_; }

  // PQ-block row (0..n_pq-1) of the 0-based load n.
  int load_row(int load) const { return load_rows_[load]; }

  // Parent bus on the path to the reference; -1 for the reference itself.
  // Only available for radial feeders (throws TopologyError otherwise).
  int parent_bus(int bus) const;
  // Line index feeding `bus` from its parent.
  int parent_line(int bus) const;
  bool is_radial() const { return radial_; }
  // 1-based load indices at `bus` or anywhere below it (radial only).
  std::vector<int> downstream_loads(int bus) const;

  // Map a stacked demand vector x = [p; q] (2N, watts/vars, consumption
  // positive) to complex net injections at the PQ node-phases.
  VectorXcd injection_from_demand(const VectorXd& x) const;

 private:
  FeederDescription desc_;
  int ref_bus_ = -1;
  int n_ref_ = 0;
  int n_pq_ = 0;
  int num_loads_ = 0;
  MatrixXcd y_, y00_, y0l_, yl0_, yll_;
  Eigen::PartialPivLU<MatrixXcd> yll_lu_;
  std::vector<int> node_phase_offset_;  // per bus, into the global ordering
  std::vector<int> load_rows_;          // per load, PQ-block row
  std::vector<int> parent_bus_;         // radial tree structure, -1 at root
  std::vector<int> parent_line_;
  std::vector<int> bfs_depth_;
  bool radial_ = false;

  friend AdmittanceModel build_admittance(FeederDescription desc);
};

// Linearized feeder model around an operating voltage vbar. The sensitivity
// M maps stacked load demand x = [p; q] to complex PQ voltage deviations:
// v(x) ~= w + M x. H stacks the real-valued sensor rows (per sensor: active
// power per phase, then reactive power per phase) so that feeder readings
// are z ~= H x with zero offset.
struct LinearizedModel {
  std::shared_ptr<const AdmittanceModel> model;
  std::vector<SensorPlacement> sensors;  // resolved downstream sets
  VectorXcd w;     // zero-load voltage at PQ node-phases
  VectorXcd vbar;  // linearization point
  MatrixXcd M;     // n_pq x 2N
  MatrixXd H;      // m x 2N, m = sum over sensors of 2 * (#phases at bus)
  std::vector<std::string> channel_labels;  // one per H row
};

AdmittanceModel build_admittance(FeederDescription desc);

// Solves YLL w = -YL0 v0 and verifies the residual.
VectorXcd zero_load_voltage(const AdmittanceModel& adm);
VectorXcd zero_load_voltage(const AdmittanceModel& adm, const VectorXcd& v0);

// Builds the sensitivity model at `vbar`; sensors, if given, are resolved
// and H is assembled, otherwise H is left empty (0 x 2N).
LinearizedModel linearize(std::shared_ptr<const AdmittanceModel> adm,
                          const VectorXcd& vbar,
                          std::span<const SensorPlacement> sensors = {});

// Convenience: linearize at the zero-load voltage.
LinearizedModel linearize(std::shared_ptr<const AdmittanceModel> adm,
                          std::span<const SensorPlacement> sensors = {});

// Stacks the sensor rows for an existing linearization.
MatrixXd assemble_measurement_operator(const LinearizedModel& lin,
                                       std::span<const SensorPlacement> sensors);

// Re-solves the nonlinear power flow at demand x_hat, re-linearizes at the
// solution and reassembles H with the model's existing sensors.
LinearizedModel refresh_operating_point(const LinearizedModel& lin,
                                        const VectorXd& x_hat);

// Resolved sensor cut used by both the linear operator assembly and the
// nonlinear sensor evaluation in `powerflow`.
struct SensorCut {
  int bus = -1;                  // measured bus
  std::vector<int> phases;       // phases measured (ascending)
  // Lines crossing the cut, each stored as (line index, far bus). Current
  // into the downstream region is y_line * (v_out - v_in) with the head
  // measured on the out side and laterals on the in side.
  std::vector<std::pair<int, int>> cut_lines;
  std::vector<int> downstream;   // 1-based load indices
};

SensorCut resolve_sensor(const AdmittanceModel& adm, const SensorPlacement& sensor);

}  // namespace gridedge::feeder

#endif  // GRIDEDGE_FEEDER_HPP
