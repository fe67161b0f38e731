#ifndef GRIDEDGE_SYNTH_HPP
#define GRIDEDGE_SYNTH_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridedge/feeder.hpp"

namespace gridedge::synth {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Deterministic uniform generator. All scenario randomness flows through
// this so reruns with the same seed are bitwise identical.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  int uniform_int(int lo, int hi);         // inclusive bounds
 private:
  std::uint64_t state_;
};

// Spatio-temporal demand at minute resolution: P and Q are N x T.
struct LoadMatrix {
  MatrixXd P;  // watts
  MatrixXd Q;  // vars

  int houses() const { return static_cast<int>(P.rows()); }
  int minutes() const { return static_cast<int>(P.cols()); }
  // Stacked X = [P; Q], 2N x T.
  MatrixXd stacked() const;
};

struct Event {
  int house = 0;      // 0-based
  int t_start = 0;    // inclusive minute
  int t_end = 0;      // exclusive minute
  double dp = 0;      // watts
  double dq = 0;      // vars
  enum class Kind { Appliance, Ev } kind = Kind::Appliance;
};

struct Range {
  double lo = 0;
  double hi = 0;
};

struct ScenarioConfig {
  int houses = 10;      // N; must match the feeder's load count
  int minutes = 480;    // T
  std::uint64_t seed = 1;

  Range base_load_w{200.0, 800.0};
  Range base_power_factor{0.92, 0.98};

  // Small frequent appliance activity.
  double appliance_rate_per_day = 10.0;  // events per house per day
  Range appliance_magnitude_w{100.0, 2000.0};
  Range appliance_duration_min{5.0, 90.0};
  Range appliance_power_factor{0.90, 0.95};

  // EV charging sessions (rectangular, constant power).
  double ev_rating_w = 7000.0;
  double ev_power_factor = 0.98;
  double ev_fraction = 0.5;              // fraction of houses with an EV
  int ev_sessions_per_house = 1;
  Range ev_start_window{0.0, 0.0};       // minutes into the horizon; hi=0 -> whole horizon
  Range ev_duration_min{60.0, 180.0};

  // Rooftop PV (rank-one, active power only).
  double pv_fraction = 0.5;
  Range pv_capacity_w{3000.0, 6000.0};
  Range pv_day_window{0.0, 0.0};         // minutes into the horizon; hi=0 -> no sun
  double pv_cloud_variability = 0.0;     // 0 smooth .. 1 heavily clouded

  // Periodic HVAC component (square waves with a shared period).
  bool hvac_enabled = false;
  Range hvac_period_min{10.0, 35.0};
  Range hvac_magnitude_w{1500.0, 3500.0};
  double hvac_fraction = 1.0;

  // Measurement layer.
  int meter_interval_min = 15;
  bool meters_asynchronous = false;
  double meter_accuracy = 0.002;         // ANSI C12.20 class
  double dpmu_accuracy = 0.0002;         // D-PMU datasheet error
  double feeder_bound_accuracy = 0.002;  // error-bound width for Z entries
  double bound_floor = 1.0;              // watts/vars, keeps bounds positive
  int kappa = 1;                         // number of feeder sensors used

  void validate() const;  // throws ConfigError naming the offending field
};

struct GroundTruth {
  LoadMatrix loads;
  MatrixXd pv_component;    // N x T, <= 0 (generation reduces net load)
  MatrixXd hvac_component;  // N x T, zero when disabled
  VectorXd base_p;          // per-house constant base, watts
  VectorXd base_q;          // vars
  std::vector<Event> events;
  VectorXd solar_pattern;   // length T, unit L2 norm (zero when no PV)
  VectorXd pv_capacity;     // length N, watts (zero for non-PV homes)
};

// Smart-meter sampling schedule. Offsets are empty for synchronous meters;
// otherwise one offset per node in [0, interval).
struct MeterSchedule {
  int interval = 15;
  int horizon = 0;  // T
  std::vector<int> offsets;

  int samples() const { return horizon / interval; }  // T_s
  bool synchronous() const { return offsets.empty(); }
};

struct MeasurementSet {
  MatrixXd gamma;        // 2N x T_s smart-meter readings
  MeterSchedule schedule;
  MatrixXd Z;            // m x T feeder readings (0 x T when kappa = 0)
  MatrixXd eps_bounds;   // entrywise bounds for gamma
  MatrixXd e_bounds;     // entrywise bounds for Z
  MatrixXd H;            // m x 2N measurement operator used for recovery
  std::vector<std::string> channel_labels;  // per Z/H row
};

GroundTruth generate_ground_truth(const ScenarioConfig& cfg);

// Window-averages X through the schedule: row n of the result is the mean
// of row n over that node's windows. Rows 2k and 2k+1 of a stacked 2N-row
// matrix share node k's offsets.
MatrixXd apply_meter_averaging(const MatrixXd& X, const MeterSchedule& sched);
// Adjoint of the averaging map (spreads window values back over minutes).
MatrixXd meter_averaging_adjoint(const MatrixXd& G, const MeterSchedule& sched);
// Dense T x T_s averaging operator for one node (tests and small problems).
MatrixXd dense_averaging_matrix(const MeterSchedule& sched, int node);

// Samples noisy smart meters: gamma = avg(X) .* (1 + U[-acc, acc]).
// Returns the readings and the schedule (with per-node offsets drawn here
// when cfg.meters_asynchronous).
std::pair<MatrixXd, MeterSchedule> sample_smart_meters(const GroundTruth& gt,
                                                       const ScenarioConfig& cfg);

// Runs the nonlinear power flow at every minute and evaluates the sensors,
// then adds uniform relative noise. Throws NumericalError naming the minute
// if any time step diverges.
MatrixXd sample_feeder_sensors(const GroundTruth& gt,
                               const feeder::AdmittanceModel& adm,
                               std::span<const feeder::SensorPlacement> sensors,
                               const ScenarioConfig& cfg);

// Entrywise error bounds from the configured accuracies with an absolute
// floor so zero readings never create zero-width constraints.
std::pair<MatrixXd, MatrixXd> calibrate_bounds(const MatrixXd& gamma,
                                               const MatrixXd& Z,
                                               const ScenarioConfig& cfg);

// Stock radial test feeder: a trunk with `laterals` branches, three houses
// per bus (phases a, b, c round-robin), head sensor first and one lateral
// sensor per branch. All buses are three-phase with coupled line blocks.
feeder::FeederDescription make_radial_feeder(int houses, int laterals,
                                             double v_base = 2400.0,
                                             double z_scale = 1.0);

}  // namespace gridedge::synth

#endif  // GRIDEDGE_SYNTH_HPP
