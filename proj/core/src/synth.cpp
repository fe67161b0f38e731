#include "gridedge/synth.hpp"

#include "gridedge/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace gridedge::synth {

std::uint64_t Rng::next_u64() {
  // splitmix64; deterministic across platforms.
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

namespace {

double reactive_factor(double power_factor) {
  const double pf = std::clamp(power_factor, 1e-6, 1.0);
  return std::tan(std::acos(pf));
}

int sample_poisson(Rng& rng, double mean) {
  if (mean <= 0) return 0;
  const double limit = std::exp(-mean);
  double p = 1.0;
  int k = 0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

// Distinct house subset of the requested size.
std::vector<int> sample_subset(Rng& rng, int n, int count) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < count && i < n; ++i) {
    std::swap(idx[i], idx[rng.uniform_int(i, n - 1)]);
  }
  idx.resize(std::min(count, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Relative noise that stays within `accuracy` of the *reported* value:
// |n| <= a/(1+a) |clean| implies |n| <= a |clean + n|.
double reading_noise(Rng& rng, double clean, double accuracy) {
  const double cap = accuracy / (1.0 + accuracy);
  return rng.uniform(-cap, cap) * std::abs(clean);
}

}  // namespace

MatrixXd LoadMatrix::stacked() const {
  MatrixXd x(2 * P.rows(), P.cols());
  x.topRows(P.rows()) = P;
  x.bottomRows(Q.rows()) = Q;
  return x;
}

void ScenarioConfig::validate() const {
  std::ostringstream bad;
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ConfigError("scenario." + field + ": " + why);
  };
  if (houses <= 0) fail("houses", "must be positive");
  if (minutes <= 0) fail("minutes", "must be positive");
  if (pv_fraction < 0 || pv_fraction > 1) fail("pv.fraction", "must lie in [0, 1]");
  if (ev_fraction < 0 || ev_fraction > 1) fail("ev.fraction", "must lie in [0, 1]");
  if (hvac_fraction < 0 || hvac_fraction > 1) fail("hvac.fraction", "must lie in [0, 1]");
  if (ev_rating_w < 0) fail("ev.rating_w", "must be nonnegative");
  if (appliance_magnitude_w.lo < 0) fail("appliance.magnitude_w", "must be nonnegative");
  if (ev_rating_w > 0 && ev_fraction > 0 && ev_rating_w <= appliance_magnitude_w.hi) {
    fail("ev.rating_w", "must exceed the largest appliance magnitude");
  }
  if (base_load_w.lo < 0) fail("base_load_w", "must be nonnegative");
  if (pv_capacity_w.lo < 0) fail("pv.capacity_w", "must be nonnegative");
  if (hvac_magnitude_w.lo < 0) fail("hvac.magnitude_w", "must be nonnegative");
  if (appliance_rate_per_day < 0) fail("appliance.rate_per_day", "must be nonnegative");
  if (meter_interval_min <= 0) fail("meters.interval_min", "must be positive");
  if (minutes % meter_interval_min != 0) {
    fail("meters.interval_min", "must divide the horizon length");
  }
  if (meter_accuracy <= 0) fail("meters.accuracy", "must be positive");
  if (dpmu_accuracy <= 0) fail("dpmu.accuracy", "must be positive");
  if (feeder_bound_accuracy <= 0) fail("dpmu.bound_accuracy", "must be positive");
  if (bound_floor <= 0) fail("bound_floor", "must be positive");
  if (kappa < 0) fail("kappa", "must be nonnegative");
  if (pv_cloud_variability < 0 || pv_cloud_variability > 1) {
    fail("pv.cloud_variability", "must lie in [0, 1]");
  }
  if (ev_sessions_per_house < 0) fail("ev.sessions_per_house", "must be nonnegative");
  if (hvac_enabled && !(hvac_period_min.lo > 1 && hvac_period_min.hi >= hvac_period_min.lo)) {
    fail("hvac.period_min", "must be an increasing range above 1 minute");
  }
}

GroundTruth generate_ground_truth(const ScenarioConfig& cfg) {
  cfg.validate();
  const int n = cfg.houses;
  const int t_len = cfg.minutes;
  Rng rng(cfg.seed);

  GroundTruth gt;
  gt.loads.P = MatrixXd::Zero(n, t_len);
  gt.loads.Q = MatrixXd::Zero(n, t_len);
  gt.pv_component = MatrixXd::Zero(n, t_len);
  gt.hvac_component = MatrixXd::Zero(n, t_len);
  gt.base_p = VectorXd::Zero(n);
  gt.base_q = VectorXd::Zero(n);
  gt.pv_capacity = VectorXd::Zero(n);
  gt.solar_pattern = VectorXd::Zero(t_len);

  for (int h = 0; h < n; ++h) {
    gt.base_p[h] = rng.uniform(cfg.base_load_w.lo, cfg.base_load_w.hi);
    gt.base_q[h] =
        gt.base_p[h] *
        reactive_factor(rng.uniform(cfg.base_power_factor.lo, cfg.base_power_factor.hi));
    gt.loads.P.row(h).setConstant(gt.base_p[h]);
    gt.loads.Q.row(h).setConstant(gt.base_q[h]);
  }

  // Shared PV shape: raised cosine over the day window, optionally modulated
  // by a bounded cloud walk, peak-normalized.
  const int day_lo = static_cast<int>(cfg.pv_day_window.lo);
  const int day_hi = std::min(static_cast<int>(cfg.pv_day_window.hi), t_len);
  const bool has_sun = cfg.pv_fraction > 0 && day_hi > day_lo + 1;
  if (has_sun) {
    VectorXd shape = VectorXd::Zero(t_len);
    const double span = day_hi - day_lo;
    double cloud = 1.0;
    for (int t = day_lo; t < day_hi; ++t) {
      const double tau = (t - day_lo) / span;
      double bell = std::sin(std::numbers::pi * tau);
      bell *= bell;
      if (cfg.pv_cloud_variability > 0) {
        cloud += rng.uniform(-1.0, 1.0) * 0.08 * cfg.pv_cloud_variability;
        cloud = std::clamp(cloud, 1.0 - 0.75 * cfg.pv_cloud_variability, 1.0);
        bell *= cloud;
      }
      shape[t] = bell;
    }
    const double peak = shape.maxCoeff();
    if (peak > 0) shape /= peak;

    const int n_pv = static_cast<int>(std::lround(cfg.pv_fraction * n));
    for (int h : sample_subset(rng, n, n_pv)) {
      gt.pv_capacity[h] = rng.uniform(cfg.pv_capacity_w.lo, cfg.pv_capacity_w.hi);
    }
    for (int h = 0; h < n; ++h) {
      if (gt.pv_capacity[h] > 0) {
        gt.pv_component.row(h) = -gt.pv_capacity[h] * shape.transpose();
      }
    }
    const double norm = shape.norm();
    gt.solar_pattern = norm > 0 ? VectorXd(shape / norm) : shape;
  }

  // Rectangular change events. Appliances may stack up to a small concurrency
  // cap; EV sessions at one house never overlap each other.
  Eigen::MatrixXi appliance_depth = Eigen::MatrixXi::Zero(n, t_len);
  Eigen::MatrixXi ev_depth = Eigen::MatrixXi::Zero(n, t_len);
  constexpr int kApplianceCap = 4;
  constexpr int kMaxAttempts = 100;

  auto place = [&](int house, Event::Kind kind, double dp, double dq,
                   int lo_start, int hi_start, const Range& dur_range) {
    Eigen::MatrixXi& depth =
        (kind == Event::Kind::Ev) ? ev_depth : appliance_depth;
    const int cap = (kind == Event::Kind::Ev) ? 1 : kApplianceCap;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const int start = rng.uniform_int(lo_start, hi_start);
      const int dur = std::max(
          1, static_cast<int>(std::lround(rng.uniform(dur_range.lo, dur_range.hi))));
      const int end = std::min(start + dur, t_len);
      if (end <= start) continue;
      bool fits = true;
      for (int t = start; t < end && fits; ++t) {
        fits = depth(house, t) < cap;
      }
      if (!fits) continue;
      for (int t = start; t < end; ++t) {
        depth(house, t) += 1;
        gt.loads.P(house, t) += dp;
        gt.loads.Q(house, t) += dq;
      }
      gt.events.push_back({house, start, end, dp, dq, kind});
      return;
    }
    std::ostringstream oss;
    oss << "could not place a " << (kind == Event::Kind::Ev ? "EV" : "appliance")
        << " event at house " << house << " after " << kMaxAttempts
        << " attempts; the horizon is over-packed";
    throw GenerationError(oss.str());
  };

  const double events_expected =
      cfg.appliance_rate_per_day * static_cast<double>(t_len) / 1440.0;
  for (int h = 0; h < n; ++h) {
    const int count = sample_poisson(rng, events_expected);
    for (int e = 0; e < count; ++e) {
      const double dp = rng.uniform(cfg.appliance_magnitude_w.lo,
                                    cfg.appliance_magnitude_w.hi);
      const double dq =
          dp * reactive_factor(rng.uniform(cfg.appliance_power_factor.lo,
                                           cfg.appliance_power_factor.hi));
      place(h, Event::Kind::Appliance, dp, dq, 1, t_len - 2,
            cfg.appliance_duration_min);
    }
  }

  if (cfg.ev_rating_w > 0 && cfg.ev_fraction > 0 && cfg.ev_sessions_per_house > 0) {
    const int n_ev = static_cast<int>(std::lround(cfg.ev_fraction * n));
    int lo = static_cast<int>(cfg.ev_start_window.lo);
    int hi = static_cast<int>(cfg.ev_start_window.hi);
    if (hi <= lo) {
      lo = 1;
      hi = t_len - 2;
    }
    lo = std::clamp(lo, 1, t_len - 2);
    hi = std::clamp(hi, lo, t_len - 2);
    const double dq = cfg.ev_rating_w * reactive_factor(cfg.ev_power_factor);
    for (int h : sample_subset(rng, n, n_ev)) {
      for (int s = 0; s < cfg.ev_sessions_per_house; ++s) {
        place(h, Event::Kind::Ev, cfg.ev_rating_w, dq, lo, hi, cfg.ev_duration_min);
      }
    }
  }

  if (cfg.hvac_enabled) {
    const int period = std::max(
        2, rng.uniform_int(static_cast<int>(cfg.hvac_period_min.lo),
                           static_cast<int>(cfg.hvac_period_min.hi)));
    const int n_hvac = static_cast<int>(std::lround(cfg.hvac_fraction * n));
    for (int h : sample_subset(rng, n, n_hvac)) {
      const double magnitude =
          rng.uniform(cfg.hvac_magnitude_w.lo, cfg.hvac_magnitude_w.hi);
      const int offset = rng.uniform_int(0, period - 1);
      for (int t = 0; t < t_len; ++t) {
        if ((t + offset) % period < period / 2) {
          gt.hvac_component(h, t) = magnitude;
        }
      }
    }
    gt.loads.P += gt.hvac_component;
  }

  gt.loads.P += gt.pv_component;
  return gt;
}

MatrixXd apply_meter_averaging(const MatrixXd& X, const MeterSchedule& sched) {
  const int t_len = static_cast<int>(X.cols());
  if (sched.horizon != t_len) throw ConfigError("meter schedule horizon mismatch");
  if (t_len % sched.interval != 0) {
    throw ConfigError("meter interval does not divide the horizon");
  }
  const int ts = sched.samples();
  const int rows = static_cast<int>(X.rows());
  const int nodes = sched.synchronous() ? 0 : static_cast<int>(sched.offsets.size());
  MatrixXd out(rows, ts);
  for (int r = 0; r < rows; ++r) {
    const int offset = sched.synchronous() ? 0 : sched.offsets[r % nodes];
    for (int j = 0; j < ts; ++j) {
      const int a = std::min(offset + j * sched.interval, t_len);
      const int b = std::min(offset + (j + 1) * sched.interval, t_len);
      const int len = std::max(1, b - a);
      out(r, j) = b > a ? X.row(r).segment(a, b - a).sum() / len : 0.0;
    }
  }
  return out;
}

MatrixXd meter_averaging_adjoint(const MatrixXd& G, const MeterSchedule& sched) {
  const int ts = sched.samples();
  if (G.cols() != ts) throw ConfigError("adjoint input has wrong sample count");
  const int rows = static_cast<int>(G.rows());
  const int nodes = sched.synchronous() ? 0 : static_cast<int>(sched.offsets.size());
  MatrixXd out = MatrixXd::Zero(rows, sched.horizon);
  for (int r = 0; r < rows; ++r) {
    const int offset = sched.synchronous() ? 0 : sched.offsets[r % nodes];
    for (int j = 0; j < ts; ++j) {
      const int a = std::min(offset + j * sched.interval, sched.horizon);
      const int b = std::min(offset + (j + 1) * sched.interval, sched.horizon);
      if (b <= a) continue;
      out.row(r).segment(a, b - a).array() += G(r, j) / (b - a);
    }
  }
  return out;
}

MatrixXd dense_averaging_matrix(const MeterSchedule& sched, int node) {
  const int ts = sched.samples();
  MatrixXd a = MatrixXd::Zero(sched.horizon, ts);
  const int offset =
      sched.synchronous() ? 0 : sched.offsets[node % sched.offsets.size()];
  for (int j = 0; j < ts; ++j) {
    const int lo = std::min(offset + j * sched.interval, sched.horizon);
    const int hi = std::min(offset + (j + 1) * sched.interval, sched.horizon);
    for (int t = lo; t < hi; ++t) a(t, j) = 1.0 / (hi - lo);
  }
  return a;
}

std::pair<MatrixXd, MeterSchedule> sample_smart_meters(const GroundTruth& gt,
                                                       const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
  MeterSchedule sched;
  sched.interval = cfg.meter_interval_min;
  sched.horizon = cfg.minutes;
  if (cfg.meters_asynchronous) {
    sched.offsets.resize(cfg.houses);
    for (int h = 0; h < cfg.houses; ++h) {
      sched.offsets[h] = rng.uniform_int(0, sched.interval - 1);
    }
  }
  MatrixXd gamma = apply_meter_averaging(gt.loads.stacked(), sched);
  for (int r = 0; r < gamma.rows(); ++r) {
    for (int j = 0; j < gamma.cols(); ++j) {
      gamma(r, j) += reading_noise(rng, gamma(r, j), cfg.meter_accuracy);
    }
  }
  return {std::move(gamma), std::move(sched)};
}

MatrixXd sample_feeder_sensors(const GroundTruth& gt,
                               const feeder::AdmittanceModel& adm,
                               std::span<const feeder::SensorPlacement> sensors,
                               const ScenarioConfig& cfg) {
  cfg.validate();
  if (adm.num_load_nodes() != cfg.houses) {
    throw ConfigError("feeder has " + std::to_string(adm.num_load_nodes()) +
                      " load nodes, scenario has " + std::to_string(cfg.houses));
  }
  Rng rng(cfg.seed ^ 0x5A5A5A5A5A5A5A5AULL);
  const MatrixXd x = gt.loads.stacked();
  const int t_len = cfg.minutes;

  int rows = 0;
  for (const auto& s : sensors) {
    rows += 2 * static_cast<int>(feeder::resolve_sensor(adm, s).phases.size());
  }
  MatrixXd z(rows, t_len);
  for (int t = 0; t < t_len; ++t) {
    powerflow::InjectionVector inj{adm.injection_from_demand(x.col(t))};
    powerflow::VoltageProfile profile;
    try {
      profile = powerflow::solve_fixed_point(adm, inj);
    } catch (const NumericalError& err) {
      throw NumericalError("feeder sampling failed at minute " +
                           std::to_string(t) + ": " + err.what());
    }
    z.col(t) = powerflow::feeder_quantities(adm, profile, sensors);
  }
  for (int r = 0; r < z.rows(); ++r) {
    for (int t = 0; t < t_len; ++t) {
      z(r, t) += reading_noise(rng, z(r, t), cfg.dpmu_accuracy);
    }
  }
  return z;
}

std::pair<MatrixXd, MatrixXd> calibrate_bounds(const MatrixXd& gamma,
                                               const MatrixXd& Z,
                                               const ScenarioConfig& cfg) {
  MatrixXd eps = (cfg.meter_accuracy * gamma.cwiseAbs()).cwiseMax(cfg.bound_floor);
  MatrixXd e = (cfg.feeder_bound_accuracy * Z.cwiseAbs()).cwiseMax(cfg.bound_floor);
  return {std::move(eps), std::move(e)};
}

feeder::FeederDescription make_radial_feeder(int houses, int laterals,
                                             double v_base, double z_scale) {
  if (houses <= 0) throw ConfigError("feeder generator needs at least one house");
  laterals = std::clamp(laterals, 1, houses);

  feeder::FeederDescription desc;
  const std::vector<int> abc{0, 1, 2};
  desc.buses.push_back({"sub", abc, true});
  desc.v0.resize(3);
  const double angle = 2.0 * std::numbers::pi / 3.0;
  desc.v0[0] = std::polar(v_base, 0.0);
  desc.v0[1] = std::polar(v_base, -angle);
  desc.v0[2] = std::polar(v_base, angle);

  // Coupled series impedance per span; the admittance block is its inverse.
  Eigen::Matrix3cd z_block;
  const std::complex<double> z_self(0.4 * z_scale, 0.8 * z_scale);
  const std::complex<double> z_mutual(0.08 * z_scale, 0.24 * z_scale);
  for (int p = 0; p < 3; ++p) {
    for (int q = 0; q < 3; ++q) {
      z_block(p, q) = (p == q) ? z_self : z_mutual;
    }
  }
  const Eigen::Matrix3cd y_block = z_block.inverse();

  auto add_line = [&](const std::string& from, const std::string& to) {
    desc.lines.push_back({from, to, y_block});
  };

  // Trunk bus per lateral.
  std::vector<std::string> trunk(laterals);
  for (int k = 0; k < laterals; ++k) {
    trunk[k] = "t" + std::to_string(k + 1);
    desc.buses.push_back({trunk[k], abc, false});
    add_line(k == 0 ? "sub" : trunk[k - 1], trunk[k]);
  }

  // Houses round-robin across laterals, three per bus (phases a, b, c).
  std::vector<std::vector<int>> lateral_houses(laterals);
  for (int h = 0; h < houses; ++h) lateral_houses[h % laterals].push_back(h);

  desc.sensors.push_back(
      {feeder::SensorPlacement::Kind::FeederHeadPower, "sub", {}});
  for (int k = 0; k < laterals; ++k) {
    std::string prev = trunk[k];
    const auto& hs = lateral_houses[k];
    for (size_t i = 0; i < hs.size(); i += 3) {
      const std::string bus =
          "b" + std::to_string(k + 1) + "_" + std::to_string(i / 3 + 1);
      desc.buses.push_back({bus, abc, false});
      add_line(prev, bus);
      for (size_t j = i; j < std::min(hs.size(), i + 3); ++j) {
        desc.loads.push_back({bus, static_cast<int>(j - i), hs[j] + 1});
      }
      if (i == 0 && !hs.empty()) {
        desc.sensors.push_back(
            {feeder::SensorPlacement::Kind::LateralPower, bus, {}});
      }
      prev = bus;
    }
  }
  return desc;
}

}  // namespace gridedge::synth
