#include <doctest.h>

#include <cmath>
#include <set>

#include "gridedge/powerflow.hpp"
#include "gridedge/recover.hpp"
#include "gridedge/synth.hpp"
#include "support/oracles.hpp"

using namespace gridedge;
using namespace testsupport;
using synth::ScenarioConfig;

namespace {

ScenarioConfig quiet_config(int houses, int minutes) {
  ScenarioConfig cfg;
  cfg.houses = houses;
  cfg.minutes = minutes;
  cfg.appliance_rate_per_day = 0.0;
  cfg.ev_fraction = 0.0;
  cfg.pv_fraction = 0.0;
  cfg.hvac_enabled = false;
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST_CASE("quiet scenario is constant per house") {
  auto cfg = quiet_config(5, 120);
  const auto gt = synth::generate_ground_truth(cfg);
  for (int h = 0; h < 5; ++h) {
    CHECK((gt.loads.P.row(h).array() - gt.loads.P(h, 0)).abs().maxCoeff() == 0.0);
    CHECK((gt.loads.Q.row(h).array() - gt.loads.Q(h, 0)).abs().maxCoeff() == 0.0);
  }
  CHECK(gt.events.empty());
}

TEST_CASE("ev event is an exact rectangle") {
  auto cfg = quiet_config(6, 480);
  cfg.ev_fraction = 1.0 / 6.0;        // exactly one EV house
  cfg.ev_sessions_per_house = 1;
  cfg.ev_rating_w = 7000.0;
  cfg.ev_start_window = {100.0, 101.0};
  cfg.ev_duration_min = {180.0, 180.0};
  const auto gt = synth::generate_ground_truth(cfg);
  REQUIRE(gt.events.size() == 1);
  const auto& ev = gt.events[0];
  CHECK(ev.kind == synth::Event::Kind::Ev);
  CHECK(ev.dp == 7000.0);
  for (int t = 0; t < 480; ++t) {
    const double expected =
        gt.base_p[ev.house] + ((t >= ev.t_start && t < ev.t_end) ? 7000.0 : 0.0);
    CHECK(gt.loads.P(ev.house, t) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("pv component is exactly rank one") {
  auto cfg = quiet_config(8, 240);
  cfg.pv_fraction = 0.5;
  cfg.pv_capacity_w = {4000.0, 4000.0};
  cfg.pv_day_window = {40.0, 200.0};
  const auto gt = synth::generate_ground_truth(cfg);

  Eigen::BDCSVD<Eigen::MatrixXd> svd(gt.pv_component);
  const auto& sigma = svd.singularValues();
  REQUIRE(sigma.size() >= 2);
  CHECK(sigma[0] > 0.0);
  CHECK(sigma[1] <= 1e-9 * sigma[0]);
  CHECK(gt.pv_component.maxCoeff() <= 0.0);
  // Q never sees the PV component.
  for (int h = 0; h < 8; ++h) {
    CHECK((gt.loads.Q.row(h).array() - gt.loads.Q(h, 0)).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("time differences are nonzero exactly at event edges") {
  auto cfg = quiet_config(4, 300);
  cfg.appliance_rate_per_day = 15.0;
  cfg.seed = 7;
  const auto gt = synth::generate_ground_truth(cfg);
  REQUIRE(!gt.events.empty());

  recover::DifferenceOperator diff(300);
  const Eigen::MatrixXd dp = diff.apply_inverse(gt.loads.P);
  std::set<std::pair<int, int>> expected;
  for (const auto& ev : gt.events) {
    expected.insert({ev.house, ev.t_start});
    if (ev.t_end < 300) expected.insert({ev.house, ev.t_end});
  }
  for (int h = 0; h < 4; ++h) {
    // Column 0 carries the base level, not a change.
    for (int t = 1; t < 300; ++t) {
      const bool nonzero = std::abs(dp(h, t)) > 1e-9;
      const bool is_edge = expected.count({h, t}) > 0;
      CHECK(nonzero == is_edge);
    }
  }
}

TEST_CASE("synchronous averaging matches the Kronecker form") {
  const int t_len = 60;
  synth::MeterSchedule sched{15, t_len, {}};
  REQUIRE(sched.samples() == 4);
  const Eigen::MatrixXd a = synth::dense_averaging_matrix(sched, 0);
  // A = (1/15) I kron ones(15,1)
  for (int j = 0; j < 4; ++j) {
    for (int t = 0; t < t_len; ++t) {
      const double expected = (t >= 15 * j && t < 15 * (j + 1)) ? 1.0 / 15.0 : 0.0;
      CHECK(a(t, j) == doctest::Approx(expected));
    }
  }
  // Column sums are one for every schedule, including shifted ones.
  synth::MeterSchedule shifted{15, t_len, {4}};
  const Eigen::MatrixXd a2 = synth::dense_averaging_matrix(shifted, 0);
  for (int j = 0; j < 4; ++j) {
    CHECK(a2.col(j).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("window average of a partial pulse") {
  auto cfg = quiet_config(1, 30);
  cfg.meter_interval_min = 15;
  auto gt = synth::generate_ground_truth(cfg);
  // Rectangular pulse covering 5 minutes of the first window.
  for (int t = 5; t < 10; ++t) gt.loads.P(0, t) += 900.0;
  synth::MeterSchedule sched{15, 30, {}};
  const Eigen::MatrixXd avg = synth::apply_meter_averaging(gt.loads.P, sched);
  CHECK(avg(0, 0) == doctest::Approx(gt.base_p[0] + 900.0 * 5.0 / 15.0));
  CHECK(avg(0, 1) == doctest::Approx(gt.base_p[0]));
}

TEST_CASE("constant load with zero noise reproduces the constant") {
  auto cfg = quiet_config(3, 60);
  cfg.meter_accuracy = 1e-15;  // effectively noiseless
  const auto gt = synth::generate_ground_truth(cfg);
  const auto [gamma, sched] = synth::sample_smart_meters(gt, cfg);
  for (int h = 0; h < 3; ++h) {
    for (int j = 0; j < gamma.cols(); ++j) {
      CHECK(gamma(h, j) == doctest::Approx(gt.base_p[h]).epsilon(1e-9));
    }
  }
}

TEST_CASE("meter noise honors the calibrated bounds") {
  auto cfg = quiet_config(6, 240);
  cfg.appliance_rate_per_day = 12.0;
  cfg.ev_fraction = 0.5;
  cfg.ev_start_window = {10.0, 150.0};
  cfg.seed = 11;
  const auto gt = synth::generate_ground_truth(cfg);
  const auto [gamma, sched] = synth::sample_smart_meters(gt, cfg);
  const Eigen::MatrixXd clean = synth::apply_meter_averaging(gt.loads.stacked(), sched);
  const auto [eps, e] = synth::calibrate_bounds(gamma, Eigen::MatrixXd::Zero(0, 240), cfg);
  CHECK(((gamma - clean).cwiseAbs().array() <= eps.array()).all());
}

TEST_CASE("asynchronous offsets are reproducible and bounded") {
  auto cfg = quiet_config(8, 120);
  cfg.meters_asynchronous = true;
  cfg.seed = 99;
  const auto gt = synth::generate_ground_truth(cfg);
  const auto [g1, s1] = synth::sample_smart_meters(gt, cfg);
  const auto [g2, s2] = synth::sample_smart_meters(gt, cfg);
  REQUIRE(s1.offsets.size() == 8);
  for (int o : s1.offsets) {
    CHECK(o >= 0);
    CHECK(o < cfg.meter_interval_min);
  }
  CHECK(s1.offsets == s2.offsets);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("averaging adjoint satisfies the inner-product identity") {
  synth::Rng rng(5);
  synth::MeterSchedule sched{15, 90, {0, 3, 7, 11}};
  Eigen::MatrixXd x(4, 90), g(4, 6);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(-1, 1);
  const double lhs = (synth::apply_meter_averaging(x, sched).array() * g.array()).sum();
  const double rhs = (x.array() * synth::meter_averaging_adjoint(g, sched).array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("feeder sampling matches head conservation when lossless") {
  auto cfg = quiet_config(4, 30);
  cfg.dpmu_accuracy = 1e-15;
  auto model = make_model(four_bus_feeder(2400.0, 1.0, /*lossless=*/true));
  const auto gt = synth::generate_ground_truth(cfg);
  const auto& sensors = model->description().sensors;
  const Eigen::MatrixXd z =
      synth::sample_feeder_sensors(gt, *model, std::span(sensors.data(), 1), cfg);
  REQUIRE(z.rows() == 6);
  for (int t = 0; t < 30; ++t) {
    const double head_active = z.col(t).head(3).sum();
    const double demand = gt.loads.P.col(t).sum();
    CHECK(head_active == doctest::Approx(demand).epsilon(1e-9));
  }
}

TEST_CASE("calibrated bounds use accuracies with an absolute floor") {
  ScenarioConfig cfg = quiet_config(1, 15);
  Eigen::MatrixXd gamma(1, 2), z(1, 2);
  gamma << 1000.0, 0.0;
  z << 500.0, 0.0;
  const auto [eps, e] = synth::calibrate_bounds(gamma, z, cfg);
  CHECK(eps(0, 0) == doctest::Approx(2.0));       // 0.2% of 1000
  CHECK(eps(0, 1) == doctest::Approx(1.0));       // floor
  CHECK(e(0, 0) == doctest::Approx(1.0));         // 0.2% of 500 == floor
  CHECK(e(0, 1) == doctest::Approx(1.0));

  ScenarioConfig doubled = cfg;
  doubled.meter_accuracy *= 2;
  const auto [eps2, e2] = synth::calibrate_bounds(gamma, z, doubled);
  CHECK(eps2(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("identical seeds give bitwise identical scenarios") {
  ScenarioConfig cfg = quiet_config(10, 480);
  cfg.appliance_rate_per_day = 8.0;
  cfg.ev_fraction = 0.4;
  cfg.pv_fraction = 0.5;
  cfg.pv_day_window = {60.0, 420.0};
  cfg.pv_cloud_variability = 0.6;
  cfg.hvac_enabled = true;
  cfg.seed = 123;

  const auto a = synth::generate_ground_truth(cfg);
  const auto b = synth::generate_ground_truth(cfg);
  CHECK((a.loads.P - b.loads.P).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.loads.Q - b.loads.Q).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.events.size() == b.events.size());
  const auto [ga, sa] = synth::sample_smart_meters(a, cfg);
  const auto [gb, sb] = synth::sample_smart_meters(b, cfg);
  CHECK((ga - gb).cwiseAbs().maxCoeff() == 0.0);

  ScenarioConfig other = cfg;
  other.seed = 124;
  const auto c = synth::generate_ground_truth(other);
  CHECK((a.loads.P - c.loads.P).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("config validation points at the offending field") {
  ScenarioConfig cfg = quiet_config(4, 60);
  cfg.pv_fraction =  1.5;
  CHECK_THROWS_WITH_AS(synth::generate_ground_truth(cfg),
                       doctest::Contains("pv.fraction"), ConfigError);
  cfg = quiet_config(4, 61);
  CHECK_THROWS_WITH_AS(synth::generate_ground_truth(cfg),
                       doctest::Contains("interval"), ConfigError);
  cfg = quiet_config(4, 60);
  cfg.ev_fraction = 0.5;
  cfg.ev_rating_w = 100.0;  // below the largest appliance magnitude
  CHECK_THROWS_AS(synth::generate_ground_truth(cfg), ConfigError);
}

TEST_CASE("over-packed horizons raise a generation error") {
  ScenarioConfig cfg = quiet_config(2, 30);
  cfg.ev_fraction = 1.0;
  cfg.ev_sessions_per_house = 10;  // cannot fit ten disjoint sessions
  cfg.ev_duration_min = {20.0, 20.0};
  CHECK_THROWS_AS(synth::generate_ground_truth(cfg), GenerationError);
}

TEST_CASE("generated radial feeder carries the requested loads and sensors") {
  const auto desc = synth::make_radial_feeder(20, 7);
  auto model = make_model(desc);
  CHECK(model->num_load_nodes() == 20);
  CHECK(desc.sensors.size() == 8);  // head + 7 laterals
  CHECK(desc.sensors[0].kind == feeder::SensorPlacement::Kind::FeederHeadPower);
  // All loads reachable, YLL invertible, and the head sensor sees everyone.
  const auto cut = feeder::resolve_sensor(*model, desc.sensors[0]);
  CHECK(static_cast<int>(cut.downstream.size()) == 20);
}
