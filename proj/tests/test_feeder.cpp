#include <doctest.h>

#include <cmath>
#include <complex>

#include "gridedge/feeder.hpp"
#include "gridedge/powerflow.hpp"
#include "gridedge/synth.hpp"
#include "support/oracles.hpp"

using namespace gridedge;
using namespace testsupport;
using std::complex;

TEST_CASE("two-bus single-phase assembly") {
  const complex<double> y(1.0, -2.0);
  auto model = make_model(two_bus_feeder(y));
  REQUIRE(model->num_node_phases() == 2);
  const auto& yb = model->ybus();
  CHECK(yb(0, 0) == y);
  CHECK(yb(1, 1) == y);
  CHECK(yb(0, 1) == -y);
  CHECK(yb(1, 0) == -y);
}

TEST_CASE("three-bus chain accumulates the middle diagonal") {
  const complex<double> y(2.0, -5.0);
  feeder::FeederDescription d;
  d.buses.push_back({"sub", {0}, true});
  d.buses.push_back({"m", {0}, false});
  d.buses.push_back({"e", {0}, false});
  Eigen::Matrix3cd block = Eigen::Matrix3cd::Zero();
  block(0, 0) = y;
  d.lines.push_back({"sub", "m", block});
  d.lines.push_back({"m", "e", block});
  d.loads.push_back({"e", 0, 1});
  d.v0.resize(1);
  d.v0[0] = 1.0;

  auto model = make_model(d);
  const int mid = model->node_phase_index(model->bus_index("m"), 0);
  CHECK(model->ybus()(mid, mid) == 2.0 * y);
}

TEST_CASE("four-bus three-phase assembly matches the incidence oracle") {
  auto model = make_model(four_bus_feeder());
  const Eigen::MatrixXcd oracle = incidence_ybus(*model);
  CHECK((model->ybus() - oracle).cwiseAbs().maxCoeff() <= 1e-12 * oracle.cwiseAbs().maxCoeff());
}

TEST_CASE("assembled Ybus is symmetric with zero row sums") {
  for (auto desc : {four_bus_feeder(), synth::make_radial_feeder(10, 3)}) {
    auto model = make_model(desc);
    const auto& y = model->ybus();
    CHECK((y - y.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXcd sums = y.rowwise().sum();
    CHECK(sums.cwiseAbs().maxCoeff() <= 1e-10 * y.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("zero-load voltage is the flat profile") {
  SUBCASE("lossless single line") {
    auto model = make_model(two_bus_feeder(complex<double>(0.0, -4.0)));
    const Eigen::VectorXcd w = feeder::zero_load_voltage(*model);
    CHECK(std::abs(w[0] - model->v0()[0]) <= 1e-12);
  }
  SUBCASE("lossy two-bus") {
    auto model = make_model(two_bus_feeder(complex<double>(3.0, -6.0)));
    const Eigen::VectorXcd w = feeder::zero_load_voltage(*model);
    CHECK(std::abs(w[0] - model->v0()[0]) <= 1e-12);
  }
  SUBCASE("four-bus matches the nonlinear solution at zero injection") {
    auto model = make_model(four_bus_feeder());
    const Eigen::VectorXcd w = feeder::zero_load_voltage(*model);
    powerflow::InjectionVector inj{Eigen::VectorXcd::Zero(model->num_pq_phases())};
    const auto profile = powerflow::solve_fixed_point(*model, inj);
    CHECK((w - profile.v).cwiseAbs().maxCoeff() <= 1e-9 * 2400.0);
  }
}

TEST_CASE("linearized voltage reproduces w at zero demand") {
  auto model = make_model(four_bus_feeder());
  const auto lin = feeder::linearize(model);
  const Eigen::VectorXcd v_lin = lin.w + lin.M * Eigen::VectorXd::Zero(8);
  CHECK((v_lin - lin.w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linearization error grows monotonically with loading") {
  auto model = make_model(four_bus_feeder());
  const auto lin = feeder::linearize(model);

  auto rel_error = [&](double scale) {
    const Eigen::VectorXd x = four_bus_nominal_demand(scale);
    powerflow::InjectionVector inj{model->injection_from_demand(x)};
    const auto profile = powerflow::solve_fixed_point(*model, inj);
    const Eigen::VectorXcd v_lin = lin.w + lin.M * x;
    return ((v_lin - profile.v).cwiseAbs().array() / profile.v.cwiseAbs().array())
        .maxCoeff();
  };

  const double err_light = rel_error(0.01);
  const double err_mid = rel_error(0.3);
  const double err_full = rel_error(1.0);
  CHECK(err_light <= 1e-4);
  CHECK(err_full <= 1e-2);
  CHECK(err_light < err_mid);
  CHECK(err_mid < err_full);
}

TEST_CASE("measurement operator rows and offset behavior") {
  auto model = make_model(four_bus_feeder());
  const auto& sensors = model->description().sensors;

  SUBCASE("six rows per three-phase sensor") {
    auto lin = feeder::linearize(model, std::span(sensors.data(), 2));
    CHECK(lin.H.rows() == 12);
    CHECK(lin.H.cols() == 8);
  }

  SUBCASE("zero demand gives zero readings, linear and nonlinear") {
    auto lin = feeder::linearize(model, sensors);
    const Eigen::VectorXd zero_readings = lin.H * Eigen::VectorXd::Zero(8);
    CHECK(zero_readings.cwiseAbs().maxCoeff() == 0.0);
    powerflow::InjectionVector inj{Eigen::VectorXcd::Zero(model->num_pq_phases())};
    const auto profile = powerflow::solve_fixed_point(*model, inj);
    const Eigen::VectorXd z = powerflow::feeder_quantities(*model, profile, sensors);
    CHECK(z.cwiseAbs().maxCoeff() <= 1e-7);
  }

  SUBCASE("lossless head row sums demand at light load") {
    auto lossless = make_model(two_bus_feeder(complex<double>(0.0, -10.0), 2400.0));
    auto lin = feeder::linearize(lossless, lossless->description().sensors);
    REQUIRE(lin.H.rows() == 2);
    // Head active power row acts like a row of ones on active demand.
    CHECK(lin.H(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(lin.H(0, 1)) <= 1e-9);
    CHECK(lin.H(1, 1) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("linear head power tracks the nonlinear feeder quantities") {
  auto model = make_model(four_bus_feeder());
  const auto& sensors = model->description().sensors;
  auto lin = feeder::linearize(model, sensors);

  const Eigen::VectorXd x = four_bus_nominal_demand(0.2);
  powerflow::InjectionVector inj{model->injection_from_demand(x)};
  const auto profile = powerflow::solve_fixed_point(*model, inj);
  const Eigen::VectorXd z = powerflow::feeder_quantities(*model, profile, sensors);
  const Eigen::VectorXd z_lin = lin.H * x;
  for (int i = 0; i < z.size(); ++i) {
    CHECK(std::abs(z_lin[i] - z[i]) <= 1e-3 * std::max(std::abs(z[i]), 100.0));
  }
}

TEST_CASE("refresh_operating_point") {
  auto model = make_model(four_bus_feeder());
  const auto& sensors = model->description().sensors;
  auto lin = feeder::linearize(model, sensors);

  SUBCASE("refresh at zero demand reproduces the stock linearization") {
    const auto refreshed = feeder::refresh_operating_point(lin, Eigen::VectorXd::Zero(8));
    CHECK((refreshed.H - lin.H).cwiseAbs().maxCoeff() <= 1e-9 * lin.H.cwiseAbs().maxCoeff());
    CHECK((refreshed.vbar - lin.w).cwiseAbs().maxCoeff() <= 1e-9 * 2400.0);
  }

  SUBCASE("refreshed H is exact at the refresh point") {
    const Eigen::VectorXd x = four_bus_nominal_demand(1.0);
    const auto refreshed = feeder::refresh_operating_point(lin, x);
    powerflow::InjectionVector inj{model->injection_from_demand(x)};
    const auto profile = powerflow::solve_fixed_point(*model, inj);
    const Eigen::VectorXd z = powerflow::feeder_quantities(*model, profile, sensors);
    const Eigen::VectorXd z_lin = refreshed.H * x;
    for (int i = 0; i < z.size(); ++i) {
      CHECK(std::abs(z_lin[i] - z[i]) <= 0.002 * std::max(std::abs(z[i]), 1.0));
    }
  }

  SUBCASE("refresh is idempotent") {
    const Eigen::VectorXd x = four_bus_nominal_demand(0.7);
    const auto once = feeder::refresh_operating_point(lin, x);
    const auto twice = feeder::refresh_operating_point(once, x);
    CHECK((once.H - twice.H).cwiseAbs().maxCoeff() <= 1e-10 * once.H.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("sensors exclude loads outside their downstream set") {
  auto model = make_model(four_bus_feeder());
  const auto& sensors = model->description().sensors;
  auto lin = feeder::linearize(model, sensors);

  // Sensor 1 sits at b2 (loads 2 and 4); load 3 lives on b3.
  const auto cut = feeder::resolve_sensor(*model, sensors[1]);
  CHECK(cut.downstream == std::vector<int>{2, 4});

  Eigen::VectorXd x = four_bus_nominal_demand(0.5);
  Eigen::VectorXd x_zeroed = x;
  x_zeroed[2] = 0.0;  // p of load 3
  x_zeroed[6] = 0.0;  // q of load 3
  const Eigen::VectorXd delta = lin.H * x - lin.H * x_zeroed;
  // Rows 6..11 belong to the b2 sensor; load 3 must not register there.
  double reading_scale = (lin.H * x).segment(6, 6).cwiseAbs().maxCoeff();
  CHECK(delta.segment(6, 6).cwiseAbs().maxCoeff() <= 1e-6 * std::max(reading_scale, 1.0));
}

TEST_CASE("feeder validation errors") {
  SUBCASE("disconnected graph") {
    auto d = two_bus_feeder(complex<double>(1.0, -1.0));
    d.buses.push_back({"island", {0}, false});
    CHECK_THROWS_AS(feeder::build_admittance(d), TopologyError);
  }
  SUBCASE("duplicate load index") {
    auto d = two_bus_feeder(complex<double>(1.0, -1.0));
    d.loads.push_back({"b1", 0, 1});
    CHECK_THROWS_AS(feeder::build_admittance(d), ConfigError);
  }
  SUBCASE("two reference buses") {
    auto d = two_bus_feeder(complex<double>(1.0, -1.0));
    d.buses[1].is_reference = true;
    CHECK_THROWS_AS(feeder::build_admittance(d), ConfigError);
  }
  SUBCASE("asymmetric line block") {
    auto d = two_bus_feeder(complex<double>(1.0, -1.0));
    d.buses[0].phases = {0, 1};
    d.buses[1].phases = {0, 1};
    d.v0.resize(2);
    d.v0[0] = 1.0;
    d.v0[1] = complex<double>(-0.5, -0.866);
    d.lines[0].y(0, 1) = complex<double>(0.2, 0.0);
    d.lines[0].y(1, 1) = complex<double>(1.0, -1.0);
    CHECK_THROWS_AS(feeder::build_admittance(d), ConfigError);
  }
  SUBCASE("load on an absent phase") {
    auto d = two_bus_feeder(complex<double>(1.0, -1.0));
    d.loads[0].phase = 1;
    CHECK_THROWS_AS(feeder::build_admittance(d), ConfigError);
  }
  SUBCASE("declared downstream set that contradicts the topology") {
    auto model = make_model(four_bus_feeder());
    feeder::SensorPlacement bad{feeder::SensorPlacement::Kind::LateralPower, "b2", {1, 2}};
    CHECK_THROWS_AS(feeder::resolve_sensor(*model, bad), ConfigError);
  }
  SUBCASE("near-singular YLL") {
    auto d = two_bus_feeder(complex<double>(1e-18, -1e-18));
    CHECK_THROWS_AS(feeder::build_admittance(d), gridedge::Error);
  }
}
