#include <doctest.h>

#include <cmath>
#include <complex>

#include "gridedge/powerflow.hpp"
#include "gridedge/synth.hpp"
#include "support/oracles.hpp"

using namespace gridedge;
using namespace testsupport;
using std::complex;

TEST_CASE("zero injection converges to w in one iteration") {
  auto model = make_model(four_bus_feeder());
  powerflow::InjectionVector inj{Eigen::VectorXcd::Zero(model->num_pq_phases())};
  const auto profile = powerflow::solve_fixed_point(*model, inj);
  CHECK(profile.iterations == 1);
  const Eigen::VectorXcd w = feeder::zero_load_voltage(*model);
  CHECK((profile.v - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-bus solution matches the closed-form quadratic") {
  // z = 0.01 + 0.02j, demand 0.1 + 0.05j on unit voltage base.
  const complex<double> z(0.01, 0.02);
  const complex<double> demand(0.1, 0.05);
  auto model = make_model(two_bus_feeder(1.0 / z, 1.0));

  Eigen::VectorXd x(2);
  x << demand.real(), demand.imag();
  powerflow::InjectionVector inj{model->injection_from_demand(x)};
  powerflow::SolveOptions opts;
  opts.tol_rel = 1e-13;
  const auto profile = powerflow::solve_fixed_point(*model, inj, opts);

  const complex<double> oracle = two_bus_voltage(1.0, z, -demand);
  CHECK(std::abs(profile.v[0] - oracle) <= 1e-10);
}

TEST_CASE("four-bus power mismatch residual is tiny at nominal load") {
  auto model = make_model(four_bus_feeder());
  const Eigen::VectorXd x = four_bus_nominal_demand();
  powerflow::InjectionVector inj{model->injection_from_demand(x)};
  const auto profile = powerflow::solve_fixed_point(*model, inj);
  const double scale = inj.s.cwiseAbs().maxCoeff();
  CHECK(profile.residual <= 1e-8 * scale);
  CHECK(profile.iterations <= 50);
}

TEST_CASE("per-phase conservation: head power equals demand plus losses") {
  auto model = make_model(four_bus_feeder());
  const auto& sensors = model->description().sensors;
  const Eigen::VectorXd x = four_bus_nominal_demand();
  powerflow::InjectionVector inj{model->injection_from_demand(x)};
  powerflow::SolveOptions opts;
  opts.tol_rel = 1e-12;
  const auto profile = powerflow::solve_fixed_point(*model, inj, opts);

  const Eigen::VectorXd z = powerflow::feeder_quantities(*model, profile, sensors);
  const Eigen::VectorXcd losses = powerflow::total_line_losses(*model, profile);
  CHECK(losses.real().minCoeff() > 0.0);

  // Demand per phase from the load map.
  Eigen::Vector3d demand_p = Eigen::Vector3d::Zero();
  Eigen::Vector3d demand_q = Eigen::Vector3d::Zero();
  const auto& desc = model->description();
  for (const auto& load : desc.loads) {
    demand_p[load.phase] += x[load.node - 1];
    demand_q[load.phase] += x[4 + load.node - 1];
  }
  for (int phase = 0; phase < 3; ++phase) {
    const double head_p = z[phase];
    const double head_q = z[3 + phase];
    const double rhs_p = demand_p[phase] + losses[phase].real();
    const double rhs_q = demand_q[phase] + losses[phase].imag();
    CHECK(std::abs(head_p - rhs_p) <= 1e-8 * std::max(1.0, std::abs(rhs_p)));
    CHECK(std::abs(head_q - rhs_q) <= 1e-8 * std::max(1.0, std::abs(rhs_q)));
  }
}

TEST_CASE("lossless feeder conserves active power exactly") {
  auto model = make_model(four_bus_feeder(2400.0, 1.0, /*lossless=*/true));
  const Eigen::VectorXd x = four_bus_nominal_demand();
  powerflow::InjectionVector inj{model->injection_from_demand(x)};
  powerflow::SolveOptions opts;
  opts.tol_rel = 1e-12;
  const auto profile = powerflow::solve_fixed_point(*model, inj, opts);
  const auto& sensors = model->description().sensors;
  const Eigen::VectorXd z = powerflow::feeder_quantities(*model, profile, sensors);
  const double head_active = z.head(3).sum();
  const double total_demand = x.head(4).sum();
  CHECK(std::abs(head_active - total_demand) <= 1e-10 * total_demand);
}

TEST_CASE("iteration count contracts as loading shrinks") {
  auto model = make_model(four_bus_feeder(2400.0, 8.0));
  powerflow::SolveOptions opts;
  opts.tol_rel = 1e-11;
  int last = 1000;
  for (double scale : {6.0, 3.0, 0.6}) {
    powerflow::InjectionVector inj{
        model->injection_from_demand(four_bus_nominal_demand(scale))};
    const auto profile = powerflow::solve_fixed_point(*model, inj, opts);
    CHECK(profile.iterations <= last);
    last = profile.iterations;
  }
}

TEST_CASE("sensor readings are invariant to load-node relabeling") {
  auto base = four_bus_feeder();
  auto permuted = base;
  // Swap load indices 1 and 4 (same buses and phases, new labels).
  for (auto& load : permuted.loads) {
    if (load.node == 1) load.node = 4;
    else if (load.node == 4) load.node = 1;
  }
  auto m1 = make_model(base);
  auto m2 = make_model(permuted);

  Eigen::VectorXd x1 = four_bus_nominal_demand();
  Eigen::VectorXd x2 = x1;
  std::swap(x2[0], x2[3]);
  std::swap(x2[4], x2[7]);

  powerflow::SolveOptions opts;
  opts.tol_rel = 1e-12;
  const auto p1 = powerflow::solve_fixed_point(*m1, {m1->injection_from_demand(x1)}, opts);
  const auto p2 = powerflow::solve_fixed_point(*m2, {m2->injection_from_demand(x2)}, opts);
  const Eigen::VectorXd z1 =
      powerflow::feeder_quantities(*m1, p1, base.sensors);
  const Eigen::VectorXd z2 =
      powerflow::feeder_quantities(*m2, p2, permuted.sensors);
  CHECK((z1 - z2).cwiseAbs().maxCoeff() <= 1e-9 * z1.cwiseAbs().maxCoeff());
}

TEST_CASE("divergence raises a numerical error that names the residual") {
  auto model = make_model(two_bus_feeder(complex<double>(4.0, -8.0), 1.0));
  Eigen::VectorXd x(2);
  x << 50.0, 20.0;  // far beyond the contraction region at unit voltage
  powerflow::SolveOptions opts;
  opts.max_iter = 30;
  CHECK_THROWS_WITH_AS(
      powerflow::solve_fixed_point(*model, {model->injection_from_demand(x)}, opts),
      doctest::Contains("did not converge"), NumericalError);
}
