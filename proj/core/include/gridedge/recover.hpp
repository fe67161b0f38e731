#ifndef GRIDEDGE_RECOVER_HPP
#define GRIDEDGE_RECOVER_HPP

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "gridedge/synth.hpp"

namespace gridedge::recover {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Right-multiplication by the T x T upper-triangular all-ones matrix and
// friends, applied as row-wise prefix sums. Maps difference-domain matrices
// to piecewise-constant time profiles.
class DifferenceOperator {
 public:
  explicit DifferenceOperator(int horizon) : T_(horizon) {}
  int horizon() const { return T_; }

  MatrixXd apply(const MatrixXd& S) const;             // S * U
  MatrixXd apply_inverse(const MatrixXd& X) const;     // X * U^-1 (first differences)
  MatrixXd apply_adjoint(const MatrixXd& G) const;     // G * U^T (reverse prefix sums)
  MatrixXd apply_inverse_adjoint(const MatrixXd& G) const;

  VectorXd cumsum(const VectorXd& s) const;            // U^T s (running sums)
  VectorXd cumsum_adjoint(const VectorXd& g) const;    // U g (reverse running sums)

 private:
  int T_ = 0;
};

struct RecoveryProblem {
  MatrixXd gamma;                 // 2N x T_s
  synth::MeterSchedule schedule;  // averaging operator(s)
  MatrixXd Z;                     // m x T (may have zero rows)
  MatrixXd H;                     // m x 2N
  MatrixXd eps_bounds;            // like gamma, strictly positive
  MatrixXd e_bounds;              // like Z, strictly positive
  double lambda = 0.05;
  int horizon = 0;                // T
  // Relative PV capacities for the rank-one mode; empty selects the full
  // nuclear-norm formulation.
  VectorXd u;
  // Optional shared temporal pattern in the reactive block: the Q rows of
  // the reconstruction gain q_pattern_scale * K (or q_pattern_scale * u v^T).
  double q_pattern_scale = 0.0;

  int houses() const { return static_cast<int>(gamma.rows()) / 2; }
  void validate() const;
};

RecoveryProblem make_problem(const synth::MeasurementSet& meas, double lambda,
                             const VectorXd& u = VectorXd());

struct SolverOptions {
  double tol = 1e-4;            // relative primal/dual stopping tolerance
  int max_iter = 2000;
  double rho = 1.0;             // ADMM penalty, adapted by residual balancing
  bool adapt_rho = true;
  double cg_tol = 1e-8;         // relative tolerance of the inner CG solve
  int cg_max_iter = 400;
  double group_floor = 1e-6;    // relative hard-threshold for exact zeros
  double feasibility_slack = 1.05;
  bool trace = true;            // record per-iteration diagnostics
};

enum class SolveStatus { Converged, NotConverged, PossiblyInfeasible };

struct SolverDiagnostics {
  int iterations = 0;
  SolveStatus status = SolveStatus::NotConverged;
  double primal_residual = 0;
  double dual_residual = 0;
  double rho_final = 0;
  double wall_seconds = 0;
  std::vector<double> primal_trace;
  std::vector<double> dual_trace;
  std::vector<double> objective_trace;
  double max_gamma_violation = 0;  // in units of the local bound
  double max_z_violation = 0;
};

struct RecoverySolution {
  MatrixXd K;    // N x T difference-domain low-rank part (u v^T in rank-one mode)
  VectorXd v;    // length T, rank-one mode only
  VectorXd u;    // echo of the capacities used (rank-one mode)
  MatrixXd DP;   // N x T, exact zeros below the hard threshold
  MatrixXd DQ;
  MatrixXd P_hat;  // (K + DP) U
  MatrixXd Q_hat;  // (q_pattern_scale K + DQ) U
  SolverDiagnostics diagnostics;

  MatrixXd x_hat() const;  // stacked [P_hat; Q_hat]
  int group_support() const;  // count of (n, t) pairs with a nonzero group
};

// --- norms and proximal operators ---------------------------------------

double nuclear_norm(const MatrixXd& K);
double group_l1_norm(const MatrixXd& DP, const MatrixXd& DQ);

// Singular-value soft thresholding: argmin_X tau ||X||_* + 1/2 ||X - M||_F^2.
MatrixXd prox_nuclear(const MatrixXd& M, double tau);

// Blockwise shrinkage of the stacked pairs [DP(n,t); DQ(n,t)].
std::pair<MatrixXd, MatrixXd> prox_group_l1(const MatrixXd& DP,
                                            const MatrixXd& DQ, double tau);

// Entrywise clamp of R into [-B, B].
MatrixXd project_box(const MatrixXd& R, const MatrixXd& B);

// O(1/sqrt(T)) sparsity coefficient, normalized so a one-day horizon at
// minute resolution gives 0.05.
double default_lambda(int horizon);

// --- solvers --------------------------------------------------------------

// ADMM for the nuclear-norm + group-L1 recovery with entrywise box
// constraints on both measurement residuals. Linear operators (averaging,
// cumulative sums, H) are applied functionally; the iterate update solves
// the regularized normal equations by preconditioned conjugate gradients.
RecoverySolution solve_full(const RecoveryProblem& problem,
                            const SolverOptions& opts = {});

// Same splitting with K = u v^T fixed in space; the nuclear prox is replaced
// by the ridge term 1/2 ||v||^2 absorbed into the iterate update. No SVDs.
RecoverySolution solve_rank_one(const RecoveryProblem& problem,
                                const SolverOptions& opts = {});

}  // namespace gridedge::recover

#endif  // GRIDEDGE_RECOVER_HPP
