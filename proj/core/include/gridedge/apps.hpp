#ifndef GRIDEDGE_APPS_HPP
#define GRIDEDGE_APPS_HPP

#include <Eigen/Dense>

#include <vector>

#include "gridedge/recover.hpp"
#include "gridedge/synth.hpp"

namespace gridedge::apps {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct DetectedEvent {
  int house = 0;
  int t = 0;            // minute
  double magnitude = 0; // watts, signed
  enum class Polarity { Start, End } polarity = Polarity::Start;
};

struct RocPoint {
  double threshold_fraction = 0;
  double tpr = 0;
  double fpr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // ordered by threshold fraction
  int match_tolerance = 1;       // minutes
};

struct SolarPattern {
  VectorXd rho;  // length T, unit L2 norm, daytime-positive sign
};

struct DisaggregationFit {
  double alpha = 0;
  double beta = 0;
  VectorXd d;       // length T sparse total change vector (exact zeros)
  VectorXd solar;   // length T estimated BTM generation, >= 0
  double residual_norm = 0;
};

// Threshold detection on the recovered difference-domain active power.
// Entries with |DP(n,t)| >= threshold_fraction * ev_rating become events;
// runs of detections at one house within min_gap minutes and with the same
// polarity merge into the largest-magnitude representative.
std::vector<DetectedEvent> detect_ev_events(const MatrixXd& DP, double ev_rating,
                                            double threshold_fraction,
                                            int min_gap = 5);

// One-to-one matching by house with |dt| <= tolerance (augmenting-path
// maximum matching, so the matched count is monotone in the detection set).
// TPR = matched truth / total truth; FPR = unmatched detections / non-event
// house-minutes.
std::pair<double, double> score_detections(const std::vector<DetectedEvent>& detections,
                                           const std::vector<synth::Event>& truth,
                                           int tolerance, int houses, int minutes);

RocCurve roc_sweep(const MatrixXd& DP, const std::vector<synth::Event>& truth,
                   double ev_rating, const std::vector<double>& fractions,
                   int tolerance, int houses, int minutes, int min_gap = 5);

std::vector<double> default_threshold_grid();  // 0.05 .. 1.50 step 0.05

// Shared solar temporal pattern from a recovery solution: cumulative sum of
// v (rank-one) or of the first right singular vector of K, normalized to
// unit L2 norm with the sign fixed so the day_mask (whole horizon when
// empty) sums positive. Throws ModelError when K is numerically zero.
SolarPattern extract_pattern(const recover::RecoverySolution& solution,
                             const std::vector<int>& day_mask = {});

// Zeroes DFT bins whose period falls inside [p_min, p_max] minutes and
// renormalizes. Out-of-band bins are untouched.
SolarPattern bandpass_remove(const SolarPattern& pattern, double p_min, double p_max);

// Fits z ~= alpha 1 + beta rho + U^T d with an L1 penalty on d and the
// night anchor alpha + beta rho(t) = 0 enforced in least squares on
// night_mask. Returns the generation-sign solar series.
DisaggregationFit disaggregate_btm(const VectorXd& z_p, const SolarPattern& pattern,
                                   const std::vector<int>& night_mask,
                                   double mu = -1.0);  // mu < 0 -> default_lambda(T)

}  // namespace gridedge::apps

#endif  // GRIDEDGE_APPS_HPP
