#include "gridedge/apps.hpp"

#include <fftw3.h>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <vector>

namespace gridedge::apps {

std::vector<DetectedEvent> detect_ev_events(const MatrixXd& DP, double ev_rating,
                                            double threshold_fraction, int min_gap) {
  if (!(threshold_fraction > 0)) throw ConfigError("threshold fraction must be positive");
  if (!(ev_rating > 0)) throw ConfigError("EV rating must be positive");
  const double threshold = threshold_fraction * ev_rating;
  const int n = static_cast<int>(DP.rows());
  const int t_len = static_cast<int>(DP.cols());

  std::vector<DetectedEvent> merged;
  for (int h = 0; h < n; ++h) {
    int last_t = -1;
    for (int t = 0; t < t_len; ++t) {
      const double mag = DP(h, t);
      if (std::abs(mag) < threshold) continue;
      const auto polarity =
          mag > 0 ? DetectedEvent::Polarity::Start : DetectedEvent::Polarity::End;
      if (!merged.empty() && merged.back().house == h && last_t >= 0 &&
          t - last_t <= min_gap && merged.back().polarity == polarity) {
        if (std::abs(mag) > std::abs(merged.back().magnitude)) {
          merged.back().magnitude = mag;
          merged.back().t = t;
        }
      } else {
        merged.push_back({h, t, mag, polarity});
      }
      last_t = t;
    }
  }
  return merged;
}

namespace {

// Change instants implied by the truth events (session ends outside the
// horizon produce no instant).
struct TruthInstant {
  int house;
  int t;
};

std::vector<TruthInstant> truth_instants(const std::vector<synth::Event>& truth,
                                         int minutes) {
  std::vector<TruthInstant> out;
  for (const auto& ev : truth) {
    if (ev.t_start >= 0 && ev.t_start < minutes) out.push_back({ev.house, ev.t_start});
    if (ev.t_end > ev.t_start && ev.t_end < minutes) out.push_back({ev.house, ev.t_end});
  }
  return out;
}

// Maximum bipartite matching (augmenting paths) between detections and truth
// instants. Monotone in the detection set, which keeps ROC curves ordered.
int max_matching(const std::vector<DetectedEvent>& detections,
                 const std::vector<TruthInstant>& truth, int tolerance) {
  const int nd = static_cast<int>(detections.size());
  const int nt = static_cast<int>(truth.size());
  std::vector<std::vector<int>> edges(nd);
  for (int d = 0; d < nd; ++d) {
    for (int t = 0; t < nt; ++t) {
      if (detections[d].house == truth[t].house &&
          std::abs(detections[d].t - truth[t].t) <= tolerance) {
        edges[d].push_back(t);
      }
    }
  }
  std::vector<int> owner(nt, -1);
  std::vector<char> seen;
  std::function<bool(int)> augment = [&](int d) -> bool {
    for (int t : edges[d]) {
      if (seen[t]) continue;
      seen[t] = 1;
      if (owner[t] == -1 || augment(owner[t])) {
        owner[t] = d;
        return true;
      }
    }
    return false;
  };
  int matched = 0;
  for (int d = 0; d < nd; ++d) {
    seen.assign(nt, 0);
    if (augment(d)) ++matched;
  }
  return matched;
}

}  // namespace

std::pair<double, double> score_detections(const std::vector<DetectedEvent>& detections,
                                           const std::vector<synth::Event>& truth,
                                           int tolerance, int houses, int minutes) {
  if (tolerance < 0) throw ConfigError("match tolerance must be nonnegative");
  const auto instants = truth_instants(truth, minutes);
  const int matched = max_matching(detections, instants, tolerance);
  const double total_truth = static_cast<double>(instants.size());
  const double tpr = total_truth > 0 ? matched / total_truth : 0.0;
  const double opportunities =
      std::max(1.0, static_cast<double>(houses) * minutes - total_truth);
  const double fpr = (static_cast<double>(detections.size()) - matched) / opportunities;
  return {tpr, fpr};
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 30; ++i) grid.push_back(0.05 * i);
  return grid;
}

RocCurve roc_sweep(const MatrixXd& DP, const std::vector<synth::Event>& truth,
                   double ev_rating, const std::vector<double>& fractions,
                   int tolerance, int houses, int minutes, int min_gap) {
  RocCurve curve;
  curve.match_tolerance = tolerance;
  std::vector<double> sorted = fractions;
  std::sort(sorted.begin(), sorted.end());
  for (double frac : sorted) {
    const auto detections = detect_ev_events(DP, ev_rating, frac, min_gap);
    const auto [tpr, fpr] = score_detections(detections, truth, tolerance, houses, minutes);
    curve.points.push_back({frac, tpr, fpr});
  }
  return curve;
}

SolarPattern extract_pattern(const recover::RecoverySolution& solution,
                             const std::vector<int>& day_mask) {
  const int t_len = static_cast<int>(solution.K.cols());
  if (t_len == 0) throw ModelError("solution carries no low-rank component");
  recover::DifferenceOperator diff(t_len);

  VectorXd direction;
  if (solution.v.size() > 0) {
    direction = solution.v;
  } else {
    if (solution.K.cwiseAbs().maxCoeff() <= 1e-9) {
      throw ModelError("recovered low-rank component is numerically zero; "
                       "no solar pattern to extract");
    }
    Eigen::BDCSVD<MatrixXd> svd(solution.K, Eigen::ComputeThinV);
    direction = svd.matrixV().col(0);
  }

  VectorXd raw = diff.cumsum(direction);
  const double norm = raw.norm();
  if (norm <= 1e-12 * std::max(1.0, solution.K.cwiseAbs().maxCoeff())) {
    throw ModelError("extracted temporal pattern is degenerate (zero norm)");
  }
  raw /= norm;

  double mass = 0;
  if (day_mask.empty()) {
    mass = raw.sum();
  } else {
    for (int t : day_mask) {
      if (t < 0 || t >= t_len) throw ConfigError("day mask index out of range");
      mass += raw[t];
    }
  }
  if (mass < 0) raw = -raw;
  return {raw};
}

namespace {
std::mutex fftw_mutex;
}

SolarPattern bandpass_remove(const SolarPattern& pattern, double p_min, double p_max) {
  const int n = static_cast<int>(pattern.rho.size());
  if (!(p_min > 0 && p_max > p_min && p_max < n)) {
    throw ConfigError("band-pass range must satisfy 0 < p_min < p_max < T");
  }
  std::vector<double> buf(pattern.rho.data(), pattern.rho.data() + n);
  std::vector<fftw_complex> spec(n / 2 + 1);

  fftw_plan fwd, inv;
  {
    std::scoped_lock lock(fftw_mutex);
    fwd = fftw_plan_dft_r2c_1d(n, buf.data(), spec.data(), FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(n, spec.data(), buf.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (int k = 1; k <= n / 2; ++k) {
    const double period = static_cast<double>(n) / k;
    if (period >= p_min && period <= p_max) {
      spec[k][0] = 0.0;
      spec[k][1] = 0.0;
    }
  }
  fftw_execute(inv);
  {
    std::scoped_lock lock(fftw_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }

  VectorXd out = Eigen::Map<VectorXd>(buf.data(), n) / static_cast<double>(n);
  const double norm = out.norm();
  // A purely in-band input filters to (numerically) nothing; leave it near
  // zero rather than amplifying round-off.
  if (norm > 1e-9) out /= norm;
  return {out};
}

DisaggregationFit disaggregate_btm(const VectorXd& z_p, const SolarPattern& pattern,
                                   const std::vector<int>& night_mask, double mu) {
  const int t_len = static_cast<int>(z_p.size());
  if (pattern.rho.size() != t_len) throw ConfigError("pattern length mismatch");
  if (night_mask.empty()) throw ConfigError("night mask must be nonempty");
  for (int t : night_mask) {
    if (t < 0 || t >= t_len) throw ConfigError("night mask index out of range");
  }
  if (mu < 0) mu = recover::default_lambda(t_len);

  const VectorXd& rho = pattern.rho;
  // The anchor rows need the pattern to vary over the day; a constant rho
  // makes (alpha, beta) unidentifiable.
  {
    const double rho_span = rho.maxCoeff() - rho.minCoeff();
    if (rho_span < 1e-9) {
      throw ModelError("solar pattern is constant; scaling fit is degenerate");
    }
  }

  recover::DifferenceOperator diff(t_len);
  const double night_weight = std::sqrt(1000.0);

  // Least squares + L1 on d via ADMM with an auxiliary copy of d.
  // Variables packed as [alpha, beta, d...].
  const int dim = 2 + t_len;
  auto fwd = [&](const VectorXd& p, VectorXd& fit, VectorXd& anchor) {
    fit = VectorXd::Constant(t_len, p[0]) + p[1] * rho + diff.cumsum(p.tail(t_len));
    anchor.resize(night_mask.size());
    for (size_t i = 0; i < night_mask.size(); ++i) {
      anchor[i] = night_weight * (p[0] + p[1] * rho[night_mask[i]]);
    }
  };
  auto adj = [&](const VectorXd& fit, const VectorXd& anchor) {
    VectorXd out(dim);
    out[0] = fit.sum();
    out[1] = rho.dot(fit);
    for (size_t i = 0; i < night_mask.size(); ++i) {
      out[0] += night_weight * anchor[i];
      out[1] += night_weight * rho[night_mask[i]] * anchor[i];
    }
    out.tail(t_len) = diff.cumsum_adjoint(fit);
    return out;
  };

  const double rho_admm = 1.0;
  VectorXd p = VectorXd::Zero(dim);
  VectorXd d_tilde = VectorXd::Zero(t_len);
  VectorXd dual = VectorXd::Zero(t_len);

  auto normal_apply = [&](const VectorXd& q) {
    VectorXd fit, anchor;
    fwd(q, fit, anchor);
    VectorXd out = adj(fit, anchor);
    out.tail(t_len) += rho_admm * q.tail(t_len);
    return out;
  };

  const double scale = std::max(1.0, z_p.norm());
  for (int iter = 0; iter < 500; ++iter) {
    // p-update by CG on the normal equations.
    VectorXd rhs = adj(z_p, VectorXd::Zero(night_mask.size()));
    rhs.tail(t_len) += rho_admm * (d_tilde - dual);
    VectorXd r = rhs - normal_apply(p);
    VectorXd dir = r;
    double rr = r.squaredNorm();
    for (int k = 0; k < 200 && std::sqrt(rr) > 1e-10 * std::max(1.0, rhs.norm()); ++k) {
      const VectorXd ad = normal_apply(dir);
      const double alpha_cg = rr / std::max(dir.dot(ad), 1e-300);
      p += alpha_cg * dir;
      r -= alpha_cg * ad;
      const double rr_new = r.squaredNorm();
      dir = r + (rr_new / std::max(rr, 1e-300)) * dir;
      rr = rr_new;
    }

    // Soft threshold the auxiliary copy, then dual ascent.
    const VectorXd target = p.tail(t_len) + dual;
    VectorXd d_new(t_len);
    for (int t = 0; t < t_len; ++t) {
      const double v = target[t];
      const double thr = mu / rho_admm;
      d_new[t] = std::abs(v) > thr ? v - std::copysign(thr, v) : 0.0;
    }
    const double change = (d_new - d_tilde).norm();
    d_tilde = d_new;
    dual += p.tail(t_len) - d_tilde;
    const double gap = (p.tail(t_len) - d_tilde).norm();
    if (gap < 1e-9 * scale && change < 1e-9 * scale && iter > 5) break;
  }

  DisaggregationFit fit_out;
  fit_out.alpha = p[0];
  fit_out.beta = p[1];
  fit_out.d = d_tilde;
  const double floor = 1e-6 * d_tilde.cwiseAbs().maxCoeff() + 1e-12 * scale;
  for (int t = 0; t < t_len; ++t) {
    if (std::abs(fit_out.d[t]) < floor) fit_out.d[t] = 0.0;
  }

  VectorXd series = VectorXd::Constant(t_len, fit_out.alpha) + fit_out.beta * rho;
  VectorXd resid = z_p - series - diff.cumsum(fit_out.d);
  fit_out.residual_norm = resid.norm();

  // Generation sign convention: the reported series is nonnegative solar
  // output. Flip when the fitted net-load component points down.
  double day_mass = 0;
  std::vector<char> is_night(t_len, 0);
  for (int t : night_mask) is_night[t] = 1;
  for (int t = 0; t < t_len; ++t) {
    if (!is_night[t]) day_mass += series[t];
  }
  if (day_mass < 0) series = -series;
  fit_out.solar = series.cwiseMax(0.0);
  return fit_out;
}

}  // namespace gridedge::apps
