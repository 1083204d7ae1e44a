#pragma once

// Pairwise edge potentials between two sensors, built only from each
// sensor's own filtering output.
//
// With Δ = θj − θi, a track of sensor j appears in sensor i's frame shifted
// by +Δ and a track of sensor i appears in j's frame shifted by −Δ. Per step
// the quad-term update is
//
//   log q = ½(log r_ij + log s_j) + ½(log r_ji + log s_i) − log κ,
//
// where r_ij scores sensor i's measurements against sensor j's posterior
// tracks under the best assignment, s_i is sensor i's own association score
// and κ is a product of Bhattacharyya coefficients over matched object pairs.
// The dual-term baseline keeps only the two cross terms, scored against the
// other sensor's predicted tracks, and has no κ.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sepcal/assignment.hpp"
#include "sepcal/errors.hpp"
#include "sepcal/gaussian.hpp"
#include "sepcal/lgss.hpp"
#include "sepcal/local_tracker.hpp"

namespace sepcal {

/// Slack allowed on log κ ≤ 0 before it is treated as a numerical failure.
inline constexpr double kKappaSlack = 1e-8;

enum class LikelihoodVariant { quad, dual };

inline const char* to_string(LikelihoodVariant v) { return v == LikelihoodVariant::quad ? "quad" : "dual"; }

inline LikelihoodVariant parse_variant(const std::string& s) {
  if (s == "quad") return LikelihoodVariant::quad;
  if (s == "dual") return LikelihoodVariant::dual;
  throw ConfigError("unknown likelihood variant '" + s + "' (expected quad or dual)");
}

struct PairSensors {
  SensorModel i;
  SensorModel j;
};

/// Correspondence between two sensors' object labels at one step.
struct CorrespondenceEstimate {
  Permutation gamma;       // own object m -> other object gamma[m]
  Permutation sigma;       // own measurement o -> other object sigma[o]
  double assignment_cost = 0.0;
  Eigen::MatrixXd cost;    // d(o, m')
};

struct EdgeEvaluation {
  Vec2 theta_i = Vec2::Zero();
  Vec2 theta_j = Vec2::Zero();
  double log_quad = 0.0;
  std::vector<int> steps;
  std::vector<double> log_r_ij, log_r_ji, log_s_i, log_s_j, log_kappa, log_q;
  std::vector<Permutation> gamma_ij, gamma_ji;
};

struct DualEvaluation {
  Vec2 theta_i = Vec2::Zero();
  Vec2 theta_j = Vec2::Zero();
  double log_dual = 0.0;
  std::vector<int> steps;
  std::vector<double> log_cross_ij, log_cross_ji;
};

// ---------------------------------------------------------------------------
// Reference evaluation, written directly in terms of Gaussians.

/// d(o, m') = log N(z_o; H(x'_m' + shift), R_own + H P'_m' Hᵀ) for the other
/// sensor's tracks `other`, where shift = θ_other − θ_own.
inline Eigen::MatrixXd cross_cost_matrix(const std::vector<Vec2>& own_meas, const TrackSet& other,
                                         const Vec2& shift, const SensorModel& own_sensor) {
  const int n = other.size();
  if (static_cast<int>(own_meas.size()) != n) throw std::invalid_argument("cross_cost_matrix: count mismatch");
  Eigen::MatrixXd d(n, n);
  for (int m = 0; m < n; ++m) {
    const Gaussian g = predict_measurement(other.tracks[m], own_sensor);
    const Gaussian shifted(g.mean + shift, g.cov);
    for (int o = 0; o < n; ++o) d(o, m) = gaussian_logpdf(own_meas[o], shifted);
  }
  return d;
}

/// Best assignment of the own sensor's step-k measurements to the other
/// sensor's posterior tracks, and the induced object correspondence
/// gamma = sigma ∘ rho_own.
inline CorrespondenceEstimate estimate_correspondence(const FilterStep& own, const TrackSet& other_posterior,
                                                      const Vec2& theta_own, const Vec2& theta_other,
                                                      const SensorModel& own_sensor) {
  CorrespondenceEstimate est;
  est.cost = cross_cost_matrix(own.measurements, other_posterior, theta_other - theta_own, own_sensor);
  const AssignmentSolution sol = auction_assign(est.cost);
  est.sigma = sol.perm;
  est.assignment_cost = sol.total_logcost;
  est.gamma = compose(est.sigma, own.rho);
  return est;
}

/// log r = Σ_o d(o, gamma(tau(o))).
inline double eval_r(const FilterStep& own, const TrackSet& other_posterior, const Vec2& theta_own,
                     const Vec2& theta_other, const Permutation& gamma, const SensorModel& own_sensor) {
  if (!is_permutation(gamma) || gamma.size() != own.tau.size()) {
    throw std::invalid_argument("eval_r: correspondence is not a permutation of the right size");
  }
  const Eigen::MatrixXd d =
      cross_cost_matrix(own.measurements, other_posterior, theta_other - theta_own, own_sensor);
  return assignment_cost(d, compose(gamma, own.tau));
}

/// The two 4-d measurement-space densities compared by κ for the pair
/// (i-object m, j-object mj), over the stacked vector (z^i, z^j).
inline std::pair<Gaussian, Gaussian> kappa_pair_densities(const FilterStep& si, const FilterStep& sj, int m,
                                                          int mj, const Vec2& theta_i, const Vec2& theta_j,
                                                          const PairSensors& sensors) {
  const Vec2 delta = theta_j - theta_i;
  const SensorModel& hi = sensors.i;
  const SensorModel& hj = sensors.j;
  const Gaussian& pi = si.predicted.tracks[m];
  const Gaussian& qi = si.posterior.tracks[m];
  const Gaussian& pj = sj.predicted.tracks[mj];
  const Gaussian& qj = sj.posterior.tracks[mj];

  Gaussian g1(Eigen::VectorXd(4), Eigen::MatrixXd::Zero(4, 4));
  g1.mean << hi.H * pi.mean, hj.H * qi.mean - delta;
  g1.cov.topLeftCorner<2, 2>() = hi.R + hi.H * pi.cov * hi.H.transpose();
  g1.cov.bottomRightCorner<2, 2>() = hj.R + hj.H * qi.cov * hj.H.transpose();

  Gaussian g2(Eigen::VectorXd(4), Eigen::MatrixXd::Zero(4, 4));
  g2.mean << hi.H * qj.mean + delta, hj.H * pj.mean;
  g2.cov.topLeftCorner<2, 2>() = hi.R + hi.H * qj.cov * hi.H.transpose();
  g2.cov.bottomRightCorner<2, 2>() = hj.R + hj.H * pj.cov * hj.H.transpose();
  return {std::move(g1), std::move(g2)};
}

inline double checked_log_kappa(double log_kappa) {
  if (!(log_kappa <= kKappaSlack)) {
    throw NumericalError("scale factor exceeds one (log kappa = " + std::to_string(log_kappa) + ")");
  }
  return std::min(log_kappa, 0.0);
}

/// log κ for one pairing: Σ_m log BC(g1(m), g2(gamma_ij(m))).
inline double eval_kappa(const FilterStep& si, const FilterStep& sj, const Vec2& theta_i, const Vec2& theta_j,
                         const Permutation& gamma_ij, const PairSensors& sensors) {
  if (!is_permutation(gamma_ij) || static_cast<int>(gamma_ij.size()) != si.posterior.size()) {
    throw std::invalid_argument("eval_kappa: bad correspondence");
  }
  double acc = 0.0;
  for (int m = 0; m < static_cast<int>(gamma_ij.size()); ++m) {
    const auto [g1, g2] = kappa_pair_densities(si, sj, m, gamma_ij[m], theta_i, theta_j, sensors);
    acc += log_bhattacharyya(g1, g2);
  }
  return checked_log_kappa(acc);
}

/// log κ averaged over the pairing seen from i (gamma_ij) and from j
/// (gamma_ji inverted); the two coincide when the correspondences agree.
inline double eval_kappa_symmetric(const FilterStep& si, const FilterStep& sj, const Vec2& theta_i,
                                   const Vec2& theta_j, const Permutation& gamma_ij, const Permutation& gamma_ji,
                                   const PairSensors& sensors) {
  const double a = eval_kappa(si, sj, theta_i, theta_j, gamma_ij, sensors);
  const double b = eval_kappa(si, sj, theta_i, theta_j, inverse_permutation(gamma_ji), sensors);
  return 0.5 * (a + b);
}

struct QuadFactors {
  double log_r_ij = std::numeric_limits<double>::quiet_NaN();
  double log_s_j = std::numeric_limits<double>::quiet_NaN();
  double log_r_ji = std::numeric_limits<double>::quiet_NaN();
  double log_s_i = std::numeric_limits<double>::quiet_NaN();
  double log_kappa = std::numeric_limits<double>::quiet_NaN();
};

inline double quad_update(const QuadFactors& f) {
  for (double v : {f.log_r_ij, f.log_s_j, f.log_r_ji, f.log_s_i, f.log_kappa}) {
    if (std::isnan(v)) throw std::invalid_argument("quad_update: missing factor");
  }
  return 0.5 * (f.log_r_ij + f.log_s_j) + 0.5 * (f.log_r_ji + f.log_s_i) - f.log_kappa;
}

namespace detail {

inline void require_window(const FilterOutput& a, const FilterOutput& b, int first, int last) {
  if (first > last || !a.covers(first) || !a.covers(last) || !b.covers(first) || !b.covers(last)) {
    throw std::invalid_argument("edge likelihood: window [" + std::to_string(first) + ", " +
                                std::to_string(last) + "] not covered by both filter outputs");
  }
  if (a.num_objects() != b.num_objects()) throw std::invalid_argument("edge likelihood: object counts differ");
}

}  // namespace detail

/// Σ_k log q_k over k = first..last. κ at step k pairs objects through the
/// correspondences estimated at k − 1, or at k for the first step.
inline EdgeEvaluation quad_likelihood(const FilterOutput& out_i, const FilterOutput& out_j, const Vec2& theta_i,
                                      const Vec2& theta_j, const PairSensors& sensors, int first, int last) {
  detail::require_window(out_i, out_j, first, last);
  EdgeEvaluation ev;
  ev.theta_i = theta_i;
  ev.theta_j = theta_j;
  Permutation prev_ij, prev_ji;
  for (int k = first; k <= last; ++k) {
    const FilterStep& si = out_i.at(k);
    const FilterStep& sj = out_j.at(k);
    const auto cij = estimate_correspondence(si, sj.posterior, theta_i, theta_j, sensors.i);
    const auto cji = estimate_correspondence(sj, si.posterior, theta_j, theta_i, sensors.j);
    if (k == first) {
      prev_ij = cij.gamma;
      prev_ji = cji.gamma;
    }
    QuadFactors f;
    f.log_r_ij = cij.assignment_cost;
    f.log_r_ji = cji.assignment_cost;
    f.log_s_i = si.log_s;
    f.log_s_j = sj.log_s;
    f.log_kappa = eval_kappa_symmetric(si, sj, theta_i, theta_j, prev_ij, prev_ji, sensors);
    const double lq = quad_update(f);
    ev.steps.push_back(k);
    ev.log_r_ij.push_back(f.log_r_ij);
    ev.log_r_ji.push_back(f.log_r_ji);
    ev.log_s_i.push_back(f.log_s_i);
    ev.log_s_j.push_back(f.log_s_j);
    ev.log_kappa.push_back(f.log_kappa);
    ev.log_q.push_back(lq);
    ev.gamma_ij.push_back(cij.gamma);
    ev.gamma_ji.push_back(cji.gamma);
    ev.log_quad += lq;
    prev_ij = cij.gamma;
    prev_ji = cji.gamma;
  }
  return ev;
}

/// Σ_k [log p(Z^i_k | Z^j_{<k}) + log p(Z^j_k | Z^i_{<k})], each under the
/// best assignment against the other sensor's predicted tracks.
inline DualEvaluation dual_likelihood(const FilterOutput& out_i, const FilterOutput& out_j, const Vec2& theta_i,
                                      const Vec2& theta_j, const PairSensors& sensors, int first, int last) {
  detail::require_window(out_i, out_j, first, last);
  DualEvaluation ev;
  ev.theta_i = theta_i;
  ev.theta_j = theta_j;
  for (int k = first; k <= last; ++k) {
    const FilterStep& si = out_i.at(k);
    const FilterStep& sj = out_j.at(k);
    const double a =
        auction_assign(cross_cost_matrix(si.measurements, sj.predicted, theta_j - theta_i, sensors.i)).total_logcost;
    const double b =
        auction_assign(cross_cost_matrix(sj.measurements, si.predicted, theta_i - theta_j, sensors.j)).total_logcost;
    ev.steps.push_back(k);
    ev.log_cross_ij.push_back(a);
    ev.log_cross_ji.push_back(b);
    ev.log_dual += a + b;
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Cached evaluation. Everything that does not depend on Δ is factorized once
// per edge; a candidate then costs a few hundred 2x2 quadratic forms and two
// small assignments per step.

struct EvaluationCounters {
  std::atomic<std::uint64_t> quad_calls{0};
  std::atomic<std::uint64_t> quad_nanoseconds{0};
  std::atomic<std::uint64_t> dual_calls{0};
  std::atomic<std::uint64_t> dual_nanoseconds{0};

  void reset() {
    quad_calls = 0;
    quad_nanoseconds = 0;
    dual_calls = 0;
    dual_nanoseconds = 0;
  }
};

inline EvaluationCounters& evaluation_counters() {
  static EvaluationCounters counters;
  return counters;
}

namespace detail {

// log N(x; mean, cov) with cov fixed: log_norm − ½ (x − mean)ᵀ precision (x − mean).
struct Frozen2d {
  Vec2 mean = Vec2::Zero();
  Mat2 precision = Mat2::Zero();
  double log_norm = 0.0;

  Frozen2d() = default;
  Frozen2d(const Vec2& m, const Mat2& cov) : mean(m) {
    const auto llt = factorize(cov);
    precision = inverse(llt);
    log_norm = -std::log(2.0 * std::numbers::pi) - 0.5 * log_det(llt);
  }

  double operator()(const Vec2& r) const { return log_norm - 0.5 * r.dot(precision * r); }
};

// log BC between N(a, A) and N(b + shift, B) as a function of the shift:
// constant − ⅛ (a − b − shift)ᵀ ((A + B)/2)⁻¹ (a − b − shift).
struct FrozenBhattacharyya2d {
  Vec2 diff = Vec2::Zero();
  Mat2 avg_precision = Mat2::Zero();
  double constant = 0.0;

  FrozenBhattacharyya2d() = default;
  FrozenBhattacharyya2d(const Vec2& a, const Mat2& ca, const Vec2& b, const Mat2& cb) : diff(a - b) {
    const auto lla = factorize(ca);
    const auto llb = factorize(cb);
    const Mat2 avg = 0.5 * (ca + cb);
    const auto llavg = factorize(avg, "averaged covariance");
    avg_precision = inverse(llavg);
    constant = 0.25 * log_det(lla) + 0.25 * log_det(llb) - 0.5 * log_det(llavg);
  }

  double operator()(const Vec2& shift) const {
    const Vec2 r = diff - shift;
    return constant - 0.125 * r.dot(avg_precision * r);
  }
};

struct CrossSide {
  std::vector<Vec2> meas;                 // own measurements
  Permutation rho;                        // own object -> own measurement
  double log_s = 0.0;
  std::vector<Frozen2d> vs_posterior;     // other sensor's posterior tracks, unshifted
  std::vector<Frozen2d> vs_predicted;     // other sensor's predicted tracks, unshifted
};

struct CachedStep {
  CrossSide side_i;                       // i's measurements; other = j, shift +Δ
  CrossSide side_j;                       // j's measurements; other = i, shift −Δ
  // kappa_zi[m * M + mj], kappa_zj[m * M + mj]: the two 2-d blocks of κ.
  std::vector<FrozenBhattacharyya2d> kappa_zi;
  std::vector<FrozenBhattacharyya2d> kappa_zj;
};

inline CrossSide make_side(const FilterStep& own, const FilterStep& other, const SensorModel& own_sensor) {
  CrossSide side;
  side.meas = own.measurements;
  side.rho = own.rho;
  side.log_s = own.log_s;
  for (const auto& t : other.posterior.tracks) {
    side.vs_posterior.emplace_back(own_sensor.H * t.mean, own_sensor.R + own_sensor.H * t.cov * own_sensor.H.transpose());
  }
  for (const auto& t : other.predicted.tracks) {
    side.vs_predicted.emplace_back(own_sensor.H * t.mean, own_sensor.R + own_sensor.H * t.cov * own_sensor.H.transpose());
  }
  return side;
}

}  // namespace detail

class EdgePotential {
 public:
  EdgePotential(const FilterOutput& out_i, const FilterOutput& out_j, const PairSensors& sensors, int first,
                int last)
      : first_(first), last_(last), num_objects_(out_i.num_objects()) {
    detail::require_window(out_i, out_j, first, last);
    const SensorModel& hi = sensors.i;
    const SensorModel& hj = sensors.j;
    const int n = num_objects_;
    for (int k = first; k <= last; ++k) {
      const FilterStep& si = out_i.at(k);
      const FilterStep& sj = out_j.at(k);
      detail::CachedStep c;
      c.side_i = detail::make_side(si, sj, hi);
      c.side_j = detail::make_side(sj, si, hj);
      c.kappa_zi.resize(static_cast<std::size_t>(n * n));
      c.kappa_zj.resize(static_cast<std::size_t>(n * n));
      for (int m = 0; m < n; ++m) {
        const Gaussian& pi = si.predicted.tracks[m];
        const Gaussian& qi = si.posterior.tracks[m];
        for (int mj = 0; mj < n; ++mj) {
          const Gaussian& pj = sj.predicted.tracks[mj];
          const Gaussian& qj = sj.posterior.tracks[mj];
          // z^i block: i's prediction vs j's posterior shifted by +Δ.
          c.kappa_zi[m * n + mj] = detail::FrozenBhattacharyya2d(
              hi.H * pi.mean, hi.R + hi.H * pi.cov * hi.H.transpose(), hi.H * qj.mean,
              hi.R + hi.H * qj.cov * hi.H.transpose());
          // z^j block: j's prediction vs i's posterior shifted by −Δ.
          c.kappa_zj[m * n + mj] = detail::FrozenBhattacharyya2d(
              hj.H * pj.mean, hj.R + hj.H * pj.cov * hj.H.transpose(), hj.H * qi.mean,
              hj.R + hj.H * qi.cov * hj.H.transpose());
        }
      }
      steps_.push_back(std::move(c));
    }
  }

  int first_step() const { return first_; }
  int last_step() const { return last_; }

  double log_quad(const Vec2& theta_i, const Vec2& theta_j) const {
    const Vec2 delta = theta_j - theta_i;
    const int n = num_objects_;
    Eigen::MatrixXd cost(n, n);
    Permutation prev_ij, prev_ji;
    double total = 0.0;
    for (std::size_t s = 0; s < steps_.size(); ++s) {
      const auto& c = steps_[s];
      const auto [r_ij, gamma_ij] = cross(c.side_i, delta, /*posterior=*/true, cost);
      const auto [r_ji, gamma_ji] = cross(c.side_j, -delta, /*posterior=*/true, cost);
      if (s == 0) {
        prev_ij = gamma_ij;
        prev_ji = gamma_ji;
      }
      double a = 0.0, b = 0.0;
      for (int m = 0; m < n; ++m) a += kappa_term(c, m, prev_ij[m], delta);
      for (int mj = 0; mj < n; ++mj) b += kappa_term(c, prev_ji[mj], mj, delta);
      const double log_kappa = 0.5 * (checked_log_kappa(a) + checked_log_kappa(b));
      total += 0.5 * (r_ij + c.side_j.log_s) + 0.5 * (r_ji + c.side_i.log_s) - log_kappa;
      prev_ij = gamma_ij;
      prev_ji = gamma_ji;
    }
    return total;
  }

  double log_dual(const Vec2& theta_i, const Vec2& theta_j) const {
    const Vec2 delta = theta_j - theta_i;
    Eigen::MatrixXd cost(num_objects_, num_objects_);
    double total = 0.0;
    for (const auto& c : steps_) {
      total += cross(c.side_i, delta, /*posterior=*/false, cost).first;
      total += cross(c.side_j, -delta, /*posterior=*/false, cost).first;
    }
    return total;
  }

  double evaluate(LikelihoodVariant v, const Vec2& theta_i, const Vec2& theta_j) const {
    return v == LikelihoodVariant::quad ? log_quad(theta_i, theta_j) : log_dual(theta_i, theta_j);
  }

  /// Evaluates paired candidates (theta_i[l], theta_j[l]) and adds the
  /// elapsed time to the global counters.
  void evaluate_batch(LikelihoodVariant v, std::span<const Vec2> theta_i, std::span<const Vec2> theta_j,
                      std::span<double> out) const {
    if (theta_i.size() != theta_j.size() || out.size() != theta_i.size()) {
      throw std::invalid_argument("evaluate_batch: size mismatch");
    }
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = evaluate(v, theta_i[l], theta_j[l]);
    const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
    auto& ctr = evaluation_counters();
    if (v == LikelihoodVariant::quad) {
      ctr.quad_calls += out.size();
      ctr.quad_nanoseconds += static_cast<std::uint64_t>(ns);
    } else {
      ctr.dual_calls += out.size();
      ctr.dual_nanoseconds += static_cast<std::uint64_t>(ns);
    }
  }

 private:
  std::pair<double, Permutation> cross(const detail::CrossSide& side, const Vec2& shift, bool posterior,
                                       Eigen::MatrixXd& cost) const {
    const auto& dens = posterior ? side.vs_posterior : side.vs_predicted;
    const int n = num_objects_;
    for (int m = 0; m < n; ++m) {
      const Vec2 mean = dens[m].mean + shift;
      for (int o = 0; o < n; ++o) cost(o, m) = dens[m](side.meas[o] - mean);
    }
    AssignmentSolution sol = auction_assign(cost);
    return {sol.total_logcost, compose(sol.perm, side.rho)};
  }

  double kappa_term(const detail::CachedStep& c, int m, int mj, const Vec2& delta) const {
    const std::size_t idx = static_cast<std::size_t>(m * num_objects_ + mj);
    return c.kappa_zi[idx](delta) + c.kappa_zj[idx](-delta);
  }

  int first_;
  int last_;
  int num_objects_;
  std::vector<detail::CachedStep> steps_;
};

}  // namespace sepcal
