#pragma once

// Closed-form information measures for a single object seen by two sensors.
//
// For a fixed offset pair everything is jointly Gaussian, so every density in
// the quad-term and dual-term analysis is a conditional of one joint Gaussian
// over (x_k, zi_k, zj_k, zi_{1:k-1}, zj_{1:k-1}). Divergences are averaged over
// the histories: conditional covariances do not depend on the data and the
// conditional means are linear in it.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sepcal/errors.hpp"
#include "sepcal/gaussian.hpp"
#include "sepcal/lgss.hpp"

namespace sepcal {

inline double gaussian_kld(const Gaussian& p, const Gaussian& q) {
  validate(p);
  validate(q);
  detail::require_same_dim(p.dim(), q.dim(), "gaussian_kld");
  const auto lq = detail::factorize(q.cov, "gaussian_kld: second covariance");
  const auto lp = detail::factorize(p.cov, "gaussian_kld: first covariance");
  const Eigen::VectorXd d = q.mean - p.mean;
  const double tr = lq.solve(p.cov).trace();
  const double quad = d.dot(lq.solve(d));
  const double kld = 0.5 * (tr + quad - static_cast<double>(p.dim()) + detail::log_det(lq) - detail::log_det(lp));
  return std::max(kld, 0.0);
}

/// ½ log((2πe)^d |Σ|)
inline double gaussian_entropy(const Gaussian& g) {
  validate(g);
  const auto llt = detail::factorize(g.cov, "gaussian_entropy");
  return 0.5 * (static_cast<double>(g.dim()) * std::log(2.0 * std::numbers::pi * std::numbers::e) + detail::log_det(llt));
}

inline double gaussian_entropy(const Eigen::MatrixXd& cov) {
  return gaussian_entropy(Gaussian(Eigen::VectorXd::Zero(cov.rows()), cov));
}

// ---------------------------------------------------------------------------

/// Single object, two linear sensors z_s = H_s x + b_s + v_s, fixed offsets.
struct PairwiseJointModel {
  Eigen::MatrixXd F, Q;
  Eigen::MatrixXd H_i, R_i, H_j, R_j;
  Eigen::VectorXd b_i, b_j;
  Gaussian prior;  // x_1 before any measurement
  int horizon = 1;

  int state_dim() const { return static_cast<int>(F.rows()); }
  int dim_i() const { return static_cast<int>(H_i.rows()); }
  int dim_j() const { return static_cast<int>(H_j.rows()); }

  /// Position sensors in local frames: z_s = H (x − [θ_s; 0]) + v_s.
  static PairwiseJointModel lgss(const MotionModel& motion, const SensorModel& si, const SensorModel& sj,
                                 const Vec2& theta_i, const Vec2& theta_j, const Gaussian& prior, int horizon) {
    PairwiseJointModel m;
    m.F = motion.F;
    m.Q = motion.Q;
    m.H_i = si.H;
    m.R_i = si.R;
    m.H_j = sj.H;
    m.R_j = sj.R;
    m.b_i = -theta_i;
    m.b_j = -theta_j;
    m.prior = prior;
    m.horizon = horizon;
    return m;
  }

  void validate() const {
    const auto n = F.rows();
    if (F.cols() != n || Q.rows() != n || Q.cols() != n || prior.dim() != n || prior.cov.rows() != n ||
        H_i.cols() != n || H_j.cols() != n || R_i.rows() != H_i.rows() || R_i.cols() != H_i.rows() ||
        R_j.rows() != H_j.rows() || R_j.cols() != H_j.rows() || b_i.size() != H_i.rows() ||
        b_j.size() != H_j.rows()) {
      throw std::invalid_argument("pairwise joint model: inconsistent dimensions");
    }
    if (horizon < 1) throw std::invalid_argument("pairwise joint model: horizon must be >= 1");
  }
};

/// Joint moments of (x_k, zi_k, zj_k, zi_1..zi_{k-1}, zj_1..zj_{k-1}).
struct JointMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::vector<int> x, zi, zj, hi, hj;
};

inline JointMoments joint_moments(const PairwiseJointModel& m, int k) {
  m.validate();
  if (k < 1 || k > m.horizon) throw std::out_of_range("joint_moments: step outside horizon");
  const int n = m.state_dim(), di = m.dim_i(), dj = m.dim_j();

  // State means, covariances and transition powers for steps 1..k.
  std::vector<Eigen::VectorXd> mu(k + 1);
  std::vector<Eigen::MatrixXd> P(k + 1);
  mu[1] = m.prior.mean;
  P[1] = m.prior.cov;
  for (int a = 2; a <= k; ++a) {
    mu[a] = m.F * mu[a - 1];
    P[a] = m.F * P[a - 1] * m.F.transpose() + m.Q;
  }
  auto cross = [&](int a, int b) -> Eigen::MatrixXd {  // Cov(x_a, x_b)
    if (a <= b) {
      Eigen::MatrixXd c = P[a];
      for (int s = a; s < b; ++s) c = c * m.F.transpose();
      return c;
    }
    Eigen::MatrixXd c = P[b];
    for (int s = b; s < a; ++s) c = m.F * c;
    return c;
  };

  // Variable list: (kind, step); kind 0 = state, 1 = zi, 2 = zj.
  struct Var {
    int kind, step, offset, dim;
  };
  std::vector<Var> vars;
  JointMoments jm;
  int off = 0;
  auto add = [&](int kind, int step, std::vector<int>& idx) {
    const int d = kind == 0 ? n : (kind == 1 ? di : dj);
    vars.push_back({kind, step, off, d});
    for (int r = 0; r < d; ++r) idx.push_back(off + r);
    off += d;
  };
  add(0, k, jm.x);
  add(1, k, jm.zi);
  add(2, k, jm.zj);
  for (int a = 1; a < k; ++a) add(1, a, jm.hi);
  for (int a = 1; a < k; ++a) add(2, a, jm.hj);

  auto Hof = [&](int kind) -> const Eigen::MatrixXd& { return kind == 1 ? m.H_i : m.H_j; };
  jm.mean.resize(off);
  jm.cov.setZero(off, off);
  for (const auto& u : vars) {
    if (u.kind == 0) {
      jm.mean.segment(u.offset, u.dim) = mu[u.step];
    } else {
      jm.mean.segment(u.offset, u.dim) = Hof(u.kind) * mu[u.step] + (u.kind == 1 ? m.b_i : m.b_j);
    }
    for (const auto& v : vars) {
      Eigen::MatrixXd c = cross(u.step, v.step);
      if (u.kind != 0) c = Hof(u.kind) * c;
      if (v.kind != 0) c = c * Hof(v.kind).transpose();
      if (u.kind != 0 && u.kind == v.kind && u.step == v.step) c += u.kind == 1 ? m.R_i : m.R_j;
      jm.cov.block(u.offset, v.offset, u.dim, v.dim) = c;
    }
  }
  jm.cov = 0.5 * (jm.cov + jm.cov.transpose());
  return jm;
}

namespace detail {

inline std::vector<int> concat(std::initializer_list<const std::vector<int>*> parts) {
  std::vector<int> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

inline Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = m(rows[r], cols[c]);
  return out;
}

// Conditional of `target` given `given`: covariance and the gain acting on
// centred values of `data` (a superset of `given`; unused columns are zero).
struct Conditional {
  Eigen::MatrixXd cov;
  Eigen::MatrixXd gain;
};

inline Conditional condition(const JointMoments& jm, const std::vector<int>& target, const std::vector<int>& given,
                             const std::vector<int>& data) {
  Conditional c;
  const Eigen::MatrixXd stt = select(jm.cov, target, target);
  c.gain = Eigen::MatrixXd::Zero(target.size(), data.size());
  if (given.empty()) {
    c.cov = stt;
    return c;
  }
  const Eigen::MatrixXd stg = select(jm.cov, target, given);
  const auto llt = factorize(select(jm.cov, given, given), "conditioning covariance");
  const Eigen::MatrixXd g = llt.solve(stg.transpose()).transpose();
  c.cov = stt - g * stg.transpose();
  c.cov = 0.5 * (c.cov + c.cov.transpose());
  for (std::size_t a = 0; a < given.size(); ++a) {
    const auto pos = std::find(data.begin(), data.end(), given[a]) - data.begin();
    if (pos == static_cast<long>(data.size())) throw std::logic_error("condition: given variable not in data set");
    c.gain.col(pos) = g.col(a);
  }
  return c;
}

inline double log_det_spd(const Eigen::MatrixXd& m) { return log_det(factorize(m, "log determinant")); }

// E over the data of D(p || q) with conditional means linear in the data.
inline double expected_kld(const Conditional& p, const Conditional& q, const Eigen::MatrixXd& data_cov) {
  const auto lq = factorize(q.cov, "expected_kld");
  const Eigen::MatrixXd g = p.gain - q.gain;
  const Eigen::MatrixXd spread = g * data_cov * g.transpose() + p.cov;
  const double d = static_cast<double>(p.cov.rows());
  return 0.5 * (lq.solve(spread).trace() - d + log_det(lq) - log_det_spd(p.cov));
}

// ½ log |Σ_{A|C}| / |Σ_{A|B,C}|
inline double gaussian_mi(const JointMoments& jm, const std::vector<int>& a, const std::vector<int>& b,
                          const std::vector<int>& c) {
  const auto all = concat({&b, &c});
  const auto outer = condition(jm, a, c, all);
  const auto inner = condition(jm, a, all, all);
  return 0.5 * (log_det_spd(outer.cov) - log_det_spd(inner.cov));
}

inline double state_entropy(const JointMoments& jm, const std::vector<int>& given) {
  return gaussian_entropy(condition(jm, jm.x, given, given).cov);
}

}  // namespace detail

/// p(zi_k, zj_k | zi_{1:k-1}, zj_{1:k-1}) by a Kalman filter on stacked
/// measurements; k = hist_i.size() + 1.
inline Gaussian centralized_pair_update(const PairwiseJointModel& m, const std::vector<Eigen::VectorXd>& hist_i,
                                        const std::vector<Eigen::VectorXd>& hist_j) {
  m.validate();
  if (hist_i.size() != hist_j.size()) throw std::invalid_argument("centralized_pair_update: history lengths differ");
  const int k = static_cast<int>(hist_i.size()) + 1;
  if (k > m.horizon) throw std::out_of_range("centralized_pair_update: step beyond horizon");
  const int n = m.state_dim(), di = m.dim_i(), dj = m.dim_j();
  Eigen::MatrixXd H(di + dj, n);
  H << m.H_i, m.H_j;
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(di + dj, di + dj);
  R.topLeftCorner(di, di) = m.R_i;
  R.bottomRightCorner(dj, dj) = m.R_j;
  Eigen::VectorXd b(di + dj);
  b << m.b_i, m.b_j;

  Eigen::VectorXd x = m.prior.mean;
  Eigen::MatrixXd P = m.prior.cov;
  for (int a = 0; a + 1 < k; ++a) {
    Eigen::VectorXd z(di + dj);
    z << hist_i[a], hist_j[a];
    const Eigen::MatrixXd S = H * P * H.transpose() + R;
    const auto llt = detail::factorize(S, "centralized innovation covariance");
    const Eigen::MatrixXd K = llt.solve(H * P).transpose();
    x += K * (z - H * x - b);
    const Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(n, n) - K * H;
    P = IKH * P * IKH.transpose() + K * R * K.transpose();
    x = m.F * x;
    P = m.F * P * m.F.transpose() + m.Q;
    P = 0.5 * (P + P.transpose());
  }
  Eigen::MatrixXd S = H * P * H.transpose() + R;
  return Gaussian(H * x + b, 0.5 * (S + S.transpose()));
}

struct KldReport {
  int step = 0;
  double kld_quad = 0.0;            // E D(p || q)
  double kld_dual = 0.0;            // E D(p || u)
  double mi_bound = 0.0;            // ½ I(z; h_i | h_j) + ½ I(z; h_j | h_i)
  double entropy_bound = 0.0;       // state-entropy bound on the quad term
  double dual_entropy_bound = 0.0;  // state-entropy bound on the dual term
  double expected_log_kappa = 0.0;
  double dual_mi_sum = 0.0;         // I(zj; hj | hi) + I(zi; hi | hj) + I(zi; zj | hi, hj)
};

/// Divergences of the quad-term (q) and dual-term (u) surrogates from the
/// centralized update p at step k, averaged over the measurement histories.
inline KldReport quad_dual_kld_report(const PairwiseJointModel& m, int k) {
  using detail::concat;
  using detail::condition;
  const JointMoments jm = joint_moments(m, k);
  const auto z = concat({&jm.zi, &jm.zj});
  const auto h = concat({&jm.hi, &jm.hj});
  const Eigen::MatrixXd hcov = detail::select(jm.cov, h, h);

  const auto p = condition(jm, z, h, h);
  const auto a = condition(jm, z, jm.hj, h);  // given sensor j's history
  const auto b = condition(jm, z, jm.hi, h);  // given sensor i's history

  // q ∝ (a b)^{1/2}
  const auto la = detail::factorize(a.cov, "quad factor a");
  const auto lb = detail::factorize(b.cov, "quad factor b");
  const Eigen::MatrixXd Ia = detail::inverse(la), Ib = detail::inverse(lb);
  detail::Conditional q;
  q.cov = detail::inverse(detail::factorize(Eigen::MatrixXd(0.5 * (Ia + Ib)), "quad precision"));
  q.gain = q.cov * 0.5 * (Ia * a.gain + Ib * b.gain);

  // u = p(zi | hj) p(zj | hi)
  const auto ui = condition(jm, jm.zi, jm.hj, h);
  const auto uj = condition(jm, jm.zj, jm.hi, h);
  detail::Conditional u;
  const int di = m.dim_i(), dj = m.dim_j();
  u.cov = Eigen::MatrixXd::Zero(di + dj, di + dj);
  u.cov.topLeftCorner(di, di) = ui.cov;
  u.cov.bottomRightCorner(dj, dj) = uj.cov;
  u.gain.resize(di + dj, static_cast<Eigen::Index>(h.size()));
  u.gain << ui.gain, uj.gain;

  KldReport r;
  r.step = k;
  r.kld_quad = std::max(0.0, detail::expected_kld(p, q, hcov));
  r.kld_dual = std::max(0.0, detail::expected_kld(p, u, hcov));
  const double lp = detail::log_det_spd(p.cov);
  r.mi_bound = 0.25 * (detail::log_det(la) - lp) + 0.25 * (detail::log_det(lb) - lp);

  // log BC(a, b) averaged over the histories.
  const Eigen::MatrixXd avg = 0.5 * (a.cov + b.cov);
  const auto lavg = detail::factorize(avg, "kappa average covariance");
  const Eigen::MatrixXd g = a.gain - b.gain;
  r.expected_log_kappa = -0.125 * lavg.solve(g * hcov * g.transpose()).trace() -
                         0.5 * (detail::log_det(lavg) - 0.5 * (detail::log_det(la) + detail::log_det(lb)));

  using detail::state_entropy;
  const double h_both = state_entropy(jm, h);
  const double h_i = state_entropy(jm, jm.hi);
  const double h_j = state_entropy(jm, jm.hj);
  const double h_j_zj = state_entropy(jm, concat({&jm.hj, &jm.zj}));
  const double h_i_zi = state_entropy(jm, concat({&jm.hi, &jm.zi}));
  const double h_both_zj = state_entropy(jm, concat({&jm.hi, &jm.hj, &jm.zj}));
  const double h_both_zi = state_entropy(jm, concat({&jm.hi, &jm.hj, &jm.zi}));
  r.entropy_bound = 0.5 * ((h_j - h_both) + (h_i - h_both)) + 0.5 * ((h_j_zj - h_both_zj) + (h_i_zi - h_both_zi));
  r.dual_entropy_bound = (h_j + h_i) - (h_both + std::max(h_both_zj, h_both_zi));

  r.dual_mi_sum = detail::gaussian_mi(jm, jm.zj, jm.hj, jm.hi) + detail::gaussian_mi(jm, jm.zi, jm.hi, jm.hj) +
                  detail::gaussian_mi(jm, jm.zi, jm.zj, h);
  return r;
}

// ---------------------------------------------------------------------------
// Random instances and CSV rows.

/// Identical position sensors, random noise levels, prior and step.
inline PairwiseJointModel random_symmetric_instance(std::mt19937_64& rng, int min_step = 2, int max_step = 10) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const MotionModel motion = MotionModel::make(1.0, uniform(0.05, 2.0), 0.25, 0.5, 0.5, 1.0);
  const SensorModel s = SensorModel::position(uniform(1.0, 20.0));
  const Vec2 ti(uniform(-500, 500), uniform(-500, 500)), tj(uniform(-500, 500), uniform(-500, 500));
  Vec4 mean(uniform(0, 1000), uniform(0, 1000), uniform(-10, 10), uniform(-10, 10));
  Vec4 var(std::pow(uniform(10, 200), 2), 0.0, std::pow(uniform(1, 20), 2), 0.0);
  var[1] = var[0];
  var[3] = var[2];
  std::uniform_int_distribution<int> step(min_step, max_step);
  const int k = step(rng);
  return PairwiseJointModel::lgss(motion, s, s, ti, tj, Gaussian(mean, var.asDiagonal().toDenseMatrix()), k);
}

struct DiagnosticRow {
  int instance = 0;
  std::uint64_t seed = 0;
  KldReport report;
  bool bound_chain = false;  // D(p||q) <= MI bound <= entropy bound
  bool quad_better = false;  // D(p||q) < D(p||u)
};

inline constexpr double kBoundTolerance = 1e-10;

inline DiagnosticRow diagnose_instance(int instance, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto m = random_symmetric_instance(rng);
  DiagnosticRow row;
  row.instance = instance;
  row.seed = seed;
  row.report = quad_dual_kld_report(m, m.horizon);
  const auto& r = row.report;
  row.bound_chain = r.kld_quad <= r.mi_bound + kBoundTolerance && r.mi_bound <= r.entropy_bound + kBoundTolerance;
  row.quad_better = r.kld_quad < r.kld_dual + kBoundTolerance;
  return row;
}

inline std::vector<DiagnosticRow> run_diagnostics(int count, std::uint64_t seed) {
  std::vector<DiagnosticRow> rows;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::vector<std::uint32_t> seeds(static_cast<std::size_t>(std::max(count, 0)));
  seq.generate(seeds.begin(), seeds.end());
  for (int n = 0; n < count; ++n) rows.push_back(diagnose_instance(n, seeds[n]));
  return rows;
}

inline void write_diagnostics_csv(std::ostream& os, const std::vector<DiagnosticRow>& rows) {
  os << "instance,seed,step,kld_quad,kld_dual,mi_bound,entropy_bound,dual_entropy_bound,expected_log_kappa,"
        "bound_chain,quad_better\n";
  char buf[512];
  for (const auto& row : rows) {
    const auto& r = row.report;
    std::snprintf(buf, sizeof buf, "%d,%llu,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", row.instance,
                  static_cast<unsigned long long>(row.seed), r.step, r.kld_quad, r.kld_dual, r.mi_bound,
                  r.entropy_bound, r.dual_entropy_bound, r.expected_log_kappa, row.bound_chain ? 1 : 0,
                  row.quad_better ? 1 : 0);
    os << buf;
  }
}

}  // namespace sepcal
