#include <gtest/gtest.h>

#include <sstream>

#include "sepcal/diagnostics.hpp"
#include "sepcal/local_tracker.hpp"
#include "sepcal/separable_likelihood.hpp"
#include "test_util.hpp"

using namespace sepcal;
using sepcal::testing::random_gaussian;
using sepcal::testing::sample;

namespace {

Gaussian scalar(double m, double v) { return Gaussian(Eigen::VectorXd::Constant(1, m), Eigen::MatrixXd::Constant(1, 1, v)); }

Eigen::MatrixXd mat(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

// Scalar random walk seen by two scalar sensors.
PairwiseJointModel scalar_model(double q, double hi, double ri, double hj, double rj, int horizon) {
  PairwiseJointModel m;
  m.F = mat(1.0);
  m.Q = mat(q);
  m.H_i = mat(hi);
  m.R_i = mat(ri);
  m.H_j = mat(hj);
  m.R_j = mat(rj);
  m.b_i = Eigen::VectorXd::Constant(1, 0.5);
  m.b_j = Eigen::VectorXd::Constant(1, -1.0);
  m.prior = scalar(0.3, 2.0);
  m.horizon = horizon;
  return m;
}

// Draws a state path and both measurement sequences from the model.
void simulate(const PairwiseJointModel& m, int steps, std::mt19937_64& rng, std::vector<Eigen::VectorXd>& zi,
              std::vector<Eigen::VectorXd>& zj) {
  Eigen::VectorXd x = sample(rng, m.prior);
  const Gaussian proc(Eigen::VectorXd::Zero(m.state_dim()), m.Q + 1e-12 * Eigen::MatrixXd::Identity(m.state_dim(), m.state_dim()));
  const Gaussian ni(Eigen::VectorXd::Zero(m.dim_i()), m.R_i), nj(Eigen::VectorXd::Zero(m.dim_j()), m.R_j);
  zi.clear();
  zj.clear();
  for (int a = 0; a < steps; ++a) {
    if (a > 0) x = m.F * x + sample(rng, proc);
    zi.push_back(m.H_i * x + m.b_i + sample(rng, ni));
    zj.push_back(m.H_j * x + m.b_j + sample(rng, nj));
  }
}

PairwiseJointModel standard_pair(double sigma_n, int horizon) {
  const Vec4 mean(500, 400, 5, -3);
  Mat4 cov = Mat4::Zero();
  cov.diagonal() << 50 * 50, 50 * 50, 5 * 5, 5 * 5;
  return PairwiseJointModel::lgss(MotionModel::standard(), SensorModel::position(sigma_n),
                                  SensorModel::position(sigma_n), Vec2(0, 0), Vec2(1000, 0), Gaussian(mean, cov),
                                  horizon);
}

}  // namespace

TEST(Kld, IdenticalIsZero) {
  std::mt19937_64 rng(1);
  const auto g = random_gaussian(rng, 4);
  EXPECT_NEAR(gaussian_kld(g, g), 0.0, 1e-12);
}

TEST(Kld, UnitShift) { EXPECT_NEAR(gaussian_kld(scalar(0, 1), scalar(1, 1)), 0.5, 1e-15); }

TEST(Kld, MatchesMonteCarlo) {
  std::mt19937_64 rng(2);
  const auto p = random_gaussian(rng, 4, 1.0, 1.0);
  const auto q = random_gaussian(rng, 4, 1.0, 1.0);
  const int n = 1000000;
  long double acc = 0.0L;
  for (int s = 0; s < n; ++s) {
    const Eigen::VectorXd x = sample(rng, p);
    acc += gaussian_logpdf(x, p) - gaussian_logpdf(x, q);
  }
  const double mc = static_cast<double>(acc / n);
  EXPECT_NEAR(mc, gaussian_kld(p, q), 0.01 * gaussian_kld(p, q));
}

TEST(Kld, RejectsDimensionMismatch) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(gaussian_kld(random_gaussian(rng, 2), random_gaussian(rng, 3)), std::invalid_argument);
}

TEST(Entropy, UnitVariance) { EXPECT_NEAR(gaussian_entropy(scalar(0, 1)), 1.4189385332046727, 1e-12); }

TEST(Entropy, ScalingByFourAddsLogTwo) {
  EXPECT_NEAR(gaussian_entropy(scalar(0, 12.0)) - gaussian_entropy(scalar(0, 3.0)), std::log(2.0), 1e-12);
}

TEST(Entropy, DiagonalIsSumOfMarginals) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
  c.diagonal() << 2.5, 0.4;
  EXPECT_NEAR(gaussian_entropy(c), gaussian_entropy(scalar(0, 2.5)) + gaussian_entropy(scalar(0, 0.4)), 1e-12);
}

TEST(JointModel, ConditionalMatchesCentralizedFilter) {
  std::mt19937_64 rng(4);
  const auto m = standard_pair(10.0, 6);
  std::vector<Eigen::VectorXd> zi, zj;
  simulate(m, 5, rng, zi, zj);
  const Gaussian c = centralized_pair_update(m, zi, zj);

  const JointMoments jm = joint_moments(m, 6);
  std::vector<int> z = jm.zi, h = jm.hi;
  z.insert(z.end(), jm.zj.begin(), jm.zj.end());
  h.insert(h.end(), jm.hj.begin(), jm.hj.end());
  const auto cond = detail::condition(jm, z, h, h);
  Eigen::VectorXd data(h.size()), centre(h.size());
  for (int a = 0; a < 5; ++a) {
    data.segment(2 * a, 2) = zi[a];
    data.segment(10 + 2 * a, 2) = zj[a];
  }
  for (std::size_t r = 0; r < h.size(); ++r) centre[r] = jm.mean[h[r]];
  Eigen::VectorXd mz(z.size());
  for (std::size_t r = 0; r < z.size(); ++r) mz[r] = jm.mean[z[r]];
  const Eigen::VectorXd mean = mz + cond.gain * (data - centre);
  EXPECT_LT((mean - c.mean).norm(), 1e-6 * (1.0 + c.mean.norm()));
  EXPECT_LT((cond.cov - c.cov).norm(), 1e-6 * c.cov.norm());
}

TEST(JointModel, UninformativeSensorsKeepPriorPrediction) {
  auto m = standard_pair(1e6, 4);
  std::mt19937_64 rng(5);
  std::vector<Eigen::VectorXd> zi, zj;
  simulate(m, 3, rng, zi, zj);
  const Gaussian c = centralized_pair_update(m, zi, zj);
  Eigen::MatrixXd P = m.prior.cov;
  for (int a = 0; a < 3; ++a) P = m.F * P * m.F.transpose() + m.Q;
  const Eigen::MatrixXd cross = m.H_i * P * m.H_j.transpose();
  EXPECT_LT((c.cov.topRightCorner(2, 2) - cross).norm(), 1e-3 * cross.norm());
  Eigen::VectorXd x = m.prior.mean;
  for (int a = 0; a < 3; ++a) x = m.F * x;
  // Each update moves the mean by about (P / R) * sqrt(R), a few millimetres here.
  EXPECT_LT((c.mean.head(2) - (m.H_i * x + m.b_i)).norm(), 0.1);
}

TEST(JointModel, BlindSensorDecouples) {
  auto m = standard_pair(5.0, 5);
  m.H_i.setZero();
  std::mt19937_64 rng(6);
  std::vector<Eigen::VectorXd> zi, zj;
  simulate(m, 4, rng, zi, zj);
  const Gaussian c = centralized_pair_update(m, zi, zj);
  EXPECT_LT((c.cov.topLeftCorner(2, 2) - m.R_i).norm(), 1e-12);
  EXPECT_LT(c.cov.topRightCorner(2, 2).norm(), 1e-12);
}

TEST(JointModel, MatchesGridFilter) {
  const auto m = scalar_model(0.3, 1.0, 0.5, 0.7, 0.8, 6);
  std::mt19937_64 rng(7);
  std::vector<Eigen::VectorXd> zi, zj;
  simulate(m, 5, rng, zi, zj);
  const Gaussian c = centralized_pair_update(m, zi, zj);

  // Dense grid over the scalar state.
  const int n = 6001;
  const double lo = -25.0, hi = 25.0, h = (hi - lo) / (n - 1);
  std::vector<double> grid(n), belief(n), next(n);
  for (int g = 0; g < n; ++g) grid[g] = lo + g * h;
  auto npdf = [](double x, double mu, double var) {
    return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2.0 * std::numbers::pi * var);
  };
  for (int g = 0; g < n; ++g) belief[g] = npdf(grid[g], 0.3, 2.0);
  const double qvar = 0.3;
  const int reach = static_cast<int>(std::ceil(12.0 * std::sqrt(qvar) / h));
  for (int a = 0; a < 5; ++a) {
    double total = 0.0;
    for (int g = 0; g < n; ++g) {
      belief[g] *= npdf(zi[a][0], grid[g] + 0.5, 0.5) * npdf(zj[a][0], 0.7 * grid[g] - 1.0, 0.8);
      total += belief[g] * h;
    }
    for (double& v : belief) v /= total;
    for (int g = 0; g < n; ++g) {
      double s = 0.0;
      for (int d = std::max(0, g - reach); d <= std::min(n - 1, g + reach); ++d) s += belief[d] * npdf(grid[g], grid[d], qvar) * h;
      next[g] = s;
    }
    belief.swap(next);
  }
  for (const auto& [u, v] : {std::pair{0.0, 0.0}, {1.0, -0.5}, {-1.5, 1.0}}) {
    Eigen::VectorXd z(2);
    z << c.mean[0] + u, c.mean[1] + v;
    double grid_density = 0.0;
    for (int g = 0; g < n; ++g) {
      grid_density += belief[g] * npdf(z[0], grid[g] + 0.5, 0.5) * npdf(z[1], 0.7 * grid[g] - 1.0, 0.8) * h;
    }
    const double exact = std::exp(gaussian_logpdf(z, c));
    EXPECT_NEAR(grid_density, exact, 1e-4 * exact);
  }
}

TEST(KldReport, FirstStepHasNothingToApproximate) {
  const auto m = standard_pair(10.0, 1);
  const auto r = quad_dual_kld_report(m, 1);
  for (double v : {r.kld_quad, r.kld_dual, r.mi_bound, r.entropy_bound}) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
  EXPECT_NEAR(r.kld_quad, 0.0, 1e-9);
  EXPECT_NEAR(r.mi_bound, 0.0, 1e-9);
}

TEST(KldReport, IdenticalSensorsFavourQuad) {
  const auto r = quad_dual_kld_report(standard_pair(10.0, 8), 8);
  EXPECT_LT(r.kld_quad, r.kld_dual);
  EXPECT_LE(r.kld_quad, r.mi_bound);
  EXPECT_LE(r.entropy_bound, r.dual_entropy_bound);
}

TEST(KldReport, DecompositionsHold) {
  std::mt19937_64 rng(8);
  for (int n = 0; n < 30; ++n) {
    const auto m = random_symmetric_instance(rng);
    const auto r = quad_dual_kld_report(m, m.horizon);
    EXPECT_NEAR(r.kld_quad, r.mi_bound + r.expected_log_kappa, 1e-7 * (1.0 + r.mi_bound));
    EXPECT_NEAR(r.kld_dual, r.dual_mi_sum, 1e-7 * (1.0 + r.kld_dual));
    EXPECT_LE(r.expected_log_kappa, 1e-12);
  }
}

TEST(KldReport, BoundChainOnRandomInstances) {
  const auto rows = run_diagnostics(100, 42);
  int quad_better = 0;
  for (const auto& row : rows) {
    const auto& r = row.report;
    EXPECT_LE(r.kld_quad, r.mi_bound + kBoundTolerance) << row.instance;
    EXPECT_LE(r.mi_bound, r.entropy_bound + kBoundTolerance) << row.instance;
    EXPECT_LE(r.entropy_bound, r.dual_entropy_bound + kBoundTolerance) << row.instance;
    EXPECT_TRUE(row.bound_chain);
    quad_better += row.quad_better;
  }
  EXPECT_GE(quad_better, 95);
}

TEST(KldReport, ExpectedDivergenceMatchesSampledHistories) {
  const auto m = scalar_model(0.5, 1.0, 0.4, 1.0, 0.4, 4);
  const auto r = quad_dual_kld_report(m, 4);
  const JointMoments jm = joint_moments(m, 4);
  std::vector<int> z = jm.zi, h = jm.hi;
  z.insert(z.end(), jm.zj.begin(), jm.zj.end());
  h.insert(h.end(), jm.hj.begin(), jm.hj.end());
  const auto p = detail::condition(jm, z, h, h);
  const auto a = detail::condition(jm, z, jm.hj, h);
  const auto b = detail::condition(jm, z, jm.hi, h);
  Eigen::VectorXd centre(h.size()), mz(z.size());
  for (std::size_t i = 0; i < h.size(); ++i) centre[i] = jm.mean[h[i]];
  for (std::size_t i = 0; i < z.size(); ++i) mz[i] = jm.mean[z[i]];

  std::mt19937_64 rng(9);
  const int n = 200000;
  double acc = 0.0;
  std::vector<Eigen::VectorXd> zi, zj;
  for (int s = 0; s < n; ++s) {
    simulate(m, 3, rng, zi, zj);
    Eigen::VectorXd d(h.size());
    for (int k = 0; k < 3; ++k) {
      d[k] = zi[k][0];
      d[3 + k] = zj[k][0];
    }
    const Gaussian gp(mz + p.gain * (d - centre), p.cov);
    const Gaussian ga(mz + a.gain * (d - centre), a.cov);
    const Gaussian gb(mz + b.gain * (d - centre), b.cov);
    // Normalized geometric mean of ga and gb.
    const Eigen::MatrixXd prec = 0.5 * (ga.cov.inverse() + gb.cov.inverse());
    const Eigen::MatrixXd cov = prec.inverse();
    const Eigen::VectorXd mean = cov * 0.5 * (ga.cov.inverse() * ga.mean + gb.cov.inverse() * gb.mean);
    acc += gaussian_kld(gp, Gaussian(mean, cov));
  }
  EXPECT_NEAR(acc / n, r.kld_quad, 0.02 * r.kld_quad);
}

TEST(KldReport, CsvHasHeaderAndOneLinePerInstance) {
  std::ostringstream os;
  write_diagnostics_csv(os, run_diagnostics(5, 1));
  std::istringstream is(os.str());
  std::string line;
  int lines = 0;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("instance,seed,step,kld_quad", 0), 0u);
  while (std::getline(is, line)) ++lines;
  EXPECT_EQ(lines, 5);
}

TEST(QuadVersusCentralized, FirstStepDiffersOnlyByKappa) {
  // Single object, both filters start from the same prior; with no history
  // the four factors pair into two chain-rule factorizations of p.
  const MotionModel motion = MotionModel::standard();
  const SensorModel s = SensorModel::position(10.0);
  const Vec2 ti(0, 0), tj(1000, 0);
  Vec4 m0(400, 300, 5, -2);
  Mat4 p0 = Mat4::Zero();
  p0.diagonal() << 30 * 30, 30 * 30, 3 * 3, 3 * 3;
  const Gaussian x1(motion.F * m0, motion.F * p0 * motion.F.transpose() + motion.Q);
  const auto model = PairwiseJointModel::lgss(motion, s, s, ti, tj, x1, 1);

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::VectorXd> zi, zj;
    simulate(model, 1, rng, zi, zj);
    TrackSet init_i{{Gaussian(m0, p0)}, 0};
    TrackSet init_j = init_i;
    init_j.tracks[0].mean.head<2>() -= tj;
    const auto out_i = run_local_filter({{Vec2(zi[0])}}, init_i, 1, motion, s, 0);
    const auto out_j = run_local_filter({{Vec2(zj[0])}}, init_j, 1, motion, s, 1);
    const auto ev = quad_likelihood(out_i, out_j, ti, tj, PairSensors{s, s}, 1, 1);
    Eigen::VectorXd z(4);
    z << zi[0], zj[0];
    const double central = gaussian_logpdf(z, centralized_pair_update(model, {}, {}));
    EXPECT_NEAR(ev.log_q[0], central - ev.log_kappa[0], 1e-8 * std::abs(central));
    EXPECT_LE(ev.log_kappa[0], 0.0);
  }
}
