#include <gtest/gtest.h>

#include <random>

#include "sepcal/separable_likelihood.hpp"
#include "test_util.hpp"

using namespace sepcal;

namespace {

struct PairFixture {
  Scenario sc;
  FilterOutput out_i, out_j;
  PairSensors sensors;
  Vec2 theta_i, theta_j;
};

PairFixture make_pair(std::uint64_t seed, double sigma_n = 10.0, int num_objects = 4, int first = 21,
                      int length = 10, int cols = 2) {
  ScenarioConfig cfg;
  cfg.rows = 1;
  cfg.cols = cols;
  cfg.num_objects = num_objects;
  cfg.num_steps = first + length;
  cfg.sigma_n = sigma_n;
  cfg.seed = seed;
  PairFixture f;
  f.sc = generate_scenario(cfg);
  const FilterWindow w = FilterWindow::trailing(first, length);
  f.out_i = run_local_filter(f.sc, 0, w);
  f.out_j = run_local_filter(f.sc, 1, w);
  f.sensors = {SensorModel::position(sigma_n), SensorModel::position(sigma_n)};
  f.theta_i = f.sc.network.positions[0];
  f.theta_j = f.sc.network.positions[1];
  return f;
}

// Track m of sensor s follows the object in measurement slot m at the seed step.
Permutation true_correspondence(const Scenario& sc, int seed_step, int si, int sj) {
  const Permutation& ai = sc.true_associations[si][seed_step - 1];
  const Permutation inv_j = inverse_permutation(sc.true_associations[sj][seed_step - 1]);
  Permutation g(ai.size());
  for (std::size_t m = 0; m < ai.size(); ++m) g[m] = inv_j[ai[m]];
  return g;
}

FilterStep hand_step(const std::vector<Gaussian>& pred, const std::vector<Gaussian>& post,
                     const std::vector<Vec2>& z) {
  FilterStep st;
  st.predicted.tracks = pred;
  st.posterior.tracks = post;
  st.measurements = z;
  st.tau = identity_permutation(z.size());
  st.rho = st.tau;
  st.log_s = 0.0;
  return st;
}

// ∫ N(z; x + shift, r) N(x; m, p) dx by the trapezoid rule.
double grid_convolution_1d(double z, double shift, double r, double m, double p) {
  const int n = 400001;
  const double half = 14.0 * std::sqrt(p);
  const double h = 2.0 * half / (n - 1);
  const double c = 1.0 / (2.0 * std::numbers::pi * std::sqrt(r * p));
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = m - half + i * h;
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += w * c * std::exp(-0.5 * (z - x - shift) * (z - x - shift) / r - 0.5 * (x - m) * (x - m) / p);
  }
  return std::log(acc * h);
}

}  // namespace

TEST(Correspondence, TruthRecoveredWhenNoiseless) {
  // Exactly zero noise makes the posterior covariances singular.
  const PairFixture f = make_pair(5, 1e-3);
  const Permutation truth = true_correspondence(f.sc, 20, 0, 1);
  for (int k = 21; k <= 30; ++k) {
    const auto c = estimate_correspondence(f.out_i.at(k), f.out_j.at(k).posterior, f.theta_i, f.theta_j,
                                           f.sensors.i);
    EXPECT_EQ(c.gamma, truth) << "step " << k;
    const auto back = estimate_correspondence(f.out_j.at(k), f.out_i.at(k).posterior, f.theta_j, f.theta_i,
                                              f.sensors.j);
    EXPECT_EQ(back.gamma, inverse_permutation(truth));
  }
}

TEST(Correspondence, SingleObjectIsTrivial) {
  const PairFixture f = make_pair(2, 10.0, 1);
  const auto c = estimate_correspondence(f.out_i.at(25), f.out_j.at(25).posterior, f.theta_i, f.theta_j,
                                         f.sensors.i);
  EXPECT_EQ(c.gamma, Permutation{0});
}

TEST(Correspondence, EquivariantUnderRelabelling) {
  const PairFixture f = make_pair(9);
  const Permutation swap{2, 0, 3, 1};
  for (int k = 21; k <= 30; ++k) {
    TrackSet relabelled = f.out_j.at(k).posterior;
    for (int a = 0; a < 4; ++a) relabelled.tracks[a] = f.out_j.at(k).posterior.tracks[swap[a]];
    const auto c0 = estimate_correspondence(f.out_i.at(k), f.out_j.at(k).posterior, f.theta_i, f.theta_j,
                                            f.sensors.i);
    const auto c1 = estimate_correspondence(f.out_i.at(k), relabelled, f.theta_i, f.theta_j, f.sensors.i);
    EXPECT_EQ(c1.gamma, compose(inverse_permutation(swap), c0.gamma));
  }
}

TEST(EvalR, SingleObjectAtModeIsNormalizer) {
  const Gaussian post(Vec4(100, 50, 1, 1), Eigen::Vector4d(30, 20, 5, 5).asDiagonal().toDenseMatrix());
  const SensorModel s = SensorModel::position(10.0);
  const Vec2 theta_i(0, 0), theta_j(1000, 0);
  const Vec2 z = post.mean.head<2>() + theta_j - theta_i;
  const FilterStep own = hand_step({post}, {post}, {z});
  TrackSet other;
  other.tracks = {post};
  const Mat2 cov = s.R + s.H * post.cov * s.H.transpose();
  EXPECT_NEAR(eval_r(own, other, theta_i, theta_j, {0}, s),
              -std::log(2.0 * std::numbers::pi * std::sqrt(cov.determinant())), 1e-12);
}

TEST(EvalR, InvariantUnderCommonTranslation) {
  const PairFixture f = make_pair(4);
  const Vec2 shift(1234.5, -987.25);
  for (int k = 21; k <= 30; ++k) {
    const auto c = estimate_correspondence(f.out_i.at(k), f.out_j.at(k).posterior, f.theta_i, f.theta_j,
                                           f.sensors.i);
    const double a = eval_r(f.out_i.at(k), f.out_j.at(k).posterior, f.theta_i, f.theta_j, c.gamma, f.sensors.i);
    const double b = eval_r(f.out_i.at(k), f.out_j.at(k).posterior, f.theta_i + shift, f.theta_j + shift,
                            c.gamma, f.sensors.i);
    EXPECT_NEAR(a, b, 1e-10);
    EXPECT_NEAR(a, c.assignment_cost, 1e-10);
  }
}

TEST(EvalR, MatchesGridQuadrature) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1.0, 60.0);
  for (int trial = 0; trial < 5; ++trial) {
    const double px = u(rng), py = u(rng), r = u(rng);
    const Gaussian post(Vec4(u(rng), u(rng), 0, 0), Eigen::Vector4d(px, py, 3, 3).asDiagonal().toDenseMatrix());
    SensorModel s;
    s.R = r * Mat2::Identity();
    const Vec2 theta_i(10, 20), theta_j(510, -80);
    const Vec2 z = post.mean.head<2>() + theta_j - theta_i + Vec2(u(rng) - 30.0, u(rng) - 30.0);
    const FilterStep own = hand_step({post}, {post}, {z});
    TrackSet other;
    other.tracks = {post};
    const Vec2 shift = theta_j - theta_i;
    const double ref = grid_convolution_1d(z.x(), shift.x(), r, post.mean[0], px) +
                       grid_convolution_1d(z.y(), shift.y(), r, post.mean[1], py);
    EXPECT_NEAR(eval_r(own, other, theta_i, theta_j, {0}, s), ref, 1e-4);
  }
}

TEST(EvalR, RejectsBadCorrespondence) {
  const PairFixture f = make_pair(4);
  EXPECT_THROW(eval_r(f.out_i.at(21), f.out_j.at(21).posterior, f.theta_i, f.theta_j, {0, 0, 1, 2}, f.sensors.i),
               std::invalid_argument);
}

TEST(Kappa, IdenticalDensitiesGiveZeroLog) {
  // Posterior equal to prediction on both sides and matching geometry.
  const Gaussian g(Vec4(5, 5, 1, 0), 40.0 * Mat4::Identity());
  const FilterStep si = hand_step({g}, {g}, {Vec2(5, 5)});
  const FilterStep sj = hand_step({g}, {g}, {Vec2(5, 5)});
  const PairSensors sensors{SensorModel::position(10.0), SensorModel::position(10.0)};
  EXPECT_NEAR(eval_kappa(si, sj, Vec2(0, 0), Vec2(0, 0), {0}, sensors), 0.0, 1e-12);
}

TEST(Kappa, InformationFormAgrees) {
  const PairFixture f = make_pair(6);
  for (int k = 21; k <= 30; ++k) {
    for (int m = 0; m < 4; ++m) {
      const auto [g1, g2] =
          kappa_pair_densities(f.out_i.at(k), f.out_j.at(k), m, (m + k) % 4, f.theta_i, f.theta_j + Vec2(30, -20), f.sensors);
      EXPECT_NEAR(log_bhattacharyya(g1, g2), log_bhattacharyya_information_form(g1, g2), 1e-9);
    }
  }
}

TEST(Kappa, MatchesMonteCarloIntegral) {
  const PairFixture f = make_pair(7);
  const Permutation truth = true_correspondence(f.sc, 20, 0, 1);
  const auto [g1, g2] = kappa_pair_densities(f.out_i.at(24), f.out_j.at(24), 0, truth[0], f.theta_i,
                                             f.theta_j + Vec2(5, 3), f.sensors);
  std::mt19937_64 rng(1);
  const sepcal::testing::FrozenDensity p1(g1), p2(g2);
  const Eigen::MatrixXd l1 = Eigen::LLT<Eigen::MatrixXd>(g1.cov).matrixL();
  const Eigen::MatrixXd l2 = Eigen::LLT<Eigen::MatrixXd>(g2.cov).matrixL();
  std::bernoulli_distribution coin(0.5);
  const int n = 1000000;
  double acc = 0.0;
  for (int s = 0; s < n; ++s) {
    const Eigen::VectorXd e = sepcal::testing::random_vector(rng, 4);
    const Eigen::VectorXd x = coin(rng) ? Eigen::VectorXd(g1.mean + l1 * e) : Eigen::VectorXd(g2.mean + l2 * e);
    const double a = p1(x), b = p2(x);
    const double lmix = std::log(0.5) + std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
    acc += std::exp(0.5 * (a + b) - lmix);
  }
  const double bc = bhattacharyya_coefficient(g1, g2);
  EXPECT_NEAR(bc, acc / n, 0.01 * bc);
}

TEST(Kappa, NeverPositiveAcrossCandidates) {
  const PairFixture f = make_pair(8);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec2 off = sepcal::testing::random_vector(rng, 2, 200.0);
    const EdgeEvaluation ev = quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j + off, f.sensors, 21, 30);
    for (double lk : ev.log_kappa) EXPECT_LE(lk, 0.0);
  }
}

TEST(QuadUpdate, DefinitionalReduction) {
  QuadFactors f;
  f.log_r_ij = -3.0;
  f.log_s_j = -5.0;
  f.log_r_ji = -5.0;
  f.log_s_i = -3.0;
  f.log_kappa = 0.0;
  // Geometric mean of the two chain-rule surrogates r_ij s_j and r_ji s_i.
  EXPECT_DOUBLE_EQ(quad_update(f), 0.5 * (-8.0) + 0.5 * (-8.0));
  f.log_kappa = -0.5;
  EXPECT_DOUBLE_EQ(quad_update(f), -7.5);
}

TEST(QuadUpdate, MissingFactorThrows) {
  QuadFactors f;
  f.log_r_ij = f.log_s_j = f.log_r_ji = f.log_s_i = 0.0;
  EXPECT_THROW(quad_update(f), std::invalid_argument);
}

TEST(QuadLikelihood, SingleStepReducesToQuadUpdate) {
  const PairFixture f = make_pair(10);
  const EdgeEvaluation ev = quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j, f.sensors, 25, 25);
  ASSERT_EQ(ev.log_q.size(), 1u);
  QuadFactors q{ev.log_r_ij[0], ev.log_s_j[0], ev.log_r_ji[0], ev.log_s_i[0], ev.log_kappa[0]};
  EXPECT_EQ(ev.log_quad, quad_update(q));
  EXPECT_EQ(ev.log_s_i[0], f.out_i.at(25).log_s);
}

TEST(QuadLikelihood, WindowIsSumOfSteps) {
  const PairFixture f = make_pair(11);
  const EdgeEvaluation ev = quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j, f.sensors, 21, 30);
  double sum = 0.0;
  for (std::size_t s = 0; s < ev.log_q.size(); ++s) {
    sum += 0.5 * (ev.log_r_ij[s] + ev.log_s_j[s]) + 0.5 * (ev.log_r_ji[s] + ev.log_s_i[s]) - ev.log_kappa[s];
  }
  EXPECT_NEAR(ev.log_quad, sum, 1e-9 * std::abs(sum));
}

TEST(QuadLikelihood, CommonTranslationInvariance) {
  std::mt19937_64 rng(12);
  const PairFixture f = make_pair(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec2 ti = f.theta_i + sepcal::testing::random_vector(rng, 2, 50.0);
    const Vec2 tj = f.theta_j + sepcal::testing::random_vector(rng, 2, 50.0);
    const Vec2 c = sepcal::testing::random_vector(rng, 2, 3000.0);
    const double a = quad_likelihood(f.out_i, f.out_j, ti, tj, f.sensors, 21, 30).log_quad;
    const double b = quad_likelihood(f.out_i, f.out_j, ti + c, tj + c, f.sensors, 21, 30).log_quad;
    EXPECT_NEAR(a, b, 1e-8);
  }
}

TEST(QuadLikelihood, SymmetricInSensorOrder) {
  std::mt19937_64 rng(13);
  const PairFixture f = make_pair(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec2 ti = f.theta_i + sepcal::testing::random_vector(rng, 2, 60.0);
    const Vec2 tj = f.theta_j + sepcal::testing::random_vector(rng, 2, 60.0);
    const double a = quad_likelihood(f.out_i, f.out_j, ti, tj, f.sensors, 21, 30).log_quad;
    const double b =
        quad_likelihood(f.out_j, f.out_i, tj, ti, PairSensors{f.sensors.j, f.sensors.i}, 21, 30).log_quad;
    EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, std::abs(a)));
  }
}

TEST(QuadLikelihood, FiniteOverWideOffsetRange) {
  const PairFixture f = make_pair(14);
  for (double dx = -500.0; dx <= 500.0; dx += 50.0) {
    for (double dy = -500.0; dy <= 500.0; dy += 50.0) {
      const EdgeEvaluation ev =
          quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j + Vec2(dx, dy), f.sensors, 21, 30);
      EXPECT_TRUE(std::isfinite(ev.log_quad));
      for (double lk : ev.log_kappa) EXPECT_TRUE(std::isfinite(lk));
    }
  }
}

TEST(QuadLikelihood, PeaksNearTruth) {
  const PairFixture f = make_pair(15);
  const double at_truth = quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j, f.sensors, 21, 30).log_quad;
  for (const Vec2& off : {Vec2(50, 0), Vec2(0, -50), Vec2(-40, 40)}) {
    EXPECT_GT(at_truth, quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j + off, f.sensors, 21, 30).log_quad);
  }
}

TEST(QuadLikelihood, SidesReadOnlyTheirOwnMeasurements) {
  const PairFixture f = make_pair(16);
  FilterOutput tampered = f.out_j;
  for (auto& st : tampered.steps)
    for (auto& z : st.measurements) z += Vec2(500, 500);
  const auto a = quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j, f.sensors, 21, 30);
  const auto b = quad_likelihood(f.out_i, tampered, f.theta_i, f.theta_j, f.sensors, 21, 30);
  EXPECT_EQ(a.log_r_ij, b.log_r_ij);
  EXPECT_EQ(a.log_s_j, b.log_s_j);
  EXPECT_NE(a.log_r_ji, b.log_r_ji);
}

TEST(QuadLikelihood, RejectsMismatchedWindows) {
  const PairFixture f = make_pair(17);
  EXPECT_THROW(quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j, f.sensors, 20, 30), std::invalid_argument);
  EXPECT_THROW(quad_likelihood(f.out_i, f.out_j, f.theta_i, f.theta_j, f.sensors, 25, 24), std::invalid_argument);
}

TEST(DualLikelihood, SingleObjectPeaksAtPredictedMean) {
  const Gaussian pred(Vec4(100, 50, 1, 1), 30.0 * Mat4::Identity());
  const Gaussian post(Vec4(101, 51, 1, 1), 10.0 * Mat4::Identity());
  const Vec2 theta_i(0, 0), theta_j(1000, 0);
  const PairSensors sensors{SensorModel::position(1e-3), SensorModel::position(1e-3)};
  auto value = [&](const Vec2& zi) {
    FilterOutput a, b;
    FilterStep si = hand_step({pred}, {post}, {zi});
    FilterStep sj = hand_step({pred}, {post}, {Vec2(100, 50)});
    si.step = sj.step = 1;
    a.steps = {si};
    b.steps = {sj};
    a.initial.tracks = b.initial.tracks = {pred};
    return dual_likelihood(a, b, theta_i, theta_j, sensors, 1, 1).log_cross_ij[0];
  };
  const Vec2 peak = pred.mean.head<2>() + theta_j - theta_i;
  const double at_peak = value(peak);
  for (const Vec2& d : {Vec2(1, 0), Vec2(0, 1), Vec2(-0.5, 0.5)}) EXPECT_GT(at_peak, value(peak + d));
}

TEST(DualLikelihood, MatchesGridQuadratureAndHasNoScaleTerm) {
  const PairFixture f = make_pair(18, 10.0, 1);
  const Vec2 tj = f.theta_j + Vec2(7, -4);
  const DualEvaluation ev = dual_likelihood(f.out_i, f.out_j, f.theta_i, tj, f.sensors, 21, 30);
  double sum = 0.0;
  for (std::size_t s = 0; s < ev.steps.size(); ++s) {
    const int k = ev.steps[s];
    // Decorrelate position coordinates so the 2-d integral factorizes.
    const Gaussian& pj = f.out_j.at(k).predicted.tracks[0];
    const Vec2 z = f.out_i.at(k).measurements[0];
    const Vec2 shift = tj - f.theta_i;
    const double r = 100.0;
    const Mat2 c = pj.cov.topLeftCorner(2, 2);
    if (std::abs(c(0, 1)) < 1e-9 * c.trace()) {
      const double ref = grid_convolution_1d(z.x(), shift.x(), r, pj.mean[0], c(0, 0)) +
                         grid_convolution_1d(z.y(), shift.y(), r, pj.mean[1], c(1, 1));
      EXPECT_NEAR(ev.log_cross_ij[s], ref, 1e-4);
    }
    sum += ev.log_cross_ij[s] + ev.log_cross_ji[s];
  }
  EXPECT_EQ(ev.log_dual, sum);
}

TEST(EdgePotential, CachedPathMatchesReference) {
  std::mt19937_64 rng(19);
  for (std::uint64_t seed : {20u, 21u, 22u}) {
    const PairFixture f = make_pair(seed);
    const EdgePotential pot(f.out_i, f.out_j, f.sensors, 21, 30);
    for (int trial = 0; trial < 30; ++trial) {
      const Vec2 ti = f.theta_i + sepcal::testing::random_vector(rng, 2, trial < 10 ? 20.0 : 300.0);
      const Vec2 tj = f.theta_j + sepcal::testing::random_vector(rng, 2, trial < 10 ? 20.0 : 300.0);
      const double ref = quad_likelihood(f.out_i, f.out_j, ti, tj, f.sensors, 21, 30).log_quad;
      EXPECT_NEAR(pot.log_quad(ti, tj), ref, 1e-9 * std::max(1.0, std::abs(ref)));
      const double dref = dual_likelihood(f.out_i, f.out_j, ti, tj, f.sensors, 21, 30).log_dual;
      EXPECT_NEAR(pot.log_dual(ti, tj), dref, 1e-9 * std::max(1.0, std::abs(dref)));
    }
  }
}

TEST(EdgePotential, BatchUpdatesCounters) {
  const PairFixture f = make_pair(23);
  const EdgePotential pot(f.out_i, f.out_j, f.sensors, 21, 30);
  auto& ctr = evaluation_counters();
  const auto q0 = ctr.quad_calls.load(), d0 = ctr.dual_calls.load();
  std::vector<Vec2> ti(7, f.theta_i), tj(7, f.theta_j);
  std::vector<double> out(7);
  pot.evaluate_batch(LikelihoodVariant::quad, ti, tj, out);
  EXPECT_EQ(ctr.quad_calls.load() - q0, 7u);
  pot.evaluate_batch(LikelihoodVariant::dual, ti, tj, out);
  EXPECT_EQ(ctr.dual_calls.load() - d0, 7u);
  EXPECT_EQ(out[3], pot.log_dual(f.theta_i, f.theta_j));
}

TEST(Variant, ParsesNames) {
  EXPECT_EQ(parse_variant("quad"), LikelihoodVariant::quad);
  EXPECT_EQ(parse_variant("dual"), LikelihoodVariant::dual);
  EXPECT_THROW(parse_variant("triple"), ConfigError);
}
