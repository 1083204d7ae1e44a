#pragma once

// Nonparametric loopy belief propagation over sensor offsets.
//
// Each node keeps L equally weighted samples of its offset. Per round every
// edge potential is evaluated at equally indexed sample pairs, each directed
// edge turns those values into a Gaussian-kernel message, and each node
// redraws its samples by importance sampling from the product of its prior
// and incoming messages.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sepcal/errors.hpp"
#include "sepcal/gaussian.hpp"
#include "sepcal/lgss.hpp"
#include "sepcal/local_tracker.hpp"
#include "sepcal/parallel.hpp"
#include "sepcal/scenario.hpp"
#include "sepcal/separable_likelihood.hpp"

namespace sepcal {

inline constexpr int kOffsetDim = 2;

struct ParticleBelief {
  std::vector<Vec2> samples;
  std::vector<double> weights;  // sum to one

  int size() const { return static_cast<int>(samples.size()); }

  Vec2 mean() const {
    Vec2 m = Vec2::Zero();
    for (int l = 0; l < size(); ++l) m += weights[l] * samples[l];
    return m;
  }

  Mat2 covariance() const {
    const Vec2 m = mean();
    Mat2 c = Mat2::Zero();
    for (int l = 0; l < size(); ++l) c += weights[l] * (samples[l] - m) * (samples[l] - m).transpose();
    return c;
  }

  static ParticleBelief equally_weighted(std::vector<Vec2> samples) {
    ParticleBelief b;
    b.weights.assign(samples.size(), 1.0 / static_cast<double>(samples.size()));
    b.samples = std::move(samples);
    return b;
  }
};

struct KernelMessage {
  int from = -1;
  int to = -1;
  std::vector<Vec2> locations;
  std::vector<double> weights;  // sum to one
  Mat2 bandwidth = Mat2::Identity();
  bool fallback = false;        // potentials underflowed; weights set uniform

  /// Mean and covariance of the kernel mixture.
  Gaussian moments() const {
    Vec2 m = Vec2::Zero();
    for (std::size_t l = 0; l < locations.size(); ++l) m += weights[l] * locations[l];
    Mat2 c = bandwidth;
    for (std::size_t l = 0; l < locations.size(); ++l) c += weights[l] * (locations[l] - m) * (locations[l] - m).transpose();
    return Gaussian(m, c);
  }
};

/// Node potential: a point mass (anchor) or a uniform density on a box.
struct NodePrior {
  enum class Kind { dirac, box };
  Kind kind = Kind::box;
  Vec2 point = Vec2::Zero();
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();

  static NodePrior dirac(const Vec2& p) {
    NodePrior n;
    n.kind = Kind::dirac;
    n.point = n.lo = n.hi = p;
    return n;
  }

  static NodePrior box(const Vec2& lo, const Vec2& hi) {
    if (!(hi.array() > lo.array()).all()) throw ConfigError("box prior: empty region");
    NodePrior n;
    n.kind = Kind::box;
    n.lo = lo;
    n.hi = hi;
    return n;
  }

  bool is_dirac() const { return kind == Kind::dirac; }

  double log_density(const Vec2& t) const {
    if (is_dirac()) return t == point ? 0.0 : -std::numeric_limits<double>::infinity();
    if ((t.array() < lo.array()).any() || (t.array() > hi.array()).any()) {
      return -std::numeric_limits<double>::infinity();
    }
    return -std::log((hi - lo).prod());
  }

  Vec2 sample(std::mt19937_64& rng) const {
    if (is_dirac()) return point;
    std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y());
    const double x = ux(rng);
    return Vec2(x, uy(rng));
  }
};

/// Box around all sensor positions, widened on every side by `margin` times
/// its longer extent.
inline std::pair<Vec2, Vec2> sensing_region(const NetworkGraph& g, double margin) {
  Vec2 lo = g.positions.front(), hi = g.positions.front();
  for (const auto& p : g.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec2 pad = Vec2::Constant(margin * (hi - lo).maxCoeff());
  return {lo - pad, hi + pad};
}

inline std::vector<NodePrior> default_priors(const NetworkGraph& g, double margin) {
  const auto [lo, hi] = sensing_region(g, margin);
  std::vector<NodePrior> priors;
  for (int i = 0; i < g.num_nodes(); ++i) {
    priors.push_back(i == g.anchor ? NodePrior::dirac(g.positions[i] - g.positions[g.anchor]) : NodePrior::box(lo, hi));
  }
  return priors;
}

// ---------------------------------------------------------------------------
// Kernel density helpers.

/// (4 / ((2d + 1) L))^{2 / (d + 4)}
inline double rule_of_thumb_factor(int d, int num_samples) {
  return std::pow(4.0 / ((2.0 * d + 1.0) * num_samples), 2.0 / (d + 4.0));
}

inline Vec2 weighted_mean(std::span<const Vec2> x, std::span<const double> w) {
  Vec2 m = Vec2::Zero();
  for (std::size_t l = 0; l < x.size(); ++l) m += w[l] * x[l];
  return m;
}

/// Σ_l w_l (x_l − m)(x_l − m)ᵀ with m the weighted mean.
inline Mat2 weighted_covariance(std::span<const Vec2> x, std::span<const double> w) {
  const Vec2 m = weighted_mean(x, w);
  Mat2 c = Mat2::Zero();
  for (std::size_t l = 0; l < x.size(); ++l) c += w[l] * (x[l] - m) * (x[l] - m).transpose();
  return 0.5 * (c + c.transpose());
}

inline Mat2 unweighted_covariance(std::span<const Vec2> x) {
  const std::vector<double> w(x.size(), 1.0 / static_cast<double>(x.size()));
  return weighted_covariance(x, w);
}

/// Adds kCovarianceJitter * max(trace / d, 1) to the diagonal when the
/// smallest eigenvalue of `m` falls below that floor.
inline Mat2 regularize_bandwidth(const Mat2& m) {
  const double floor = kCovarianceJitter * std::max(m.trace() / kOffsetDim, 1.0);
  const Eigen::SelfAdjointEigenSolver<Mat2> eig(m, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()[0] >= floor) return m;
  return m + floor * Mat2::Identity();
}

inline Mat2 rule_of_thumb_bandwidth(std::span<const Vec2> x, std::span<const double> w) {
  if (x.size() != w.size() || x.empty()) throw std::invalid_argument("rule_of_thumb_bandwidth: bad sample set");
  return regularize_bandwidth(rule_of_thumb_factor(kOffsetDim, static_cast<int>(x.size())) * weighted_covariance(x, w));
}

inline double effective_sample_size(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return s > 0.0 ? 1.0 / s : 0.0;
}

/// Normalized weights from log values; false if none is finite.
inline bool normalize_log_weights(std::span<const double> logw, std::vector<double>& w) {
  const double lse = log_sum_exp(logw);
  w.resize(logw.size());
  if (!std::isfinite(lse)) return false;
  double total = 0.0;
  for (std::size_t l = 0; l < logw.size(); ++l) {
    w[l] = std::isnan(logw[l]) ? 0.0 : std::exp(logw[l] - lse);
    total += w[l];
  }
  for (double& v : w) v /= total;
  return true;
}

/// Low-variance resampling with a single uniform offset.
inline std::vector<int> systematic_resample(std::span<const double> w, std::mt19937_64& rng) {
  const int n = static_cast<int>(w.size());
  std::uniform_real_distribution<double> u(0.0, 1.0 / n);
  const double start = u(rng);
  std::vector<int> idx(n);
  double cum = w[0];
  int j = 0;
  for (int l = 0; l < n; ++l) {
    const double target = start + static_cast<double>(l) / n;
    while (target > cum && j < n - 1) cum += w[++j];
    idx[l] = j;
  }
  return idx;
}

namespace detail {

// log Σ_l w_l N(x; μ_l, Λ) with Λ factorized once.
class MixtureDensity {
 public:
  explicit MixtureDensity(const KernelMessage& msg) : msg_(&msg) {
    const auto llt = factorize(msg.bandwidth, "kernel bandwidth");
    precision_ = inverse(llt);
    log_norm_ = -std::log(2.0 * std::numbers::pi) - 0.5 * log_det(llt);
    log_w_.reserve(msg.weights.size());
    for (double w : msg.weights) log_w_.push_back(std::log(w));
  }

  double operator()(const Vec2& x) const {
    const auto& loc = msg_->locations;
    double mx = -std::numeric_limits<double>::infinity();
    buf_.resize(loc.size());
    for (std::size_t l = 0; l < loc.size(); ++l) {
      const Vec2 r = x - loc[l];
      buf_[l] = log_w_[l] - 0.5 * r.dot(precision_ * r);
      mx = std::max(mx, buf_[l]);
    }
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double v : buf_) s += std::exp(v - mx);
    return log_norm_ + mx + std::log(s);
  }

 private:
  const KernelMessage* msg_;
  Mat2 precision_;
  double log_norm_ = 0.0;
  std::vector<double> log_w_;
  mutable std::vector<double> buf_;
};

}  // namespace detail

struct MessageOptions {
  bool degeneracy_correction = true;
  double resolution_factor = 8.0;
  double spread_factor = 3.0;
};

/// Kernel message j -> i from the paired samples (theta_i[l], theta_j[l]),
/// their log potentials and samples theta_bar_j of j's product of prior and
/// other incoming messages. Kernel l sits at theta_bar_j[l] − theta_j[l] +
/// theta_i[l] with weight ∝ exp(log_psi[l]).
///
/// With the correction enabled, the bandwidth is widened by
///   (1 − ESS/L) Cov(theta_bar_j) + c Cov(theta_j − theta_i) / L,
/// the spread lost when the weights collapse onto few pairs plus the spacing
/// of the sampled offset differences.
inline KernelMessage build_message(int from, int to, std::span<const Vec2> theta_bar_j, std::span<const Vec2> theta_i,
                                   std::span<const Vec2> theta_j, std::span<const double> log_psi,
                                   const MessageOptions& opt = {}) {
  const std::size_t n = theta_i.size();
  if (n == 0 || theta_j.size() != n || theta_bar_j.size() != n || log_psi.size() != n) {
    throw std::invalid_argument("build_message: inconsistent sample counts");
  }
  KernelMessage msg;
  msg.from = from;
  msg.to = to;
  if (!normalize_log_weights(log_psi, msg.weights)) {
    msg.weights.assign(n, 1.0 / static_cast<double>(n));
    msg.fallback = true;
  }
  std::vector<Vec2> diff(n);
  msg.locations.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    diff[l] = theta_j[l] - theta_i[l];
    msg.locations[l] = theta_bar_j[l] - diff[l];
  }
  const double factor = rule_of_thumb_factor(kOffsetDim, static_cast<int>(n));
  Mat2 bw = factor * weighted_covariance(msg.locations, msg.weights);
  if (opt.degeneracy_correction) {
    const double ess = effective_sample_size(msg.weights);
    bw += opt.spread_factor * (1.0 - ess / static_cast<double>(n)) * unweighted_covariance(theta_bar_j);
    bw += opt.resolution_factor * unweighted_covariance(diff) / static_cast<double>(n);
  }
  msg.bandwidth = regularize_bandwidth(0.5 * (bw + bw.transpose()));
  return msg;
}

/// Weighted bootstrap from prior × Π messages: draw L proposals from the
/// Gaussian product of the current belief's moments (optional) and the
/// messages' moments, weight by prior × Π mixtures / proposal, then resample.
/// Without messages the samples come straight from the prior.
inline ParticleBelief sample_belief_product(const NodePrior& prior, std::span<const KernelMessage* const> messages,
                                            const ParticleBelief* current, int num_samples, std::mt19937_64& rng,
                                            bool belief_in_proposal = false) {
  if (num_samples < 1) throw std::invalid_argument("sample_belief_product: need at least one sample");
  std::vector<Vec2> out(static_cast<std::size_t>(num_samples));
  if (prior.is_dirac()) {
    std::fill(out.begin(), out.end(), prior.point);
    return ParticleBelief::equally_weighted(std::move(out));
  }
  if (messages.empty()) {
    for (auto& s : out) s = prior.sample(rng);
    return ParticleBelief::equally_weighted(std::move(out));
  }

  std::vector<Gaussian> factors;
  if (belief_in_proposal && current != nullptr && current->size() > 0) {
    factors.emplace_back(current->mean(), regularize_bandwidth(current->covariance()));
  }
  for (const KernelMessage* m : messages) factors.push_back(m->moments());
  const Gaussian f = gaussian_product(factors);
  const Eigen::LLT<Mat2> f_llt = detail::factorize(Mat2(f.cov), "proposal covariance");
  const Mat2 f_root = f_llt.matrixL();
  const double f_norm = -std::log(2.0 * std::numbers::pi) - 0.5 * detail::log_det(f_llt);

  std::vector<detail::MixtureDensity> mix;
  mix.reserve(messages.size());
  for (const KernelMessage* m : messages) mix.emplace_back(*m);

  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Vec2> proposals(out.size());
  std::vector<double> logw(out.size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    const double e0 = n01(rng);
    const double e1 = n01(rng);
    const Vec2 e(e0, e1);
    proposals[l] = f.mean + f_root * e;
    double lw = prior.log_density(proposals[l]);
    if (std::isfinite(lw)) {
      for (const auto& mx : mix) lw += mx(proposals[l]);
      lw -= f_norm - 0.5 * e.squaredNorm();
    }
    logw[l] = lw;
  }
  std::vector<double> w;
  if (!normalize_log_weights(logw, w)) {
    // Every draw left the prior support: redraw from the prior itself.
    for (std::size_t l = 0; l < out.size(); ++l) {
      proposals[l] = prior.sample(rng);
      logw[l] = 0.0;
      for (const auto& mx : mix) logw[l] += mx(proposals[l]);
    }
    if (!normalize_log_weights(logw, w)) {
      throw NumericalError("belief update: all importance weights vanished");
    }
  }
  const std::vector<int> idx = systematic_resample(w, rng);
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = proposals[idx[l]];
  return ParticleBelief::equally_weighted(std::move(out));
}

// ---------------------------------------------------------------------------
// Loopy belief propagation.

/// Evaluates log ψ for edge `e` at the paired candidates.
using EdgeLogPotential =
    std::function<void(int e, std::span<const Vec2> theta_a, std::span<const Vec2> theta_b, std::span<double> out)>;

struct MrfModel {
  NetworkGraph graph;
  std::vector<NodePrior> priors;
  EdgeLogPotential potential;
};

struct LbpOptions {
  int num_particles = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  bool belief_in_proposal = false;
  MessageOptions message;
};

struct LbpState {
  int round = 0;
  std::vector<ParticleBelief> beliefs;
  // messages[2e] runs a -> b and messages[2e + 1] runs b -> a for edge (a, b).
  std::vector<KernelMessage> messages;
  std::vector<char> edge_fallback;

  std::vector<Vec2> estimates() const {
    std::vector<Vec2> est;
    for (const auto& b : beliefs) est.push_back(b.mean());
    return est;
  }
};

namespace detail {

enum class Stream : std::uint32_t { prior = 1, product = 2, belief = 3, shuffle = 4 };

// Independent stream per (seed, round, task, purpose), so results do not
// depend on which worker runs a task.
inline std::mt19937_64 task_rng(std::uint64_t seed, int round, int task, Stream purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(task),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

inline void validate_model(const MrfModel& model) {
  if (static_cast<int>(model.priors.size()) != model.graph.num_nodes()) {
    throw std::invalid_argument("mrf model: one prior per node required");
  }
  for (auto [a, b] : model.graph.edges) {
    if (a < 0 || b < 0 || a >= model.graph.num_nodes() || b >= model.graph.num_nodes() || a == b) {
      throw std::invalid_argument("mrf model: bad edge");
    }
  }
  if (!model.graph.edges.empty() && !model.potential) throw std::invalid_argument("mrf model: no edge potential");
}

}  // namespace detail

inline LbpState initialize_beliefs(const MrfModel& model, const LbpOptions& opt) {
  detail::validate_model(model);
  if (opt.num_particles < 2) throw ConfigError("nbp: need at least two particles");
  LbpState st;
  st.beliefs.resize(model.priors.size());
  for (int i = 0; i < model.graph.num_nodes(); ++i) {
    auto rng = detail::task_rng(opt.seed, 0, i, detail::Stream::prior);
    std::vector<Vec2> s(static_cast<std::size_t>(opt.num_particles));
    for (auto& v : s) v = model.priors[i].sample(rng);
    st.beliefs[i] = ParticleBelief::equally_weighted(std::move(s));
  }
  st.edge_fallback.assign(model.graph.edges.size(), 0);
  return st;
}

/// One bulk-synchronous round: potentials on every edge, messages in both
/// directions, then every belief. The first round treats the previous
/// messages as constants.
inline LbpState lbp_iterate(const MrfModel& model, const LbpState& state, const LbpOptions& opt) {
  detail::validate_model(model);
  const int n_nodes = model.graph.num_nodes();
  const int n_edges = static_cast<int>(model.graph.edges.size());
  const int round = state.round + 1;
  const int L = opt.num_particles;
  const bool have_messages = !state.messages.empty();

  // Incoming messages per node, as indices into state.messages.
  std::vector<std::vector<int>> incoming(n_nodes);
  if (have_messages) {
    for (int d = 0; d < 2 * n_edges; ++d) incoming[state.messages[d].to].push_back(d);
  }

  // Samples of each sender's prior × incoming messages except the
  // recipient's; index by directed edge id.
  std::vector<std::vector<Vec2>> theta_bar(2 * n_edges);
  parallel_for(static_cast<std::size_t>(2 * n_edges), opt.threads, [&](std::size_t d) {
    const auto [a, b] = model.graph.edges[d / 2];
    const int from = d % 2 == 0 ? a : b;
    const int to = d % 2 == 0 ? b : a;
    if (!have_messages) {
      auto rng = detail::task_rng(opt.seed, round, static_cast<int>(d), detail::Stream::shuffle);
      std::vector<Vec2> s = state.beliefs[from].samples;
      std::shuffle(s.begin(), s.end(), rng);
      theta_bar[d] = std::move(s);
      return;
    }
    std::vector<const KernelMessage*> msgs;
    for (int idx : incoming[from]) {
      if (state.messages[idx].from != to) msgs.push_back(&state.messages[idx]);
    }
    auto rng = detail::task_rng(opt.seed, round, static_cast<int>(d), detail::Stream::product);
    theta_bar[d] = sample_belief_product(model.priors[from], msgs, &state.beliefs[from], L, rng,
                                         opt.belief_in_proposal).samples;
  });

  LbpState next;
  next.round = round;
  next.messages.resize(2 * n_edges);
  next.edge_fallback.assign(n_edges, 0);
  parallel_for(static_cast<std::size_t>(n_edges), opt.threads, [&](std::size_t e) {
    const auto [a, b] = model.graph.edges[e];
    const auto& ta = state.beliefs[a].samples;
    const auto& tb = state.beliefs[b].samples;
    std::vector<double> log_psi(ta.size());
    model.potential(static_cast<int>(e), ta, tb, log_psi);
    // a -> b: kernels at theta_bar_a − theta_a + theta_b.
    next.messages[2 * e] = build_message(a, b, theta_bar[2 * e], tb, ta, log_psi, opt.message);
    next.messages[2 * e + 1] = build_message(b, a, theta_bar[2 * e + 1], ta, tb, log_psi, opt.message);
    next.edge_fallback[e] = next.messages[2 * e].fallback;
  });

  std::vector<std::vector<const KernelMessage*>> inbox(n_nodes);
  for (const auto& m : next.messages) inbox[m.to].push_back(&m);
  next.beliefs.resize(n_nodes);
  parallel_for(static_cast<std::size_t>(n_nodes), opt.threads, [&](std::size_t i) {
    auto rng = detail::task_rng(opt.seed, round, static_cast<int>(i), detail::Stream::belief);
    next.beliefs[i] = sample_belief_product(model.priors[i], inbox[i], &state.beliefs[i], L, rng,
                                            opt.belief_in_proposal);
  });
  return next;
}

// ---------------------------------------------------------------------------
// End-to-end calibration of one scenario.

struct CalibrationConfig {
  FilterWindow window = FilterWindow::trailing(21, 10);
  LikelihoodVariant variant = LikelihoodVariant::quad;
  int iterations = 16;
  double prior_margin = 0.25;
  bool keep_beliefs = false;
  LbpOptions lbp;
};

struct CalibrationResult {
  // estimates[s][i]: offset of node i after round s + 1.
  std::vector<std::vector<Vec2>> estimates;
  // beliefs[s][i], filled when keep_beliefs is set.
  std::vector<std::vector<ParticleBelief>> beliefs;
  std::vector<Vec2> truth;
  std::vector<int> fallback_edges;  // per round
  double filter_seconds = 0.0;
  double lbp_seconds = 0.0;
  std::uint64_t evaluations = 0;     // edge-potential evaluations
  double evaluation_seconds = 0.0;   // time spent in them
};

struct EvaluationTally {
  std::atomic<std::uint64_t> calls{0};
  std::atomic<std::uint64_t> nanoseconds{0};
};

/// Offsets of every sensor relative to the anchor.
inline std::vector<Vec2> true_offsets(const NetworkGraph& g) {
  std::vector<Vec2> t;
  for (const auto& p : g.positions) t.push_back(p - g.positions[g.anchor]);
  return t;
}

inline MrfModel make_calibration_model(const Scenario& sc, std::vector<std::shared_ptr<const EdgePotential>> edges,
                                       LikelihoodVariant variant, double prior_margin,
                                       std::shared_ptr<EvaluationTally> tally = nullptr) {
  MrfModel model;
  model.graph = sc.network;
  model.priors = default_priors(sc.network, prior_margin);
  model.potential = [edges = std::move(edges), variant, tally](int e, std::span<const Vec2> ta,
                                                               std::span<const Vec2> tb, std::span<double> out) {
    const auto t0 = std::chrono::steady_clock::now();
    edges[e]->evaluate_batch(variant, ta, tb, out);
    if (tally) {
      const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0);
      tally->calls += out.size();
      tally->nanoseconds += static_cast<std::uint64_t>(ns.count());
    }
  };
  return model;
}

inline CalibrationResult run_calibration(const Scenario& sc, const CalibrationConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("calibration: iterations must be >= 1");
  if (!(cfg.prior_margin >= 0.0)) throw ConfigError("calibration: prior margin must be >= 0");
  const int n = sc.num_sensors();
  const SensorModel sensor = SensorModel::position(sc.config.sigma_n);
  CalibrationResult res;
  res.truth = true_offsets(sc.network);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<FilterOutput> local(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), cfg.lbp.threads,
               [&](std::size_t i) { local[i] = run_local_filter(sc, static_cast<int>(i), cfg.window); });
  std::vector<std::shared_ptr<const EdgePotential>> edges(sc.network.edges.size());
  parallel_for(edges.size(), cfg.lbp.threads, [&](std::size_t e) {
    const auto [a, b] = sc.network.edges[e];
    edges[e] = std::make_shared<const EdgePotential>(local[a], local[b], PairSensors{sensor, sensor},
                                                     cfg.window.first_step, cfg.window.last_step);
  });
  const auto t1 = std::chrono::steady_clock::now();

  auto tally = std::make_shared<EvaluationTally>();
  const MrfModel model = make_calibration_model(sc, std::move(edges), cfg.variant, cfg.prior_margin, tally);
  LbpState st = initialize_beliefs(model, cfg.lbp);
  for (int s = 0; s < cfg.iterations; ++s) {
    st = lbp_iterate(model, st, cfg.lbp);
    res.estimates.push_back(st.estimates());
    res.fallback_edges.push_back(static_cast<int>(std::count(st.edge_fallback.begin(), st.edge_fallback.end(), 1)));
    if (cfg.keep_beliefs) res.beliefs.push_back(st.beliefs);
  }
  const auto t2 = std::chrono::steady_clock::now();
  res.filter_seconds = std::chrono::duration<double>(t1 - t0).count();
  res.lbp_seconds = std::chrono::duration<double>(t2 - t1).count();
  res.evaluations = tally->calls.load();
  res.evaluation_seconds = 1e-9 * static_cast<double>(tally->nanoseconds.load());
  return res;
}

}  // namespace sepcal
