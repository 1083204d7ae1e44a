#pragma once

// Ground truth for calibration experiments: a lattice of sensors, a fixed
// number of objects moving under the constant-velocity model, and each
// sensor's measurements in its own frame, delivered in shuffled order.
//
// Indexing: sensors, objects and measurement slots are 0-based; time steps
// are 1-based (step k lives at index k - 1).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <queue>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sepcal/assignment.hpp"
#include "sepcal/errors.hpp"
#include "sepcal/lgss.hpp"

namespace sepcal {

using Rng = std::mt19937_64;

struct NetworkGraph {
  std::vector<Vec2> positions;               // ground-truth offsets θ*
  std::vector<std::pair<int, int>> edges;    // undirected, i < j
  int anchor = 0;

  int num_nodes() const { return static_cast<int>(positions.size()); }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(positions.size());
    for (auto [i, j] : edges) {
      adj[i].push_back(j);
      adj[j].push_back(i);
    }
    for (auto& a : adj) std::sort(a.begin(), a.end());
    return adj;
  }
};

inline bool is_connected(const NetworkGraph& g) {
  if (g.positions.empty()) return false;
  const auto adj = g.adjacency();
  std::vector<char> seen(adj.size(), 0);
  std::queue<int> q;
  q.push(g.anchor);
  seen[g.anchor] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int w : adj[v]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        q.push(w);
      }
    }
  }
  return count == adj.size();
}

/// Sensors on a rows x cols lattice with 4-neighbour edges. Node 0 sits at
/// the origin and is the anchor; node index is row * cols + col.
inline NetworkGraph build_grid_network(int rows, int cols, double spacing) {
  if (rows <= 0 || cols <= 0) throw ConfigError("grid network: rows and cols must be positive");
  if (rows * cols < 2) throw ConfigError("grid network: need at least two sensors");
  if (!(spacing > 0.0)) throw ConfigError("grid network: spacing must be positive");
  NetworkGraph g;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) g.positions.emplace_back(c * spacing, r * spacing);
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int id = r * cols + c;
      if (c + 1 < cols) g.edges.emplace_back(id, id + 1);
      if (r + 1 < rows) g.edges.emplace_back(id, id + cols);
    }
  }
  g.anchor = 0;
  return g;
}

struct ScenarioConfig {
  int rows = 4;
  int cols = 4;
  double spacing = 1000.0;
  int num_objects = 4;
  int num_steps = 60;
  MotionModel motion = MotionModel::standard();
  double sigma_n = 10.0;
  std::vector<Vec4> initial_states;  // empty: use default_initial_states
  std::uint64_t seed = 1;
};

/// Objects spread over the interior of the sensor hull along a golden-ratio
/// sequence, each moving at 10 m/step in a different direction.
inline std::vector<Vec4> default_initial_states(const NetworkGraph& net, int num_objects) {
  Vec2 lo = net.positions.front(), hi = net.positions.front();
  for (const auto& p : net.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec2 extent = hi - lo;
  constexpr double golden = 0.6180339887498949;
  std::vector<Vec4> states;
  for (int m = 0; m < num_objects; ++m) {
    const double fx = 0.2 + 0.6 * std::fmod(0.31 + golden * m, 1.0);
    const double fy = 0.2 + 0.6 * std::fmod(0.77 + golden * golden * m * 1.7, 1.0);
    const double heading = 2.0 * std::numbers::pi * std::fmod(0.13 + golden * m, 1.0);
    Vec4 x;
    x << lo.x() + fx * extent.x(), lo.y() + fy * extent.y(), 10.0 * std::cos(heading),
        10.0 * std::sin(heading);
    states.push_back(x);
  }
  return states;
}

/// trajectories[k][m] is object m's global state at step k + 1.
using Trajectories = std::vector<std::vector<Vec4>>;
/// measurements[j][k][o] is sensor j's o-th measurement at step k + 1.
using MeasurementSets = std::vector<std::vector<std::vector<Vec2>>>;
/// associations[j][k][o] is the object that produced measurements[j][k][o].
using Associations = std::vector<std::vector<Permutation>>;

struct Scenario {
  ScenarioConfig config;
  NetworkGraph network;
  Trajectories trajectories;
  MeasurementSets measurements;
  Associations true_associations;

  int num_steps() const { return static_cast<int>(trajectories.size()); }
  int num_objects() const { return config.num_objects; }
  int num_sensors() const { return network.num_nodes(); }
};

namespace detail {

// Square root of a PSD matrix via its eigen-decomposition.
inline Mat4 psd_sqrt(const Mat4& q) {
  Eigen::SelfAdjointEigenSolver<Mat4> es(q);
  const Vec4 ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

template <int N>
Eigen::Matrix<double, N, 1> standard_normal(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = n01(rng);
  return v;
}

}  // namespace detail

inline Trajectories simulate_trajectories(const ScenarioConfig& cfg,
                                          const std::vector<Vec4>& initial_states, Rng& rng) {
  if (cfg.num_steps < 1) throw ConfigError("scenario: num_steps must be >= 1");
  if (static_cast<int>(initial_states.size()) != cfg.num_objects) {
    throw ConfigError("scenario: initial state count differs from num_objects");
  }
  const Mat4 root = detail::psd_sqrt(cfg.motion.Q);
  Trajectories traj(cfg.num_steps);
  traj[0] = initial_states;
  for (int k = 1; k < cfg.num_steps; ++k) {
    traj[k].resize(cfg.num_objects);
    for (int m = 0; m < cfg.num_objects; ++m) {
      traj[k][m] = cfg.motion.F * traj[k - 1][m] + root * detail::standard_normal<4>(rng);
    }
  }
  return traj;
}

/// z = H (x - [θ*_j; 0; 0]) + v, v ~ N(0, sigma_n² I), stored in a uniformly
/// random order per sensor and step.
inline std::pair<MeasurementSets, Associations> generate_measurements(const Trajectories& traj,
                                                                      const NetworkGraph& net,
                                                                      const SensorModel& sensor,
                                                                      Rng& rng) {
  const int steps = static_cast<int>(traj.size());
  const int n_obj = steps > 0 ? static_cast<int>(traj.front().size()) : 0;
  const Eigen::LLT<Mat2> noise(sensor.R);
  const Mat2 noise_root = noise.matrixL();
  MeasurementSets meas(net.num_nodes(), std::vector<std::vector<Vec2>>(steps));
  Associations assoc(net.num_nodes(), std::vector<Permutation>(steps));
  for (int j = 0; j < net.num_nodes(); ++j) {
    Vec4 offset = Vec4::Zero();
    offset.head<2>() = net.positions[j];
    for (int k = 0; k < steps; ++k) {
      Permutation perm = identity_permutation(n_obj);
      std::shuffle(perm.begin(), perm.end(), rng);
      auto& zs = meas[j][k];
      zs.resize(n_obj);
      for (int o = 0; o < n_obj; ++o) {
        zs[o] = sensor.H * (traj[k][perm[o]] - offset) + noise_root * detail::standard_normal<2>(rng);
      }
      assoc[j][k] = std::move(perm);
    }
  }
  return {std::move(meas), std::move(assoc)};
}

inline Scenario generate_scenario(const ScenarioConfig& cfg) {
  if (cfg.num_objects < 1) throw ConfigError("scenario: num_objects must be >= 1");
  if (!(cfg.sigma_n >= 0.0)) throw ConfigError("scenario: sigma_n must be non-negative");
  Scenario sc;
  sc.config = cfg;
  sc.network = build_grid_network(cfg.rows, cfg.cols, cfg.spacing);
  if (sc.config.initial_states.empty()) {
    sc.config.initial_states = default_initial_states(sc.network, cfg.num_objects);
  }
  Rng rng(cfg.seed);
  sc.trajectories = simulate_trajectories(sc.config, sc.config.initial_states, rng);
  auto [meas, assoc] =
      generate_measurements(sc.trajectories, sc.network, SensorModel::position(cfg.sigma_n), rng);
  sc.measurements = std::move(meas);
  sc.true_associations = std::move(assoc);
  return sc;
}

// ---------------------------------------------------------------------------
// JSON layout (format "sepcal-scenario/1"):
//   { "format", "config": {...}, "network": {"positions", "edges", "anchor"},
//     "trajectories": [step][object][4], "measurements": [sensor][step][slot][2],
//     "associations": [sensor][step][slot] }
// Doubles are written with round-trip precision, so a reloaded scenario
// replays bit-exactly.

inline nlohmann::json to_json_value(const ScenarioConfig& c) {
  nlohmann::json j;
  j["rows"] = c.rows;
  j["cols"] = c.cols;
  j["spacing"] = c.spacing;
  j["num_objects"] = c.num_objects;
  j["num_steps"] = c.num_steps;
  j["motion"] = {{"dt", c.motion.dt}, {"sigma2", c.motion.sigma2}, {"q1", c.motion.q1},
                 {"q2", c.motion.q2}, {"q3", c.motion.q3},         {"q4", c.motion.q4}};
  j["sigma_n"] = c.sigma_n;
  j["seed"] = c.seed;
  auto& init = j["initial_states"] = nlohmann::json::array();
  for (const auto& x : c.initial_states) init.push_back({x[0], x[1], x[2], x[3]});
  return j;
}

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  c.rows = j.at("rows").get<int>();
  c.cols = j.at("cols").get<int>();
  c.spacing = j.at("spacing").get<double>();
  c.num_objects = j.at("num_objects").get<int>();
  c.num_steps = j.at("num_steps").get<int>();
  const auto& m = j.at("motion");
  c.motion = MotionModel::make(m.at("dt"), m.at("sigma2"), m.at("q1"), m.at("q2"), m.at("q3"),
                               m.at("q4"));
  c.sigma_n = j.at("sigma_n").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& x : j.at("initial_states")) {
    c.initial_states.emplace_back(x.at(0).get<double>(), x.at(1).get<double>(),
                                  x.at(2).get<double>(), x.at(3).get<double>());
  }
  return c;
}

inline nlohmann::json to_json_value(const Scenario& sc) {
  nlohmann::json j;
  j["format"] = "sepcal-scenario/1";
  j["config"] = to_json_value(sc.config);
  auto& net = j["network"];
  net["anchor"] = sc.network.anchor;
  net["positions"] = nlohmann::json::array();
  for (const auto& p : sc.network.positions) net["positions"].push_back({p.x(), p.y()});
  net["edges"] = nlohmann::json::array();
  for (auto [a, b] : sc.network.edges) net["edges"].push_back({a, b});
  auto& traj = j["trajectories"] = nlohmann::json::array();
  for (const auto& step : sc.trajectories) {
    auto row = nlohmann::json::array();
    for (const auto& x : step) row.push_back({x[0], x[1], x[2], x[3]});
    traj.push_back(std::move(row));
  }
  auto& meas = j["measurements"] = nlohmann::json::array();
  for (const auto& sensor : sc.measurements) {
    auto s = nlohmann::json::array();
    for (const auto& step : sensor) {
      auto row = nlohmann::json::array();
      for (const auto& z : step) row.push_back({z.x(), z.y()});
      s.push_back(std::move(row));
    }
    meas.push_back(std::move(s));
  }
  j["associations"] = sc.true_associations;
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "sepcal-scenario/1") {
    throw ConfigError("scenario json: unknown format tag");
  }
  Scenario sc;
  sc.config = scenario_config_from_json(j.at("config"));
  const auto& net = j.at("network");
  sc.network.anchor = net.at("anchor").get<int>();
  for (const auto& p : net.at("positions")) {
    sc.network.positions.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  }
  for (const auto& e : net.at("edges")) sc.network.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  for (const auto& step : j.at("trajectories")) {
    std::vector<Vec4> row;
    for (const auto& x : step) {
      row.emplace_back(x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>(),
                       x.at(3).get<double>());
    }
    sc.trajectories.push_back(std::move(row));
  }
  for (const auto& sensor : j.at("measurements")) {
    std::vector<std::vector<Vec2>> s;
    for (const auto& step : sensor) {
      std::vector<Vec2> row;
      for (const auto& z : step) row.emplace_back(z.at(0).get<double>(), z.at(1).get<double>());
      s.push_back(std::move(row));
    }
    sc.measurements.push_back(std::move(s));
  }
  sc.true_associations = j.at("associations").get<Associations>();
  return sc;
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << to_json_value(sc).dump(1) << '\n';
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return scenario_from_json(nlohmann::json::parse(in));
}

}  // namespace sepcal
