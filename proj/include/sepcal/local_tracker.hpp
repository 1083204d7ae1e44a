#pragma once

// Single-sensor multi-object filtering with hard, per-step data association.
// Each step predicts every track, scores all measurement/track pairs, takes
// the best assignment and runs a Kalman update per track. Nothing here
// depends on the sensor offsets, so one run per sensor serves every
// candidate evaluated later.

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sepcal/assignment.hpp"
#include "sepcal/errors.hpp"
#include "sepcal/gaussian.hpp"
#include "sepcal/lgss.hpp"
#include "sepcal/scenario.hpp"

namespace sepcal {

struct TrackSet {
  std::vector<Gaussian> tracks;  // local frame, one per object
  int step = 0;

  int size() const { return static_cast<int>(tracks.size()); }
};

struct FilterStep {
  int step = 0;
  TrackSet predicted;
  TrackSet posterior;
  Permutation tau;               // tau[o] = m
  Permutation rho;               // rho[m] = o, the inverse of tau
  double log_s = 0.0;            // sum_o cost(o, tau[o])
  std::vector<Vec2> measurements;
  Eigen::MatrixXd cost;
};

struct FilterOutput {
  int sensor = -1;
  TrackSet initial;
  std::vector<FilterStep> steps;  // consecutive, starting at first_step()

  int first_step() const { return steps.empty() ? 0 : steps.front().step; }
  int last_step() const { return steps.empty() ? -1 : steps.back().step; }
  int num_objects() const { return initial.size(); }

  bool covers(int k) const { return !steps.empty() && k >= first_step() && k <= last_step(); }

  const FilterStep& at(int k) const {
    if (!covers(k)) throw std::out_of_range("filter output has no step " + std::to_string(k));
    return steps[static_cast<std::size_t>(k - first_step())];
  }
};

/// Steps are 1-based. Tracks are seeded at `seed_step` and filtered over
/// seed_step + 1 .. last_step; likelihoods read first_step .. last_step.
struct FilterWindow {
  int seed_step = 20;
  int first_step = 21;
  int last_step = 30;

  static FilterWindow trailing(int first, int length) { return {first - 1, first, first + length - 1}; }
  int length() const { return last_step - first_step + 1; }
};

// Counts every completed run_local_filter call in the process.
inline std::atomic<std::uint64_t>& local_filter_run_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline std::uint64_t local_filter_runs() { return local_filter_run_counter().load(); }

/// c(o, m) = log N(z_o; H x_m, R + H P_m Hᵀ) over predicted tracks.
inline Eigen::MatrixXd build_cost_matrix(const TrackSet& pred, const std::vector<Vec2>& z,
                                         const SensorModel& s) {
  const int n = pred.size();
  if (static_cast<int>(z.size()) != n) {
    throw std::invalid_argument("build_cost_matrix: " + std::to_string(z.size()) +
                                " measurements for " + std::to_string(n) + " tracks");
  }
  Eigen::MatrixXd cost(n, n);
  for (int m = 0; m < n; ++m) {
    const Gaussian innov = predict_measurement(pred.tracks[m], s);
    for (int o = 0; o < n; ++o) cost(o, m) = gaussian_logpdf(z[o], innov);
  }
  return cost;
}

namespace detail {

inline FilterStep update_with_association(TrackSet predicted, const std::vector<Vec2>& z,
                                          const SensorModel& s, Eigen::MatrixXd cost, Permutation tau) {
  FilterStep out;
  out.step = predicted.step;
  out.rho = inverse_permutation(tau);
  out.log_s = assignment_cost(cost, tau);
  out.posterior.step = predicted.step;
  out.posterior.tracks.reserve(predicted.tracks.size());
  for (int m = 0; m < predicted.size(); ++m) {
    out.posterior.tracks.push_back(kf_update(predicted.tracks[m], z[out.rho[m]], s).posterior);
  }
  out.tau = std::move(tau);
  out.predicted = std::move(predicted);
  out.measurements = z;
  out.cost = std::move(cost);
  return out;
}

inline TrackSet predict_all(const TrackSet& prev, const MotionModel& motion) {
  TrackSet pred;
  pred.step = prev.step + 1;
  pred.tracks.reserve(prev.tracks.size());
  for (const auto& t : prev.tracks) pred.tracks.push_back(kf_predict(t, motion));
  return pred;
}

}  // namespace detail

/// One filtering step from `prev` (the posterior at step k - 1).
inline FilterStep filter_step(const TrackSet& prev, const std::vector<Vec2>& z, const MotionModel& motion,
                              const SensorModel& s) {
  if (static_cast<int>(z.size()) != prev.size()) {
    throw std::invalid_argument("filter_step: measurement count differs from track count");
  }
  TrackSet pred = detail::predict_all(prev, motion);
  Eigen::MatrixXd cost = build_cost_matrix(pred, z, s);
  Permutation tau = auction_assign(cost).perm;
  return detail::update_with_association(std::move(pred), z, s, std::move(cost), std::move(tau));
}

/// Filtering step with the association supplied instead of estimated.
inline FilterStep filter_step_known(const TrackSet& prev, const std::vector<Vec2>& z, const Permutation& tau,
                                    const MotionModel& motion, const SensorModel& s) {
  if (static_cast<int>(z.size()) != prev.size() || !is_permutation(tau) ||
      static_cast<int>(tau.size()) != prev.size()) {
    throw std::invalid_argument("filter_step_known: bad association");
  }
  TrackSet pred = detail::predict_all(prev, motion);
  Eigen::MatrixXd cost = build_cost_matrix(pred, z, s);
  return detail::update_with_association(std::move(pred), z, s, std::move(cost), tau);
}

inline constexpr double kInitialVelocityStd = 100.0;

/// Tracks placed on the measurements of one step: position = z, velocity 0,
/// covariance diag(R, 100² I).
inline TrackSet seed_tracks(const std::vector<Vec2>& z, const SensorModel& s, int step) {
  TrackSet ts;
  ts.step = step;
  for (const auto& zo : z) {
    Vec4 mean = Vec4::Zero();
    mean.head<2>() = zo;
    Mat4 cov = Mat4::Zero();
    cov.topLeftCorner<2, 2>() = s.R;
    cov.bottomRightCorner<2, 2>() = kInitialVelocityStd * kInitialVelocityStd * Mat2::Identity();
    ts.tracks.emplace_back(mean, cov);
  }
  return ts;
}

/// Filters `meas[k - 1]` for k = initial.step + 1 .. last_step.
inline FilterOutput run_local_filter(const std::vector<std::vector<Vec2>>& meas, const TrackSet& initial,
                                     int last_step, const MotionModel& motion, const SensorModel& s,
                                     int sensor = -1) {
  if (initial.step < 0 || last_step <= initial.step) {
    throw std::invalid_argument("run_local_filter: empty window");
  }
  if (last_step > static_cast<int>(meas.size())) {
    throw std::out_of_range("run_local_filter: window ends at step " + std::to_string(last_step) +
                            " but the scenario has " + std::to_string(meas.size()) + " steps");
  }
  FilterOutput out;
  out.sensor = sensor;
  out.initial = initial;
  out.steps.reserve(static_cast<std::size_t>(last_step - initial.step));
  const TrackSet* prev = &out.initial;
  for (int k = initial.step + 1; k <= last_step; ++k) {
    out.steps.push_back(filter_step(*prev, meas[k - 1], motion, s));
    prev = &out.steps.back().posterior;
  }
  local_filter_run_counter().fetch_add(1);
  return out;
}

inline FilterOutput run_local_filter(const Scenario& sc, int sensor, const FilterWindow& w) {
  if (sensor < 0 || sensor >= sc.num_sensors()) throw std::out_of_range("run_local_filter: bad sensor");
  if (w.seed_step < 1 || w.first_step <= w.seed_step || w.last_step < w.first_step) {
    throw ConfigError("run_local_filter: window needs 1 <= seed_step < first_step <= last_step");
  }
  if (w.last_step > sc.num_steps()) {
    throw std::out_of_range("run_local_filter: window exceeds scenario length");
  }
  const SensorModel s = SensorModel::position(sc.config.sigma_n);
  const auto& meas = sc.measurements[sensor];
  return run_local_filter(meas, seed_tracks(meas[w.seed_step - 1], s, w.seed_step), w.last_step,
                          sc.config.motion, s, sensor);
}

/// Same recursion with tau[k - 1] imposed at every step.
inline FilterOutput run_local_filter_known(const std::vector<std::vector<Vec2>>& meas,
                                           const std::vector<Permutation>& tau, const TrackSet& initial,
                                           int last_step, const MotionModel& motion, const SensorModel& s) {
  if (last_step <= initial.step || last_step > static_cast<int>(meas.size()) ||
      last_step > static_cast<int>(tau.size())) {
    throw std::out_of_range("run_local_filter_known: bad window");
  }
  FilterOutput out;
  out.initial = initial;
  const TrackSet* prev = &out.initial;
  for (int k = initial.step + 1; k <= last_step; ++k) {
    out.steps.push_back(filter_step_known(*prev, meas[k - 1], tau[k - 1], motion, s));
    prev = &out.steps.back().posterior;
  }
  local_filter_run_counter().fetch_add(1);
  return out;
}

// ---------------------------------------------------------------------------
// JSON: {"sensor", "initial": trackset, "steps": [{"step", "tau", "log_s",
// "measurements", "predicted", "posterior"}]}, trackset = {"step", "tracks":
// [{"mean": [4], "cov": [16, row-major]}]}.

inline nlohmann::json to_json_value(const Gaussian& g) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size());
  std::vector<double> cov;
  for (Eigen::Index r = 0; r < g.cov.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cov.cols(); ++c) cov.push_back(g.cov(r, c));
  }
  j["cov"] = cov;
  return j;
}

inline Gaussian gaussian_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto cov = j.at("cov").get<std::vector<double>>();
  const auto d = static_cast<Eigen::Index>(mean.size());
  if (static_cast<Eigen::Index>(cov.size()) != d * d) throw ConfigError("gaussian json: bad covariance size");
  Gaussian g;
  g.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
  g.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cov.data(), d, d);
  return g;
}

inline nlohmann::json to_json_value(const TrackSet& ts) {
  nlohmann::json j;
  j["step"] = ts.step;
  j["tracks"] = nlohmann::json::array();
  for (const auto& t : ts.tracks) j["tracks"].push_back(to_json_value(t));
  return j;
}

inline TrackSet trackset_from_json(const nlohmann::json& j) {
  TrackSet ts;
  ts.step = j.at("step").get<int>();
  for (const auto& t : j.at("tracks")) ts.tracks.push_back(gaussian_from_json(t));
  return ts;
}

inline nlohmann::json to_json_value(const FilterOutput& out) {
  nlohmann::json j;
  j["sensor"] = out.sensor;
  j["initial"] = to_json_value(out.initial);
  j["steps"] = nlohmann::json::array();
  for (const auto& st : out.steps) {
    nlohmann::json s;
    s["step"] = st.step;
    s["tau"] = st.tau;
    s["log_s"] = st.log_s;
    s["measurements"] = nlohmann::json::array();
    for (const auto& z : st.measurements) s["measurements"].push_back({z.x(), z.y()});
    s["predicted"] = to_json_value(st.predicted);
    s["posterior"] = to_json_value(st.posterior);
    j["steps"].push_back(std::move(s));
  }
  return j;
}

/// The cost matrix is not serialized; it is rebuilt from the predicted
/// tracks, which requires the sensor model.
inline FilterOutput filter_output_from_json(const nlohmann::json& j, const SensorModel& s) {
  FilterOutput out;
  out.sensor = j.at("sensor").get<int>();
  out.initial = trackset_from_json(j.at("initial"));
  for (const auto& sj : j.at("steps")) {
    FilterStep st;
    st.step = sj.at("step").get<int>();
    st.tau = sj.at("tau").get<Permutation>();
    st.rho = inverse_permutation(st.tau);
    st.log_s = sj.at("log_s").get<double>();
    for (const auto& z : sj.at("measurements")) st.measurements.emplace_back(z.at(0).get<double>(), z.at(1).get<double>());
    st.predicted = trackset_from_json(sj.at("predicted"));
    st.posterior = trackset_from_json(sj.at("posterior"));
    st.cost = build_cost_matrix(st.predicted, st.measurements, s);
    out.steps.push_back(std::move(st));
  }
  return out;
}

}  // namespace sepcal
