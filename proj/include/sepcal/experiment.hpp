#pragma once

// Monte Carlo calibration batches: configuration, metrics, CSV files and
// per-iteration summaries.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sepcal/errors.hpp"
#include "sepcal/nbp.hpp"
#include "sepcal/parallel.hpp"
#include "sepcal/scenario.hpp"
#include "sepcal/separable_likelihood.hpp"

namespace sepcal {

struct RunConfig {
  ScenarioConfig scenario;
  int window_start = 21;
  int window_length = 10;  // t
  int particles = 100;     // L
  int iterations = 16;     // S
  int runs = 25;
  std::uint64_t seed = 1;  // run r uses seed + r
  LikelihoodVariant variant = LikelihoodVariant::quad;
  std::string output_dir;  // empty: nothing written
  int threads = 0;         // 0: one per hardware thread
  bool dump_beliefs = false;
  double prior_margin = 0.25;
  bool degeneracy_correction = true;
  double spread_factor = 3.0;
  double resolution_factor = 8.0;
  bool belief_in_proposal = false;

  FilterWindow window() const { return FilterWindow::trailing(window_start, window_length); }

  std::uint64_t run_seed(int r) const { return seed + static_cast<std::uint64_t>(r); }

  void validate() const {
    if (window_length < 1) throw ConfigError("config: t must be >= 1");
    if (particles < 2) throw ConfigError("config: L must be >= 2");
    if (iterations < 1) throw ConfigError("config: S must be >= 1");
    if (runs < 1) throw ConfigError("config: runs must be >= 1");
    if (window_start < 2) throw ConfigError("config: window_start must be >= 2");
    if (window_start + window_length - 1 > scenario.num_steps) {
      throw ConfigError("config: window ends after the last simulated step");
    }
    if (scenario.num_objects < 1) throw ConfigError("config: objects must be >= 1");
    if (!(scenario.sigma_n > 0.0)) throw ConfigError("config: sigma_n must be > 0");
    if (!(prior_margin >= 0.0)) throw ConfigError("config: prior_margin must be >= 0");
    if (!(spread_factor >= 0.0) || !(resolution_factor >= 0.0)) throw ConfigError("config: factors must be >= 0");
  }

  CalibrationConfig calibration(std::uint64_t run_seed, int lbp_threads) const {
    CalibrationConfig c;
    c.window = window();
    c.variant = variant;
    c.iterations = iterations;
    c.prior_margin = prior_margin;
    c.keep_beliefs = dump_beliefs;
    c.lbp.num_particles = particles;
    c.lbp.seed = run_seed * 0x9E3779B97F4A7C15ull + 1;
    c.lbp.threads = lbp_threads;
    c.lbp.belief_in_proposal = belief_in_proposal;
    c.lbp.message.degeneracy_correction = degeneracy_correction;
    c.lbp.message.spread_factor = spread_factor;
    c.lbp.message.resolution_factor = resolution_factor;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno != 0 || !std::isfinite(d)) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
  return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const long long n = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return n;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + v + "'");
}

}  // namespace detail

/// Applies one `key = value` setting.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto as_int = [&](int lo) {
    const long long n = parse_int(key, value);
    if (n < lo || n > 1'000'000'000) throw ConfigError("config: " + key + " out of range");
    return static_cast<int>(n);
  };
  auto& s = c.scenario;
  if (key == "rows") s.rows = as_int(1);
  else if (key == "cols") s.cols = as_int(1);
  else if (key == "spacing") s.spacing = parse_double(key, value);
  else if (key == "objects") s.num_objects = as_int(1);
  else if (key == "steps") s.num_steps = as_int(1);
  else if (key == "sigma_n") s.sigma_n = parse_double(key, value);
  else if (key == "process_sigma2") s.motion = MotionModel::make(1.0, parse_double(key, value), 0.25, 0.5, 0.5, 1.0);
  else if (key == "window_start") c.window_start = as_int(0);
  else if (key == "t") c.window_length = as_int(0);
  else if (key == "L") c.particles = as_int(0);
  else if (key == "S") c.iterations = as_int(0);
  else if (key == "runs") c.runs = as_int(0);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "variant") c.variant = parse_variant(value);
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "threads") c.threads = as_int(0);
  else if (key == "dump_beliefs") c.dump_beliefs = parse_bool(key, value);
  else if (key == "prior_margin") c.prior_margin = parse_double(key, value);
  else if (key == "degeneracy_correction") c.degeneracy_correction = parse_bool(key, value);
  else if (key == "spread_factor") c.spread_factor = parse_double(key, value);
  else if (key == "resolution_factor") c.resolution_factor = parse_double(key, value);
  else if (key == "belief_in_proposal") c.belief_in_proposal = parse_bool(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

/// `key = value` lines; '#' starts a comment.
inline RunConfig parse_run_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  return parse_run_config(in);
}

// ---------------------------------------------------------------------------
// Metrics.

struct MetricsRow {
  int run = 0;
  std::uint64_t seed = 0;
  int iteration = 0;  // 1-based
  double mse = 0.0;   // Σ_i ||θ̂_i − θ*_i||²
  double mean_miss = 0.0;
  std::vector<double> node_miss;

  bool operator==(const MetricsRow&) const = default;
};

struct TimingRow {
  int run = 0;
  std::uint64_t seed = 0;
  std::uint64_t evaluations = 0;
  double ms_per_evaluation = 0.0;
  double quad_ms_per_evaluation = 0.0;
  double dual_ms_per_evaluation = 0.0;
  double filter_seconds = 0.0;
  double lbp_seconds = 0.0;
};

struct RunOutput {
  std::vector<MetricsRow> metrics;
  TimingRow timing;
  CalibrationResult calibration;
};

inline std::vector<MetricsRow> metrics_from(const CalibrationResult& res, int run, std::uint64_t seed) {
  std::vector<MetricsRow> rows;
  for (std::size_t s = 0; s < res.estimates.size(); ++s) {
    MetricsRow row;
    row.run = run;
    row.seed = seed;
    row.iteration = static_cast<int>(s) + 1;
    for (std::size_t i = 0; i < res.truth.size(); ++i) {
      const double d = (res.estimates[s][i] - res.truth[i]).norm();
      row.node_miss.push_back(d);
      row.mse += d * d;
      row.mean_miss += d;
    }
    row.mean_miss /= static_cast<double>(res.truth.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

struct VariantTiming {
  std::uint64_t evaluations = 0;
  double quad_ms = 0.0;  // per evaluation
  double dual_ms = 0.0;
};

/// Times both variants on the same prior-drawn candidate pairs for every
/// edge, reusing one set of local filter outputs.
inline VariantTiming compare_variants(const Scenario& sc, const FilterWindow& w, int particles, std::uint64_t seed) {
  const SensorModel sensor = SensorModel::position(sc.config.sigma_n);
  std::vector<FilterOutput> local;
  for (int i = 0; i < sc.num_sensors(); ++i) local.push_back(run_local_filter(sc, i, w));
  const auto priors = default_priors(sc.network, 0.25);
  std::mt19937_64 rng(seed);
  VariantTiming t;
  double quad_s = 0.0, dual_s = 0.0;
  std::vector<Vec2> ta(particles), tb(particles);
  std::vector<double> out(particles);
  for (auto [a, b] : sc.network.edges) {
    const EdgePotential edge(local[a], local[b], PairSensors{sensor, sensor}, w.first_step, w.last_step);
    for (int l = 0; l < particles; ++l) {
      ta[l] = priors[a].sample(rng);
      tb[l] = priors[b].sample(rng);
    }
    auto t0 = std::chrono::steady_clock::now();
    edge.evaluate_batch(LikelihoodVariant::quad, ta, tb, out);
    auto t1 = std::chrono::steady_clock::now();
    edge.evaluate_batch(LikelihoodVariant::dual, ta, tb, out);
    auto t2 = std::chrono::steady_clock::now();
    quad_s += std::chrono::duration<double>(t1 - t0).count();
    dual_s += std::chrono::duration<double>(t2 - t1).count();
    t.evaluations += static_cast<std::uint64_t>(particles);
  }
  if (t.evaluations > 0) {
    t.quad_ms = 1e3 * quad_s / static_cast<double>(t.evaluations);
    t.dual_ms = 1e3 * dual_s / static_cast<double>(t.evaluations);
  }
  return t;
}

inline ScenarioConfig scenario_for_run(const RunConfig& cfg, int run) {
  ScenarioConfig s = cfg.scenario;
  s.seed = cfg.run_seed(run);
  return s;
}

inline RunOutput run_single(const RunConfig& cfg, int run, int lbp_threads = 1) {
  const std::uint64_t seed = cfg.run_seed(run);
  const Scenario sc = generate_scenario(scenario_for_run(cfg, run));
  RunOutput out;
  out.calibration = run_calibration(sc, cfg.calibration(seed, lbp_threads));
  out.metrics = metrics_from(out.calibration, run, seed);
  const auto& c = out.calibration;
  out.timing.run = run;
  out.timing.seed = seed;
  out.timing.evaluations = c.evaluations;
  out.timing.ms_per_evaluation = c.evaluations ? 1e3 * c.evaluation_seconds / static_cast<double>(c.evaluations) : 0.0;
  const auto vt = compare_variants(sc, cfg.window(), cfg.particles, seed);
  out.timing.quad_ms_per_evaluation = vt.quad_ms;
  out.timing.dual_ms_per_evaluation = vt.dual_ms;
  out.timing.filter_seconds = c.filter_seconds;
  out.timing.lbp_seconds = c.lbp_seconds;
  return out;
}

// ---------------------------------------------------------------------------
// CSV.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  std::size_t nodes = rows.empty() ? 0 : rows.front().node_miss.size();
  os << "run,seed,iteration,mse,mean_miss";
  for (std::size_t i = 0; i < nodes; ++i) os << ",miss_" << i;
  os << '\n';
  for (const auto& r : rows) {
    if (r.node_miss.size() != nodes) throw std::invalid_argument("write_metrics_csv: node counts differ");
    os << r.run << ',' << r.seed << ',' << r.iteration << ',' << format_double(r.mse) << ','
       << format_double(r.mean_miss);
    for (double d : r.node_miss) os << ',' << format_double(d);
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics csv: empty input");
  const auto header = detail::split_csv(line);
  if (header.size() < 5 || header[0] != "run" || header[2] != "iteration" || header[3] != "mse") {
    throw ConfigError("metrics csv: unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) throw ConfigError("metrics csv: ragged row");
    MetricsRow r;
    r.run = static_cast<int>(detail::parse_int("run", cells[0]));
    r.seed = static_cast<std::uint64_t>(std::stoull(cells[1]));
    r.iteration = static_cast<int>(detail::parse_int("iteration", cells[2]));
    r.mse = detail::parse_double("mse", cells[3]);
    r.mean_miss = detail::parse_double("mean_miss", cells[4]);
    for (std::size_t c = 5; c < cells.size(); ++c) r.node_miss.push_back(detail::parse_double(header[c], cells[c]));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_timing_csv(std::ostream& os, const std::vector<TimingRow>& rows) {
  os << "run,seed,evaluations,ms_per_evaluation,quad_ms_per_evaluation,dual_ms_per_evaluation,filter_seconds,"
        "lbp_seconds\n";
  for (const auto& t : rows) {
    os << t.run << ',' << t.seed << ',' << t.evaluations << ',' << format_double(t.ms_per_evaluation) << ','
       << format_double(t.quad_ms_per_evaluation) << ',' << format_double(t.dual_ms_per_evaluation) << ','
       << format_double(t.filter_seconds) << ',' << format_double(t.lbp_seconds) << '\n';
  }
}

inline void write_estimates_csv(std::ostream& os, const CalibrationResult& res, int run, bool header) {
  if (header) os << "run,iteration,node,x,y,true_x,true_y\n";
  for (std::size_t s = 0; s < res.estimates.size(); ++s)
    for (std::size_t i = 0; i < res.truth.size(); ++i) {
      os << run << ',' << s + 1 << ',' << i << ',' << format_double(res.estimates[s][i].x()) << ','
         << format_double(res.estimates[s][i].y()) << ',' << format_double(res.truth[i].x()) << ','
         << format_double(res.truth[i].y()) << '\n';
    }
}

inline void write_beliefs_csv(std::ostream& os, const CalibrationResult& res, int run) {
  os << "run,iteration,node,particle,x,y,weight\n";
  for (std::size_t s = 0; s < res.beliefs.size(); ++s)
    for (std::size_t i = 0; i < res.beliefs[s].size(); ++i) {
      const auto& b = res.beliefs[s][i];
      for (int l = 0; l < b.size(); ++l) {
        os << run << ',' << s + 1 << ',' << i << ',' << l << ',' << format_double(b.samples[l].x()) << ','
           << format_double(b.samples[l].y()) << ',' << format_double(b.weights[l]) << '\n';
      }
    }
}

// ---------------------------------------------------------------------------
// Summary.

/// Quantile with linear interpolation between order statistics
/// (h = (n − 1) p).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct SummaryRow {
  int iteration = 0;
  int runs = 0;
  double miss_min = 0.0, miss_q1 = 0.0, miss_median = 0.0, miss_q3 = 0.0, miss_max = 0.0, miss_mean = 0.0;
  double mse_median = 0.0;
  double log10_mse_mean = 0.0;
  double log10_mse_median = 0.0;
};

inline std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw ConfigError("summarize: no metrics rows");
  std::map<int, std::vector<const MetricsRow*>> by_iter;
  for (const auto& r : rows) by_iter[r.iteration].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [it, rs] : by_iter) {
    std::vector<double> miss, mse, lmse;
    for (const auto* r : rs) {
      miss.push_back(r->mean_miss);
      mse.push_back(r->mse);
      lmse.push_back(std::log10(std::max(r->mse, std::numeric_limits<double>::min())));
    }
    SummaryRow s;
    s.iteration = it;
    s.runs = static_cast<int>(rs.size());
    s.miss_min = *std::min_element(miss.begin(), miss.end());
    s.miss_max = *std::max_element(miss.begin(), miss.end());
    s.miss_q1 = quantile(miss, 0.25);
    s.miss_median = quantile(miss, 0.5);
    s.miss_q3 = quantile(miss, 0.75);
    double acc = 0.0;
    for (double m : miss) acc += m;
    s.miss_mean = acc / static_cast<double>(miss.size());
    s.mse_median = quantile(mse, 0.5);
    acc = 0.0;
    for (double m : lmse) acc += m;
    s.log10_mse_mean = acc / static_cast<double>(lmse.size());
    s.log10_mse_median = quantile(lmse, 0.5);
    out.push_back(s);
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "iteration,runs,miss_min,miss_q1,miss_median,miss_q3,miss_max,miss_mean,mse_median,log10_mse_mean,"
        "log10_mse_median\n";
  for (const auto& s : rows) {
    os << s.iteration << ',' << s.runs << ',' << format_double(s.miss_min) << ',' << format_double(s.miss_q1) << ','
       << format_double(s.miss_median) << ',' << format_double(s.miss_q3) << ',' << format_double(s.miss_max) << ','
       << format_double(s.miss_mean) << ',' << format_double(s.mse_median) << ','
       << format_double(s.log10_mse_mean) << ',' << format_double(s.log10_mse_median) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Batch.

struct ExperimentResult {
  std::vector<MetricsRow> metrics;  // ordered by run, then iteration
  std::vector<TimingRow> timing;
  std::vector<SummaryRow> summary;
  double seconds = 0.0;
};

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  return os;
}

}  // namespace detail

/// Runs every seed, one run per worker, and writes metrics.csv, summary.csv,
/// estimates.csv, timing.csv and optionally beliefs_<run>.csv to output_dir.
inline ExperimentResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::path dir;
  if (!cfg.output_dir.empty()) {
    dir = cfg.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RunOutput> outputs(static_cast<std::size_t>(cfg.runs));
  parallel_for(outputs.size(), cfg.threads, [&](std::size_t r) {
    outputs[r] = run_single(cfg, static_cast<int>(r));
    if (!dir.empty() && cfg.dump_beliefs) {
      auto os = detail::open_output(dir / ("beliefs_" + std::to_string(r) + ".csv"));
      write_beliefs_csv(os, outputs[r].calibration, static_cast<int>(r));
    }
    outputs[r].calibration.beliefs.clear();
  });
  ExperimentResult res;
  for (const auto& o : outputs) {
    res.metrics.insert(res.metrics.end(), o.metrics.begin(), o.metrics.end());
    res.timing.push_back(o.timing);
  }
  res.summary = summarize(res.metrics);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!dir.empty()) {
    {
      auto os = detail::open_output(dir / "metrics.csv");
      write_metrics_csv(os, res.metrics);
    }
    {
      auto os = detail::open_output(dir / "summary.csv");
      write_summary_csv(os, res.summary);
    }
    {
      auto os = detail::open_output(dir / "timing.csv");
      write_timing_csv(os, res.timing);
    }
    auto os = detail::open_output(dir / "estimates.csv");
    for (std::size_t r = 0; r < outputs.size(); ++r) write_estimates_csv(os, outputs[r].calibration, static_cast<int>(r), r == 0);
  }
  return res;
}

}  // namespace sepcal
