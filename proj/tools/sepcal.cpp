#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "sepcal/diagnostics.hpp"
#include "sepcal/experiment.hpp"
#include "sepcal/scenario.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

// "4x4" -> rows, cols.
void apply_grid(sepcal::RunConfig& c, const std::string& grid) {
  const auto x = grid.find('x');
  if (x == std::string::npos) throw sepcal::ConfigError("--grid expects ROWSxCOLS, got '" + grid + "'");
  sepcal::apply_setting(c, "rows", grid.substr(0, x));
  sepcal::apply_setting(c, "cols", grid.substr(x + 1));
}

struct Overrides {
  std::string config, grid;
  std::map<std::string, std::string> values;  // config key -> text

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }

  sepcal::RunConfig resolve() const {
    sepcal::RunConfig c;
    if (!config.empty()) c = sepcal::load_run_config(config);
    if (!grid.empty()) apply_grid(c, grid);
    for (const auto& [k, v] : values) sepcal::apply_setting(c, k, v);
    c.validate();
    return c;
  }
};

void print_summary(const std::vector<sepcal::SummaryRow>& rows) {
  std::printf("%4s %5s %10s %10s %10s %12s\n", "iter", "runs", "miss_q1", "miss_med", "miss_q3", "log10_mse");
  for (const auto& s : rows) {
    std::printf("%4d %5d %10.3f %10.3f %10.3f %12.4f\n", s.iteration, s.runs, s.miss_q1, s.miss_median, s.miss_q3,
                s.log10_mse_mean);
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Sensor network self-calibration from local tracks"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a scenario and write it as JSON");
  Overrides sim_o;
  std::string sim_out = "scenario.json";
  sim->add_option("--config", sim_o.config, "Run configuration file");
  sim->add_option("--grid", sim_o.grid, "Sensor grid, ROWSxCOLS");
  sim_o.add(sim, "--seed", "seed", "Random seed");
  sim_o.add(sim, "--objects", "objects", "Number of objects");
  sim_o.add(sim, "--steps", "steps", "Number of time steps");
  sim_o.add(sim, "--sigma-n", "sigma_n", "Measurement noise std");
  sim->add_option("-o,--output", sim_out, "Output JSON file");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Run a batch of calibration runs");
  Overrides cal_o;
  cal->add_option("--config", cal_o.config, "Run configuration file");
  cal->add_option("--grid", cal_o.grid, "Sensor grid, ROWSxCOLS");
  cal_o.add(cal, "--seed", "seed", "Seed of run 0");
  cal_o.add(cal, "--variant", "variant", "quad or dual");
  cal_o.add(cal, "-t,--window", "t", "Window length");
  cal_o.add(cal, "-L,--particles", "L", "Particles per belief");
  cal_o.add(cal, "-S,--iterations", "S", "Belief propagation rounds");
  cal_o.add(cal, "--runs", "runs", "Number of runs");
  cal_o.add(cal, "--threads", "threads", "Worker threads, 0 for all");
  cal_o.add(cal, "--objects", "objects", "Number of objects");
  cal_o.add(cal, "--steps", "steps", "Number of time steps");
  cal_o.add(cal, "--sigma-n", "sigma_n", "Measurement noise std");
  cal_o.add(cal, "--dump-beliefs", "dump_beliefs", "Write particle beliefs (true/false)");
  cal_o.add(cal, "-o,--output", "output_dir", "Output directory");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Expected divergences and bounds on random linear-Gaussian pairs");
  int diag_n = 100;
  std::uint64_t diag_seed = 42;
  std::string diag_out;
  diag->add_option("--instances", diag_n, "Number of random instances")->check(CLI::PositiveNumber);
  diag->add_option("--seed", diag_seed, "Random seed");
  diag->add_option("-o,--output", diag_out, "CSV file (stdout if omitted)");

  // summarize
  auto* sum = app.add_subcommand("summarize", "Per-iteration statistics of a metrics.csv");
  std::string sum_in, sum_out;
  sum->add_option("metrics", sum_in, "metrics.csv")->required();
  sum->add_option("-o,--output", sum_out, "summary CSV (table only if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  if (*sim) {
    auto c = sim_o.resolve();
    const auto sc = sepcal::generate_scenario(c.scenario);
    sepcal::save_scenario(sc, sim_out);
    std::printf("wrote %s: %d sensors, %d objects, %d steps\n", sim_out.c_str(), sc.num_sensors(), sc.num_objects(),
                sc.num_steps());
  } else if (*cal) {
    const auto c = cal_o.resolve();
    const auto res = sepcal::run_experiment(c);
    print_summary(res.summary);
    double evals = 0.0, quad = 0.0, dual = 0.0;
    for (const auto& t : res.timing) {
      evals += static_cast<double>(t.evaluations);
      quad += t.quad_ms_per_evaluation;
      dual += t.dual_ms_per_evaluation;
    }
    const double n = static_cast<double>(res.timing.size());
    std::printf("runs %d, %.1f s, %.0f likelihood evaluations per run, quad %.4g ms/eval, dual %.4g ms/eval\n",
                c.runs, res.seconds, evals / n, quad / n, dual / n);
    if (!c.output_dir.empty()) std::printf("results in %s\n", c.output_dir.c_str());
  } else if (*diag) {
    const auto rows = sepcal::run_diagnostics(diag_n, diag_seed);
    int chain = 0, better = 0;
    for (const auto& r : rows) {
      chain += r.bound_chain;
      better += r.quad_better;
    }
    if (diag_out.empty()) {
      sepcal::write_diagnostics_csv(std::cout, rows);
    } else {
      std::ofstream os(diag_out);
      if (!os) throw sepcal::IoError("cannot write " + diag_out);
      sepcal::write_diagnostics_csv(os, rows);
    }
    std::fprintf(stderr, "bound chain holds in %d/%d, quad closer in %d/%d\n", chain, diag_n, better, diag_n);
  } else if (*sum) {
    std::ifstream in(sum_in);
    if (!in) throw sepcal::IoError("cannot open " + sum_in);
    const auto rows = sepcal::summarize(sepcal::read_metrics_csv(in));
    print_summary(rows);
    if (!sum_out.empty()) {
      std::ofstream os(sum_out);
      if (!os) throw sepcal::IoError("cannot write " + sum_out);
      sepcal::write_summary_csv(os, rows);
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sepcal::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const sepcal::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const sepcal::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  }
}
