// Distributionally robust free-energy control on the pendulum benchmark.
//
//   drfe --stage full --out results --jobs 4
//   drfe --config run.json --stage simulate --runs 100 --seed 7

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "drfe/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Robust free-energy policy synthesis for the stochastic pendulum"};

  std::optional<std::string> config_path, stage, step_rule, out;
  std::optional<unsigned> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs, horizon;
  std::optional<int> max_iters;
  std::optional<double> omega_tol, delta0, delta1, eta_baseline, eta_omega, eta_torque, theta0,
      omega0;

  app.add_option("--config", config_path, "JSON config file with flat keys");
  app.add_option("--stage", stage, "solve-inner | synthesize | simulate | full");
  app.add_option("--jobs", jobs, "worker threads for the inner solves");
  app.add_option("--seed", seed, "seed for Monte Carlo runs and random restarts");
  app.add_option("--runs", runs, "Monte Carlo runs");
  app.add_option("--horizon", horizon, "simulation steps per run");
  app.add_option("--omega-tol", omega_tol, "Frank-Wolfe stationarity tolerance");
  app.add_option("--max-iters", max_iters, "Frank-Wolfe iteration cap");
  app.add_option("--delta0", delta0, "lower likelihood-ratio bound");
  app.add_option("--delta1", delta1, "upper likelihood-ratio bound");
  app.add_option("--eta-baseline", eta_baseline, "constant term of the ambiguity radius");
  app.add_option("--eta-omega", eta_omega, "coefficient of omega^2 in the radius");
  app.add_option("--eta-torque", eta_torque, "coefficient of u^2 in the radius");
  app.add_option("--theta0", theta0, "initial angle");
  app.add_option("--omega0", omega0, "initial angular velocity");
  app.add_option("--step-rule", step_rule, "adaptive | anchored");
  app.add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  drfe::run::RunConfig config;
  try {
    if (config_path) {
      config.merge_json(drfe::json::parse(drfe::read_file(*config_path)));
    }
    drfe::json overrides = drfe::json::object();
    if (stage) overrides["stage"] = *stage;
    if (jobs) overrides["jobs"] = *jobs;
    if (seed) overrides["seed"] = *seed;
    if (runs) overrides["runs"] = *runs;
    if (horizon) overrides["horizon"] = *horizon;
    if (omega_tol) overrides["omega_tol"] = *omega_tol;
    if (max_iters) overrides["max_iters"] = *max_iters;
    if (delta0) overrides["delta0"] = *delta0;
    if (delta1) overrides["delta1"] = *delta1;
    if (eta_baseline) overrides["eta_baseline"] = *eta_baseline;
    if (eta_omega) overrides["eta_omega"] = *eta_omega;
    if (eta_torque) overrides["eta_torque"] = *eta_torque;
    if (theta0) overrides["theta0"] = *theta0;
    if (omega0) overrides["omega0"] = *omega0;
    if (step_rule) overrides["step_rule"] = *step_rule;
    if (out) overrides["out"] = *out;
    config.merge_json(overrides);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  return drfe::run::execute(config, std::cout, std::cerr);
}
