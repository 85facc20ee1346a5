#pragma once

// Pipeline driver behind the command-line tool: configuration with
// field-level validation, the solve-inner / synthesize / simulate stages,
// and the run manifest. Needs OpenSSL (libcrypto) for content hashes.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "drfe/errors.hpp"
#include "drfe/fw_solver.hpp"
#include "drfe/io.hpp"
#include "drfe/parallel.hpp"
#include "drfe/pendulum.hpp"
#include "drfe/robust_policy.hpp"

namespace drfe::run {

/// Rejected configuration; exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Stage { solve_inner, synthesize, simulate, full };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::solve_inner: return "solve-inner";
    case Stage::synthesize: return "synthesize";
    case Stage::simulate: return "simulate";
    case Stage::full: return "full";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "solve-inner") return Stage::solve_inner;
  if (s == "synthesize") return Stage::synthesize;
  if (s == "simulate") return Stage::simulate;
  if (s == "full") return Stage::full;
  throw ConfigError("stage: expected solve-inner, synthesize, simulate or full, got '" + s + "'");
}

struct RunConfig {
  Stage stage = Stage::full;
  unsigned jobs = default_jobs();
  std::uint64_t seed = 0;
  pendulum::BenchmarkSetup setup;
  SolverConfig solver;
  pendulum::SimulationConfig simulation;
  std::string out = "out";
  bool write_traces = true;

  json to_json() const {
    const auto& p = setup.params;
    const auto& g = setup.grid;
    return json{
        {"stage", to_string(stage)},
        {"jobs", jobs},
        {"seed", seed},
        {"runs", simulation.runs},
        {"horizon", simulation.horizon},
        {"theta0", simulation.initial.theta},
        {"omega0", simulation.initial.omega},
        {"omega_tol", solver.omega_tol},
        {"max_iters", solver.max_iters},
        {"l_floor", solver.L_floor},
        {"oracle_tol", solver.oracle_tol},
        {"restarts", solver.restarts},
        {"random_restarts", solver.random_restarts},
        {"step_rule", solver.step_rule == StepRule::adaptive ? "adaptive" : "anchored"},
        {"delta0", setup.bounds.delta0},
        {"delta1", setup.bounds.delta1},
        {"eta_baseline", setup.radius.baseline},
        {"eta_omega", setup.radius.omega},
        {"eta_torque", setup.radius.torque},
        {"cost_theta", setup.costs.theta},
        {"cost_omega", setup.costs.omega},
        {"cost_torque", setup.costs.torque},
        {"theta_cells", g.theta_cells},
        {"omega_cells", g.omega_cells},
        {"torque_cells", g.torque_cells},
        {"omega_max", g.omega_max},
        {"torque_max", g.torque_max},
        {"gravity", p.g},
        {"length", p.l},
        {"mass", p.m},
        {"dt", p.dt},
        {"var_theta", p.var_theta},
        {"var_omega", p.var_omega},
        {"nominal_var_theta", setup.nominal_var_theta},
        {"nominal_var_omega", setup.nominal_var_omega},
        {"out", out},
        {"write_traces", write_traces},
    };
  }

  /// Overlays the keys present in j; unknown keys and wrong types are errors.
  void merge_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    const json known = to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError(key + ": unknown configuration key");
    }
    auto get = [&](const char* key, auto& field) {
      if (!j.contains(key)) return;
      try {
        field = j.at(key).get<std::decay_t<decltype(field)>>();
      } catch (const json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type");
      }
    };
    auto get_count = [&](const char* key, auto& field) {
      if (!j.contains(key)) return;
      const auto& v = j.at(key);
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(std::string(key) + ": expected a nonnegative integer");
      }
      field = v.get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("stage")) {
      if (!j.at("stage").is_string()) throw ConfigError("stage: wrong type");
      stage = parse_stage(j.at("stage").get<std::string>());
    }
    if (j.contains("step_rule")) {
      const auto& v = j.at("step_rule");
      if (v == "adaptive") {
        solver.step_rule = StepRule::adaptive;
      } else if (v == "anchored") {
        solver.step_rule = StepRule::anchored;
      } else {
        throw ConfigError("step_rule: expected adaptive or anchored");
      }
    }
    get_count("jobs", jobs);
    get_count("seed", seed);
    get_count("runs", simulation.runs);
    get_count("horizon", simulation.horizon);
    get("theta0", simulation.initial.theta);
    get("omega0", simulation.initial.omega);
    get("omega_tol", solver.omega_tol);
    get_count("max_iters", solver.max_iters);
    get("l_floor", solver.L_floor);
    get("oracle_tol", solver.oracle_tol);
    get_count("restarts", solver.restarts);
    get_count("random_restarts", solver.random_restarts);
    get("delta0", setup.bounds.delta0);
    get("delta1", setup.bounds.delta1);
    get("eta_baseline", setup.radius.baseline);
    get("eta_omega", setup.radius.omega);
    get("eta_torque", setup.radius.torque);
    get("cost_theta", setup.costs.theta);
    get("cost_omega", setup.costs.omega);
    get("cost_torque", setup.costs.torque);
    get_count("theta_cells", setup.grid.theta_cells);
    get_count("omega_cells", setup.grid.omega_cells);
    get_count("torque_cells", setup.grid.torque_cells);
    get("omega_max", setup.grid.omega_max);
    get("torque_max", setup.grid.torque_max);
    get("gravity", setup.params.g);
    get("length", setup.params.l);
    get("mass", setup.params.m);
    get("dt", setup.params.dt);
    get("var_theta", setup.params.var_theta);
    get("var_omega", setup.params.var_omega);
    get("nominal_var_theta", setup.nominal_var_theta);
    get("nominal_var_omega", setup.nominal_var_omega);
    get("out", out);
    get("write_traces", write_traces);
  }

  void validate() const {
    auto positive = [](const char* key, double v) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + ": must be positive and finite");
    };
    auto nonnegative = [](const char* key, double v) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string(key) + ": must be nonnegative and finite");
      }
    };
    auto finite = [](const char* key, double v) {
      if (!std::isfinite(v)) throw ConfigError(std::string(key) + ": must be finite");
    };
    if (jobs < 1) throw ConfigError("jobs: must be >= 1");
    if (simulation.runs < 1) throw ConfigError("runs: must be >= 1");
    if (simulation.horizon < 1) throw ConfigError("horizon: must be >= 1");
    finite("theta0", simulation.initial.theta);
    finite("omega0", simulation.initial.omega);
    positive("omega_tol", solver.omega_tol);
    if (solver.max_iters < 1) throw ConfigError("max_iters: must be >= 1");
    positive("l_floor", solver.L_floor);
    positive("oracle_tol", solver.oracle_tol);
    positive("delta0", setup.bounds.delta0);
    positive("delta1", setup.bounds.delta1);
    if (setup.bounds.delta0 > 1.0) throw ConfigError("delta0: must be <= 1 so that r = 1 is feasible");
    if (setup.bounds.delta1 < 1.0) throw ConfigError("delta1: must be >= 1 so that r = 1 is feasible");
    nonnegative("eta_baseline", setup.radius.baseline);
    nonnegative("eta_omega", setup.radius.omega);
    nonnegative("eta_torque", setup.radius.torque);
    finite("cost_theta", setup.costs.theta);
    finite("cost_omega", setup.costs.omega);
    finite("cost_torque", setup.costs.torque);
    // The largest tabulated costs must stay finite too.
    finite("cost_theta", setup.costs.theta * std::numbers::pi * std::numbers::pi);
    finite("cost_omega", setup.costs.omega * setup.grid.omega_max * setup.grid.omega_max);
    finite("cost_torque", setup.costs.torque * setup.grid.torque_max * setup.grid.torque_max);
    if (setup.grid.theta_cells < 2) throw ConfigError("theta_cells: must be >= 2");
    if (setup.grid.omega_cells < 2) throw ConfigError("omega_cells: must be >= 2");
    if (setup.grid.torque_cells < 2) throw ConfigError("torque_cells: must be >= 2");
    positive("omega_max", setup.grid.omega_max);
    positive("torque_max", setup.grid.torque_max);
    positive("gravity", setup.params.g);
    positive("length", setup.params.l);
    positive("mass", setup.params.m);
    positive("dt", setup.params.dt);
    positive("var_theta", setup.params.var_theta);
    positive("var_omega", setup.params.var_omega);
    positive("nominal_var_theta", setup.nominal_var_theta);
    positive("nominal_var_omega", setup.nominal_var_omega);
    if (out.empty()) throw ConfigError("out: must not be empty");
  }
};

/// git's blob hash: SHA-1 of "blob <size>\0" followed by the content.
inline std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("SHA-1 computation failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

class Manifest {
 public:
  Manifest(std::filesystem::path path, const RunConfig& config) : path_(std::move(path)) {
    doc_ = json{{"config", config.to_json()},
                {"input_hashes", json::object()},
                {"stages", json::array()},
                {"status", "running"}};
  }
  void add_input(const std::string& name, std::string_view content) {
    doc_["input_hashes"][name] = git_blob_sha1(content);
  }
  void add_stage(const std::string& name, double seconds) {
    doc_["stages"].push_back(json{{"name", name}, {"wall_clock_seconds", seconds}});
  }
  void finish(const std::string& status, const std::string& error = {}) {
    doc_["status"] = status;
    if (!error.empty()) doc_["error"] = error;
    write();
  }
  void write() const { write_file(path_, doc_.dump(2) + "\n"); }

 private:
  std::filesystem::path path_;
  json doc_;
};

/// Failure inside a stage; exit code 2.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage " + stage + ": " + what) {}
};

/// Runs the configured stage(s). Returns the process exit code:
/// 0 success, 1 configuration error, 2 numerical failure.
inline int execute(const RunConfig& config, std::ostream& log, std::ostream& err) {
  namespace fs = std::filesystem;
  const fs::path dir = config.out;
  std::vector<double> worst_case_kl;
  std::optional<ConditionalKernel> policy;
  std::string kl_text, policy_text;
  try {
    config.validate();
    const std::size_t states = config.setup.grid.num_states();
    const std::size_t actions = config.setup.grid.num_actions();
    // Prerequisites are read and checked before anything is written.
    if (config.stage == Stage::synthesize) {
      kl_text = read_file(dir / "worst_case_kl.csv");
      worst_case_kl = parse_worst_case_kl_csv(kl_text, states, actions);
    }
    if (config.stage == Stage::simulate) {
      policy_text = read_file(dir / "policy.json");
      policy = load_policy(dir);
      if (policy->rows() != states || policy->cols() != actions) {
        throw ConfigError("policy.json: shape does not match the configured grid");
      }
    }
    fs::create_directories(dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  }

  Manifest manifest(dir / "run_manifest.json", config);
  const std::string config_text = config.to_json().dump();
  manifest.add_input("config", config_text);
  if (!kl_text.empty()) manifest.add_input("worst_case_kl.csv", kl_text);
  if (!policy_text.empty()) manifest.add_input("policy.json", policy_text);
  try {
    manifest.write();
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  }

  using clock = std::chrono::steady_clock;
  std::string current = to_string(config.stage);
  try {
    const bool do_inner = config.stage == Stage::solve_inner || config.stage == Stage::full;
    const bool do_synth = config.stage == Stage::synthesize || config.stage == Stage::full;
    const bool do_sim = config.stage == Stage::simulate || config.stage == Stage::full;
    std::optional<ControlInstance> inst;
    if (do_inner || do_synth) inst = pendulum::build_instance(config.setup);

    if (do_inner) {
      current = "solve-inner";
      const auto t0 = clock::now();
      SolverConfig sc = config.solver;
      sc.seed = config.seed;
      InnerSolution inner = solve_inner_all(*inst, sc, config.jobs);
      worst_case_kl = inner.worst_case_kl;
      std::vector<SolveTrace> none;
      save_inner_solution(dir, worst_case_kl, config.write_traces ? inner.traces : none,
                          inst->num_actions());
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      manifest.add_stage(current, secs);
      log << "solve-inner: " << inst->num_cells() << " cells in " << secs << " s\n";
    }
    if (do_synth) {
      current = "synthesize";
      const auto t0 = clock::now();
      policy = synthesize_policy(*inst, worst_case_kl);
      save_policy(dir, *policy);
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      manifest.add_stage(current, secs);
      log << "synthesize: " << inst->num_states() << " policy rows in " << secs << " s\n";
    }
    if (do_sim) {
      current = "simulate";
      const auto t0 = clock::now();
      pendulum::SimulationConfig sim = config.simulation;
      sim.seed = config.seed;
      const auto stats = pendulum::simulate(*policy, config.setup.params, config.setup.grid, sim);
      write_file(dir / "trajectories.csv", trajectories_csv(stats));
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      manifest.add_stage(current, secs);
      const auto tail = pendulum::tail_summary(stats, 20);
      log << "simulate: " << sim.runs << " runs x " << sim.horizon << " steps in " << secs
          << " s; last-20-step mean |theta| = " << tail.mean_abs_theta
          << ", mean |omega| = " << tail.mean_abs_omega << "\n";
    }
    manifest.finish("ok");
    return 0;
  } catch (const std::exception& e) {
    const StageError se(current, e.what());
    err << se.what() << "\n";
    try {
      manifest.finish("failed", se.what());
    } catch (...) {
    }
    return 2;
  }
}

}  // namespace drfe::run
