#pragma once

// Stochastic pendulum benchmark: Euler dynamics, grid discretization of the
// plant and nominal model, costs, ambiguity radius, and closed-loop Monte
// Carlo simulation under a sampled policy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "drfe/ambiguity_dc.hpp"
#include "drfe/errors.hpp"
#include "drfe/grid_prob.hpp"
#include "drfe/robust_policy.hpp"

namespace drfe::pendulum {

struct PendulumParams {
  double g = 9.81;
  double l = 0.50;
  double m = 0.50;
  double dt = 0.05;
  /// Noise variances of the angle and angular-velocity updates.
  double var_theta = 0.05;
  double var_omega = 0.1;

  void validate() const {
    for (double v : {g, l, m, dt, var_theta, var_omega}) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("PendulumParams: all parameters must be positive and finite");
      }
    }
  }
};

struct GridSpec {
  std::size_t theta_cells = 20;
  std::size_t omega_cells = 20;
  std::size_t torque_cells = 50;
  double omega_max = 5.0;
  double torque_max = 3.0;

  void validate() const {
    if (theta_cells < 2 || omega_cells < 2 || torque_cells < 2) {
      throw InvalidArgument("GridSpec: every axis needs at least 2 cells");
    }
    if (!(omega_max > 0.0) || !(torque_max > 0.0) || !std::isfinite(omega_max) ||
        !std::isfinite(torque_max)) {
      throw InvalidArgument("GridSpec: ranges must be positive and finite");
    }
  }

  /// (theta, omega) grid; theta is periodic over [-pi, pi].
  ProductGrid state_grid() const {
    return ProductGrid({Axis{-std::numbers::pi, std::numbers::pi, theta_cells, true},
                        Axis{-omega_max, omega_max, omega_cells, false}});
  }
  Axis torque_axis() const { return Axis{-torque_max, torque_max, torque_cells, false}; }
  std::size_t num_states() const { return theta_cells * omega_cells; }
  std::size_t num_actions() const { return torque_cells; }
};

struct State {
  double theta = 0.0;
  double omega = 0.0;
};

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = a - two_pi * std::floor((a + std::numbers::pi) / two_pi);
  if (w >= std::numbers::pi) w -= two_pi;
  return w;
}

/// One Euler step; theta is wrapped, omega clamped to [-omega_max, omega_max].
inline State step_dynamics(State s, double u, State noise, const PendulumParams& p,
                           double omega_max = 5.0) {
  State next;
  next.theta = wrap_angle(s.theta + s.omega * p.dt + noise.theta);
  const double accel = p.g / p.l * std::sin(s.theta) + u / (p.m * p.l * p.l);
  next.omega = std::clamp(s.omega + accel * p.dt + noise.omega, -omega_max, omega_max);
  return next;
}

/// Cell = state * num_actions + action; rows are Gaussians at the noiseless step image.
inline ConditionalKernel build_plant_kernel(const PendulumParams& params, const GridSpec& spec) {
  params.validate();
  spec.validate();
  const ProductGrid grid = spec.state_grid();
  const Axis torque = spec.torque_axis();
  const std::size_t na = spec.num_actions();
  const double variance[2] = {params.var_theta, params.var_omega};
  return ConditionalKernel::build(
      spec.num_states() * na, detail::iota_support(grid.size()), [&](std::size_t cell, std::span<double> out) {
        const auto c = grid.center(cell / na);
        const State next = step_dynamics({c[0], c[1]}, torque.center(cell % na), {}, params,
                                         spec.omega_max);
        const double mean[2] = {next.theta, next.omega};
        discretize_gaussian_into(mean, variance, grid, out);
      });
}

/// Every row is N(0, diag(var_theta, var_omega)) over the state grid.
inline ConditionalKernel build_nominal_model(const GridSpec& spec, double var_theta = 0.1,
                                             double var_omega = 0.01) {
  spec.validate();
  const ProductGrid grid = spec.state_grid();
  const double mean[2] = {0.0, 0.0};
  const double variance[2] = {var_theta, var_omega};
  std::vector<double> row(grid.size());
  discretize_gaussian_into(mean, variance, grid, row);
  return ConditionalKernel::build(spec.num_states() * spec.num_actions(),
                                  detail::iota_support(grid.size()),
                                  [&](std::size_t, std::span<double> out) {
                                    std::copy(row.begin(), row.end(), out.begin());
                                  });
}

struct RadiusCoefficients {
  double baseline = 0.3;
  double omega = 0.02;
  double torque = 0.01;

  void validate() const {
    for (double v : {baseline, omega, torque}) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("RadiusCoefficients: coefficients must be finite and nonnegative");
      }
    }
  }
};

/// eta = baseline + omega_coeff * omega^2 + torque_coeff * u^2.
inline AmbiguityBudget radius_function(State s, double u, const RadiusCoefficients& k = {}) {
  return AmbiguityBudget(k.baseline + k.omega * s.omega * s.omega + k.torque * u * u);
}

/// eta per (state, action) cell, evaluated at cell centers.
inline std::vector<AmbiguityBudget> radius_table(const GridSpec& spec,
                                                 const RadiusCoefficients& k = {}) {
  k.validate();
  const ProductGrid grid = spec.state_grid();
  const Axis torque = spec.torque_axis();
  std::vector<AmbiguityBudget> out;
  out.reserve(spec.num_states() * spec.num_actions());
  for (std::size_t x = 0; x < spec.num_states(); ++x) {
    const auto c = grid.center(x);
    for (std::size_t a = 0; a < spec.num_actions(); ++a) {
      out.push_back(radius_function({c[0], c[1]}, torque.center(a), k));
    }
  }
  return out;
}

struct CostCoefficients {
  double theta = 1.0;
  double omega = 0.5;
  double torque = 0.1;

  void validate() const {
    for (double v : {theta, omega, torque}) {
      if (!std::isfinite(v)) throw InvalidArgument("CostCoefficients: non-finite coefficient");
    }
  }
};

struct CostTables {
  std::vector<double> state_cost;
  std::vector<double> action_cost;
};

/// theta^2 + 0.5 omega^2 with the default coefficients.
inline double state_cost(State s, const CostCoefficients& k = {}) {
  return k.theta * s.theta * s.theta + k.omega * s.omega * s.omega;
}

/// 0.1 u^2 with the default coefficients.
inline double action_cost(double u, const CostCoefficients& k = {}) { return k.torque * u * u; }

/// state_cost and action_cost at cell centers.
inline CostTables cost_tables(const GridSpec& spec, const CostCoefficients& k = {}) {
  k.validate();
  const ProductGrid grid = spec.state_grid();
  const Axis torque = spec.torque_axis();
  CostTables t;
  t.state_cost.resize(grid.size());
  for (std::size_t x = 0; x < grid.size(); ++x) {
    const auto c = grid.center(x);
    t.state_cost[x] = state_cost({c[0], c[1]}, k);
  }
  t.action_cost.resize(torque.cells);
  for (std::size_t a = 0; a < torque.cells; ++a) t.action_cost[a] = action_cost(torque.center(a), k);
  return t;
}

/// Uniform reference policy over the torque grid.
inline ConditionalKernel uniform_reference_policy(const GridSpec& spec) {
  return ConditionalKernel::build(spec.num_states(), detail::iota_support(spec.num_actions()),
                                  [](std::size_t, std::span<double> out) {
                                    std::fill(out.begin(), out.end(), 1.0);
                                  });
}

struct BenchmarkSetup {
  PendulumParams params;
  GridSpec grid;
  RadiusCoefficients radius;
  CostCoefficients costs;
  RatioBounds bounds;
  double nominal_var_theta = 0.1;
  double nominal_var_omega = 0.01;
};

inline ControlInstance build_instance(const BenchmarkSetup& s) {
  ControlInstance inst;
  inst.plant = build_plant_kernel(s.params, s.grid);
  inst.nominal_model = build_nominal_model(s.grid, s.nominal_var_theta, s.nominal_var_omega);
  inst.reference_policy = uniform_reference_policy(s.grid);
  auto costs = cost_tables(s.grid, s.costs);
  inst.state_cost = std::move(costs.state_cost);
  inst.action_cost = std::move(costs.action_cost);
  inst.radius = radius_table(s.grid, s.radius);
  inst.bounds = s.bounds;
  return inst;
}

struct TrajectoryStats {
  std::vector<double> theta_mean, theta_std;
  std::vector<double> omega_mean, omega_std;
  std::vector<double> u_mean, u_std;
  /// Per-step means of |theta| and |omega| over runs.
  std::vector<double> theta_abs_mean, omega_abs_mean;
  std::size_t size() const { return theta_mean.size(); }
};

struct SimulationConfig {
  std::size_t horizon = 100;
  std::size_t runs = 100;
  std::uint64_t seed = 0;
  State initial{std::numbers::pi - 0.3, 0.0};

  void validate() const {
    if (horizon < 1) throw InvalidArgument("SimulationConfig: horizon must be >= 1");
    if (runs < 1) throw InvalidArgument("SimulationConfig: runs must be >= 1");
    if (!std::isfinite(initial.theta) || !std::isfinite(initial.omega)) {
      throw InvalidArgument("SimulationConfig: initial state must be finite");
    }
  }
};

namespace detail {

inline void mean_std(const std::vector<double>& samples, std::size_t runs, std::size_t horizon,
                     std::size_t k, double& mean, double& sd) {
  double s = 0.0;
  for (std::size_t r = 0; r < runs; ++r) s += samples[r * horizon + k];
  mean = s / static_cast<double>(runs);
  double v = 0.0;
  for (std::size_t r = 0; r < runs; ++r) {
    const double d = samples[r * horizon + k] - mean;
    v += d * d;
  }
  sd = std::sqrt(v / static_cast<double>(runs));
}

}  // namespace detail

/// Closed-loop Monte Carlo. Step k records the state x_k reached after
/// applying u_k sampled from the policy row of x_{k-1}'s cell. Run i uses
/// seed + i, so the result does not depend on evaluation order.
inline TrajectoryStats simulate(const ConditionalKernel& policy, const PendulumParams& params,
                                const GridSpec& spec, const SimulationConfig& cfg) {
  params.validate();
  spec.validate();
  cfg.validate();
  const ProductGrid grid = spec.state_grid();
  const Axis torque = spec.torque_axis();
  if (policy.cols() != spec.num_actions()) {
    throw InvalidArgument("simulate: policy columns must match the torque grid");
  }
  const std::size_t n = cfg.horizon;
  std::vector<double> th(cfg.runs * n), om(cfg.runs * n), us(cfg.runs * n);
  const double sd_theta = std::sqrt(params.var_theta);
  const double sd_omega = std::sqrt(params.var_omega);

  for (std::size_t run = 0; run < cfg.runs; ++run) {
    std::mt19937_64 rng(cfg.seed + run);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    State s = cfg.initial;
    for (std::size_t k = 0; k < n; ++k) {
      const double point[2] = {s.theta, s.omega};
      const std::size_t cell = grid.locate(point);
      if (cell >= policy.rows()) {
        throw UncoveredState("simulate: no policy row for state cell " + std::to_string(cell));
      }
      auto row = policy.row(cell);
      // Inverse-CDF draw; the last positive-mass action absorbs rounding.
      const double t = uniform(rng);
      std::size_t a = row.size();
      double acc = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] <= 0.0) continue;
        a = j;
        acc += row[j];
        if (t < acc) break;
      }
      const double u = torque.center(a);
      const State noise{sd_theta * normal(rng), sd_omega * normal(rng)};
      s = step_dynamics(s, u, noise, params, spec.omega_max);
      th[run * n + k] = s.theta;
      om[run * n + k] = s.omega;
      us[run * n + k] = u;
    }
  }

  TrajectoryStats out;
  for (auto* v : {&out.theta_mean, &out.theta_std, &out.omega_mean, &out.omega_std, &out.u_mean,
                  &out.u_std, &out.theta_abs_mean, &out.omega_abs_mean}) {
    v->resize(n);
  }
  for (std::size_t k = 0; k < n; ++k) {
    detail::mean_std(th, cfg.runs, n, k, out.theta_mean[k], out.theta_std[k]);
    detail::mean_std(om, cfg.runs, n, k, out.omega_mean[k], out.omega_std[k]);
    detail::mean_std(us, cfg.runs, n, k, out.u_mean[k], out.u_std[k]);
    double at = 0.0, ao = 0.0;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      at += std::abs(th[r * n + k]);
      ao += std::abs(om[r * n + k]);
    }
    out.theta_abs_mean[k] = at / static_cast<double>(cfg.runs);
    out.omega_abs_mean[k] = ao / static_cast<double>(cfg.runs);
  }
  return out;
}

struct TailSummary {
  double mean_abs_theta = 0.0;
  double mean_abs_omega = 0.0;
};

/// Mean |theta| and |omega| over runs and the last `tail` steps.
inline TailSummary tail_summary(const TrajectoryStats& stats, std::size_t tail) {
  const std::size_t n = stats.size();
  tail = std::min(tail, n);
  TailSummary s;
  if (tail == 0) return s;
  for (std::size_t k = n - tail; k < n; ++k) {
    s.mean_abs_theta += stats.theta_abs_mean[k];
    s.mean_abs_omega += stats.omega_abs_mean[k];
  }
  s.mean_abs_theta /= static_cast<double>(tail);
  s.mean_abs_omega /= static_cast<double>(tail);
  return s;
}

}  // namespace drfe::pendulum
