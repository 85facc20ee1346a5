#pragma once

// Bi-level robust policy computation. For every (state, action) cell the
// inner problem max_{q in ambiguity ball} KL(plant || q) is solved with the
// Frank-Wolfe method; the policy is then the softmax of the reference policy
// against score = E_plant[c^x] + c^u + worst-case KL.
//
// Cells are indexed row-major: cell = state * num_actions + action.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <span>
#include <string>
#include <vector>

#include "drfe/ambiguity_dc.hpp"
#include "drfe/errors.hpp"
#include "drfe/fw_solver.hpp"
#include "drfe/grid_prob.hpp"
#include "drfe/parallel.hpp"

namespace drfe {

struct ControlInstance {
  /// Rows: (state, action) cells; columns: next states.
  ConditionalKernel plant;
  /// Nominal generative model, same shape as plant.
  ConditionalKernel nominal_model;
  /// Rows: states; columns: actions.
  ConditionalKernel reference_policy;
  /// c^x per next state.
  std::vector<double> state_cost;
  /// c^u per action.
  std::vector<double> action_cost;
  /// eta per (state, action) cell.
  std::vector<AmbiguityBudget> radius;
  RatioBounds bounds;

  std::size_t num_states() const { return reference_policy.rows(); }
  std::size_t num_actions() const { return reference_policy.cols(); }
  std::size_t num_cells() const { return plant.rows(); }

  void validate() const {
    const std::size_t cells = num_states() * num_actions();
    if (cells == 0) throw InvalidArgument("ControlInstance: empty reference policy");
    if (plant.rows() != cells || nominal_model.rows() != cells) {
      throw InvalidArgument("ControlInstance: plant and nominal model need states x actions rows");
    }
    if (plant.cols() != nominal_model.cols() ||
        !std::equal(plant.support().begin(), plant.support().end(),
                    nominal_model.support().begin(), nominal_model.support().end())) {
      throw InvalidArgument("ControlInstance: plant and nominal model supports differ");
    }
    if (state_cost.size() != plant.cols()) {
      throw InvalidArgument("ControlInstance: state_cost needs one entry per next state");
    }
    if (action_cost.size() != num_actions()) {
      throw InvalidArgument("ControlInstance: action_cost needs one entry per action");
    }
    if (radius.size() != cells) {
      throw InvalidArgument("ControlInstance: radius needs one entry per (state, action) cell");
    }
    for (double v : state_cost) {
      if (!std::isfinite(v)) throw InvalidArgument("ControlInstance: non-finite state cost");
    }
    for (double v : action_cost) {
      if (!std::isfinite(v)) throw InvalidArgument("ControlInstance: non-finite action cost");
    }
    for (std::size_t c = 0; c < cells; ++c) {
      auto p = plant.row(c);
      auto q = nominal_model.row(c);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0 && q[i] <= 0.0) {
          throw AbsoluteContinuityViolation("ControlInstance: plant row " + std::to_string(c) +
                                            " not covered by the nominal model");
        }
      }
    }
  }
};

struct InnerSolution {
  /// q^(x),* = r* qbar per cell.
  ConditionalKernel worst_case_model;
  /// max KL(plant || q) over the ambiguity ball, per cell.
  std::vector<double> worst_case_kl;
  std::vector<SolveTrace> traces;
};

struct RobustSolution {
  ConditionalKernel worst_case_model;
  std::vector<double> worst_case_kl;
  ConditionalKernel policy;
  /// E_plant[c^x] + c^u + worst-case KL, per cell.
  std::vector<double> score;
  std::vector<SolveTrace> traces;
};

inline DcProblem cell_problem(const ControlInstance& inst, std::size_t cell) {
  return DcProblem::from_rows(inst.plant.row(cell), inst.nominal_model.row_pmf(cell),
                              inst.radius[cell], inst.bounds);
}

/// Solves every cell independently (best of config's restarts) on `jobs`
/// threads. Failures are rethrown as CellSolveError for the lowest failing cell.
inline InnerSolution solve_inner_all(const ControlInstance& inst, const SolverConfig& config,
                                     unsigned jobs = 1) {
  inst.validate();
  config.validate();
  const std::size_t cells = inst.num_cells();
  const std::size_t cols = inst.plant.cols();
  std::vector<double> model(cells * cols);
  InnerSolution out;
  out.worst_case_kl.resize(cells);
  out.traces.resize(cells);

  parallel_for(cells, jobs, [&](std::size_t cell) {
    try {
      const DcProblem prob = cell_problem(inst, cell);
      SolveResult res = solve_multistart(prob, config);
      auto q = prob.qbar();
      double total = 0.0;
      for (std::size_t i = 0; i < cols; ++i) total += q[i] * res.r_star[i];
      for (std::size_t i = 0; i < cols; ++i) model[cell * cols + i] = q[i] * res.r_star[i] / total;
      out.worst_case_kl[cell] = res.inner_max_value;
      out.traces[cell] = std::move(res.trace);
    } catch (const CellSolveError&) {
      throw;
    } catch (const std::exception& e) {
      throw CellSolveError(cell / inst.num_actions(), cell % inst.num_actions(), e.what());
    }
  });

  std::vector<std::int64_t> support(inst.plant.support().begin(), inst.plant.support().end());
  out.worst_case_model = ConditionalKernel::from_masses(std::move(support), std::move(model));
  return out;
}

/// E_plant[c^x] + c^u + worst_case_kl for every cell.
inline std::vector<double> policy_scores(const ControlInstance& inst,
                                         std::span<const double> worst_case_kl) {
  detail::check_same_size(worst_case_kl.size(), inst.num_cells(), "policy_scores");
  std::vector<double> score(inst.num_cells());
  for (std::size_t cell = 0; cell < score.size(); ++cell) {
    auto p = inst.plant.row(cell);
    double expected = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) expected += p[i] * inst.state_cost[i];
    score[cell] = expected + inst.action_cost[cell % inst.num_actions()] + worst_case_kl[cell];
  }
  return score;
}

/// Policy row x = softmax_tilt(reference row x, score(x, .)). Rows whose
/// scores exceed 700 in magnitude are shifted by their minimum first.
inline ConditionalKernel synthesize_policy(const ControlInstance& inst,
                                           std::span<const double> worst_case_kl) {
  const auto score = policy_scores(inst, worst_case_kl);
  const std::size_t na = inst.num_actions();
  std::vector<GridPmf> rows;
  rows.reserve(inst.num_states());
  std::vector<double> s(na);
  for (std::size_t x = 0; x < inst.num_states(); ++x) {
    std::copy_n(score.begin() + static_cast<std::ptrdiff_t>(x * na), na, s.begin());
    const bool stiff = std::any_of(s.begin(), s.end(), [](double v) { return std::abs(v) > 700.0; });
    if (stiff) {
      const double lo = *std::min_element(s.begin(), s.end());
      for (double& v : s) v -= lo;
    }
    rows.push_back(softmax_tilt(inst.reference_policy.row_pmf(x), s));
  }
  return ConditionalKernel::from_rows(rows);
}

inline RobustSolution solve_robust(const ControlInstance& inst, const SolverConfig& config,
                                   unsigned jobs = 1) {
  InnerSolution inner = solve_inner_all(inst, config, jobs);
  RobustSolution sol;
  sol.policy = synthesize_policy(inst, inner.worst_case_kl);
  sol.score = policy_scores(inst, inner.worst_case_kl);
  sol.worst_case_model = std::move(inner.worst_case_model);
  sol.worst_case_kl = std::move(inner.worst_case_kl);
  sol.traces = std::move(inner.traces);
  return sol;
}

/// Max over states of |sum_u pi(u|x) KL(plant_xu || q*_xu) - sum_u pi(u|x) V_xu|:
/// the expectation evaluated at the joint assignment of per-cell maximizers
/// against the expectation of the per-cell maxima.
inline double swap_check(const ControlInstance& inst, const ConditionalKernel& policy,
                         const InnerSolution& inner) {
  const std::size_t na = inst.num_actions();
  if (policy.rows() != inst.num_states() || policy.cols() != na) {
    throw InvalidArgument("swap_check: policy shape does not match the instance");
  }
  double worst = 0.0;
  for (std::size_t x = 0; x < inst.num_states(); ++x) {
    auto pi = policy.row(x);
    double joint = 0.0, per_cell = 0.0;
    for (std::size_t u = 0; u < na; ++u) {
      const std::size_t cell = x * na + u;
      joint += pi[u] * kl_divergence(inst.plant.row(cell), inner.worst_case_model.row(cell));
      per_cell += pi[u] * inner.worst_case_kl[cell];
    }
    worst = std::max(worst, std::abs(joint - per_cell));
  }
  return worst;
}

/// |F(p, q) - [KL(p || q e^{-loss}/Z) - ln Z]| for joint pmfs p, q.
inline double objective_identity_residual(const GridPmf& joint_p, const GridPmf& joint_q,
                                          const LossTable& loss) {
  const GridPmf tilted = softmax_tilt(joint_q, loss.values());
  double z = 0.0;
  for (std::size_t i = 0; i < joint_q.size(); ++i) z += joint_q[i] * std::exp(-loss[i]);
  return std::abs(free_energy(joint_p, joint_q, loss) - (kl_divergence(joint_p, tilted) - std::log(z)));
}

/// Joint pmfs over (action, next state) from state x:
/// p = policy(u|x) plant(x'|x,u) and q = reference(u|x) model(x'|x,u),
/// with loss c^x(x') + c^u(u).
struct StateJoint {
  GridPmf joint_p;
  GridPmf joint_q;
  LossTable loss;
};

inline StateJoint state_joint(const ControlInstance& inst, const ConditionalKernel& policy,
                              const ConditionalKernel& model, std::size_t x) {
  const std::size_t na = inst.num_actions();
  const std::size_t nx = inst.plant.cols();
  std::vector<double> p(na * nx), q(na * nx), l(na * nx);
  auto pi = policy.row(x);
  auto ref = inst.reference_policy.row(x);
  for (std::size_t u = 0; u < na; ++u) {
    auto pr = inst.plant.row(x * na + u);
    auto mr = model.row(x * na + u);
    for (std::size_t i = 0; i < nx; ++i) {
      p[u * nx + i] = pi[u] * pr[i];
      q[u * nx + i] = ref[u] * mr[i];
      l[u * nx + i] = inst.state_cost[i] + inst.action_cost[u];
    }
  }
  return {GridPmf::normalized(std::move(p)), GridPmf::normalized(std::move(q)),
          LossTable(std::move(l))};
}

inline double objective_identity_check(const ControlInstance& inst, const ConditionalKernel& policy,
                                       const ConditionalKernel& model, std::size_t x) {
  const StateJoint j = state_joint(inst, policy, model, x);
  return objective_identity_residual(j.joint_p, j.joint_q, j.loss);
}

/// KL(pi || reference_x) + E_pi[E_plant[c^x] + c^u] + E_pi[KL(plant || model)] at state x.
inline double evaluate_free_energy(const ControlInstance& inst, std::span<const double> policy_row,
                                   const ConditionalKernel& model, std::size_t x) {
  const std::size_t na = inst.num_actions();
  detail::check_same_size(policy_row.size(), na, "evaluate_free_energy");
  double value = kl_divergence(policy_row, inst.reference_policy.row(x));
  for (std::size_t u = 0; u < na; ++u) {
    if (policy_row[u] <= 0.0) continue;
    const std::size_t cell = x * na + u;
    auto pr = inst.plant.row(cell);
    double expected = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i) expected += pr[i] * inst.state_cost[i];
    value += policy_row[u] *
             (expected + inst.action_cost[u] + kl_divergence(pr, model.row(cell)));
  }
  return value;
}

/// -ln sum_u reference(u|x) exp(-score(x,u)): the minimum of evaluate_free_energy at x.
inline double optimal_free_energy(const ControlInstance& inst, std::span<const double> score,
                                  std::size_t x) {
  const std::size_t na = inst.num_actions();
  auto ref = inst.reference_policy.row(x);
  double lo = score[x * na];
  for (std::size_t u = 1; u < na; ++u) lo = std::min(lo, score[x * na + u]);
  double z = 0.0;
  for (std::size_t u = 0; u < na; ++u) z += ref[u] * std::exp(-(score[x * na + u] - lo));
  return lo - std::log(z);
}

}  // namespace drfe
