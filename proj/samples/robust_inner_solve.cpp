// Worst-case model inside a KL ball, then a robust one-step policy on a toy
// three-state chain.
//
//   ./robust_inner_solve

#include <cstdio>
#include <vector>

#include "drfe/fw_solver.hpp"
#include "drfe/robust_policy.hpp"

int main() {
  using namespace drfe;

  // One conditioning cell: the plant puts most mass on the middle state,
  // the nominal model is uniform, and the ball has radius 0.2 nats.
  const std::vector<double> plant{0.1, 0.7, 0.2};
  const GridPmf nominal = GridPmf::uniform(3);
  const DcProblem prob = DcProblem::from_rows(plant, nominal, AmbiguityBudget(0.2));

  const SolveResult res = solve_multistart(prob);
  std::printf("worst-case KL(plant || q) = %.6f (nominal %.6f), %zu iterations, %s\n",
              res.inner_max_value, kl_divergence(plant, nominal.mass()),
              res.trace.records.size() - 1, to_string(res.trace.termination));
  std::printf("worst-case q =");
  for (std::size_t i = 0; i < 3; ++i) std::printf(" %.4f", nominal[i] * res.r_star[i]);
  std::printf("\n\n");

  // Two actions: "stay" keeps the chain where it is, "push" drifts to state 0
  // at a small action cost. State 0 is cheap.
  ControlInstance inst;
  std::vector<GridPmf> rows;
  for (int x = 0; x < 3; ++x) {
    std::vector<double> stay(3, 0.1), push(3, 0.1);
    stay[x] = 0.8;
    push[0] += 0.6;
    push[x] += 0.1;
    rows.push_back(GridPmf::normalized(stay));
    rows.push_back(GridPmf::normalized(push));
  }
  inst.plant = ConditionalKernel::from_rows(rows);
  inst.nominal_model = ConditionalKernel::from_rows(std::vector<GridPmf>(6, GridPmf::uniform(3)));
  inst.reference_policy = ConditionalKernel::from_rows(std::vector<GridPmf>(3, GridPmf::uniform(2)));
  inst.state_cost = {0.0, 1.0, 4.0};
  inst.action_cost = {0.0, 0.3};

  for (double eta : {0.0, 0.5}) {
    inst.radius.assign(6, AmbiguityBudget(eta));
    const RobustSolution sol = solve_robust(inst, SolverConfig{});
    std::printf("eta = %.1f\n", eta);
    for (std::size_t x = 0; x < 3; ++x) {
      std::printf("  state %zu: P(stay) = %.4f  P(push) = %.4f\n", x, sol.policy.row(x)[0],
                  sol.policy.row(x)[1]);
    }
  }
  return 0;
}
