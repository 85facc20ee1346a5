#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "drfe/fw_solver.hpp"

using namespace drfe;

namespace {

DcProblem random_problem(std::mt19937_64& rng, std::size_t n, double eta) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> q(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = u(rng);
    p[i] = u(rng);
  }
  return DcProblem::from_rows(GridPmf::normalized(p).mass(), GridPmf::normalized(q),
                              AmbiguityBudget(eta));
}

double linear_value(const DcProblem& prob, std::span<const double> c, std::span<const double> p) {
  return weighted_inner(prob.qbar(), c, p);
}

void expect_feasible(const DcProblem& prob, std::span<const double> r) {
  EXPECT_LE(normalization_residual(prob, r), 1e-9);
  EXPECT_LE(kl_constraint_residual(prob, r), 1e-9);
  for (double v : r) {
    EXPECT_GE(v, prob.bounds().delta0);
    EXPECT_LE(v, prob.bounds().delta1);
  }
}

// Smallest t in [lo, hi] on a uniform grid with 0.5(t ln t + (2-t) ln(2-t)) <= eta.
double scan_two_atoms(double eta, double step, bool minimize_t) {
  double best_t = 1.0;
  const double lo = 1e-4, hi = 2.0 - 1e-4;
  for (double t = lo; t <= hi; t += step) {
    const double kl = 0.5 * (t * std::log(t) + (2 - t) * std::log(2 - t));
    if (kl > eta) continue;
    if (minimize_t ? t < best_t : t > best_t) best_t = t;
  }
  return best_t;
}

}  // namespace

TEST(SolverConfig, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  c.omega_tol = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.L_floor = -1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(LinearOracle, ConstantCostGivesConstantObjective) {
  std::mt19937_64 rng(1);
  auto prob = random_problem(rng, 6, 0.3);
  const std::vector<double> c(6, 2.5);
  auto p = linear_oracle(prob, c);
  expect_feasible(prob, p);
  EXPECT_NEAR(linear_value(prob, c, p), 2.5, 1e-12);
}

TEST(LinearOracle, ZeroRadiusReturnsOnes) {
  std::mt19937_64 rng(2);
  auto prob = random_problem(rng, 5, 0.0);
  const std::vector<double> c{3.0, -1.0, 0.5, 2.0, -7.0};
  auto p = linear_oracle(prob, c);
  for (double v : p.values()) EXPECT_EQ(v, 1.0);
}

TEST(LinearOracle, TwoAtomMatchesScan) {
  auto prob = DcProblem(GridPmf::uniform(2), {1.0, 1.0}, AmbiguityBudget(0.1));
  const std::vector<double> c{1.0, -1.0};
  auto p = linear_oracle(prob, c);
  expect_feasible(prob, p);
  // Objective over (t, 2 - t) is t - 1, so the scan looks for the smallest feasible t.
  const double t = scan_two_atoms(0.1, 1e-6, true);
  EXPECT_NEAR(linear_value(prob, c, p), t - 1.0, 1e-5);
  EXPECT_LE(linear_value(prob, c, p), t - 1.0 + 1e-12);
}

TEST(LinearOracle, KlConstraintActiveWhenBoxIsLoose) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    auto prob = random_problem(rng, 8, 0.2);
    std::vector<double> c(8);
    for (double& x : c) x = n(rng);
    auto p = linear_oracle(prob, c);
    expect_feasible(prob, p);
    EXPECT_NEAR(kl_constraint_residual(prob, p), 0.0, 1e-9);
  }
}

TEST(LinearOracle, BeatsRandomFeasiblePoints) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    auto prob = random_problem(rng, 7, 0.4);
    std::vector<double> c(7), d(7);
    for (double& x : c) x = n(rng);
    const double best = linear_value(prob, c, linear_oracle(prob, c));
    for (int m = 0; m < 50; ++m) {
      for (double& x : d) x = n(rng);
      auto v = linear_oracle(prob, d);
      const double t = u(rng);
      std::vector<double> r(7);
      for (std::size_t i = 0; i < 7; ++i) r[i] = 1.0 + t * (v[i] - 1.0);
      EXPECT_LE(best, linear_value(prob, c, r) + 1e-10);
    }
  }
}

TEST(LinearOracle, BoxActiveGreedyFill) {
  // A wide budget with a tight box makes the bang-bang fill optimal.
  auto prob = DcProblem(GridPmf::uniform(4), {1.0, 1.0, 1.0, 1.0}, AmbiguityBudget(5.0), {0.5, 2.0});
  const std::vector<double> c{4.0, 3.0, 2.0, 1.0};
  auto p = linear_oracle(prob, c);
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[1], 0.5, 1e-12);
  EXPECT_NEAR(p[2], 1.0, 1e-12);
  EXPECT_NEAR(p[3], 2.0, 1e-12);
}

TEST(LinearOracle, ExtremeCostSpread) {
  std::mt19937_64 rng(5);
  auto prob = random_problem(rng, 10, 0.5);
  std::vector<double> c(10);
  for (std::size_t i = 0; i < 10; ++i) c[i] = std::pow(10.0, -30.0 + 32.0 * double(i));
  auto p = linear_oracle(prob, c);
  expect_feasible(prob, p);
}

TEST(LinearOracle, InfeasibleBox) {
  auto prob = DcProblem(GridPmf::uniform(2), {1.0, 1.0}, AmbiguityBudget(0.1), {2.0, 3.0});
  EXPECT_THROW(linear_oracle(prob, std::vector<double>{1.0, 0.0}), InfeasibleSet);
}

TEST(Omega, ZeroForSamePoint) {
  std::mt19937_64 rng(6);
  auto prob = random_problem(rng, 4, 0.2);
  const std::vector<double> r(4, 1.0);
  EXPECT_EQ(omega(prob, r, r), 0.0);
}

TEST(Omega, NonpositiveAtOracleOutput) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 30; ++k) {
    auto prob = random_problem(rng, 6, 0.3);
    const std::vector<double> ones(6, 1.0);
    auto p = linear_oracle(prob, grad_phi(prob, ones));
    EXPECT_LE(omega(prob, ones, p), 1e-12);
  }
}

TEST(Omega, TwoAtomHandEvaluation) {
  auto q = GridPmf::uniform(2);
  auto prob = DcProblem::from_rows(std::vector<double>{0.9, 0.1}, q, AmbiguityBudget(0.1));
  const std::vector<double> r{1.0, 1.0};
  auto p = linear_oracle(prob, grad_phi(prob, r));
  // grad_phi = rho / r = (1.8, 0.2).
  const double hand = 0.5 * 1.8 * (p[0] - 1.0) + 0.5 * 0.2 * (p[1] - 1.0);
  EXPECT_NEAR(omega(prob, r, p), hand, 1e-12);
  EXPECT_LT(hand, 0.0);
}

TEST(CandidateStep, Formula) {
  EXPECT_DOUBLE_EQ(candidate_step(1.0, 2.0, 1.0), 0.5);
  EXPECT_EQ(candidate_step(1e30, 2.0, 1.0), 1.0);
  EXPECT_EQ(candidate_step(1.0, 2.0, 0.0), 1.0);
}

TEST(ConvexStep, StaysInSegment) {
  const std::vector<double> r{1.0, 1.0}, p{0.3, 1.7};
  auto a = convex_step(r, p, 1.0);
  EXPECT_EQ(a[0], 0.3);
  auto b = convex_step(r, p, 0.5);
  EXPECT_DOUBLE_EQ(b[0], 0.65);
  EXPECT_DOUBLE_EQ(b[1], 1.35);
}

TEST(DescentCheck, HoldsForTinyStep) {
  std::mt19937_64 rng(8);
  auto prob = random_problem(rng, 5, 0.3);
  const std::vector<double> ones(5, 1.0);
  auto p = linear_oracle(prob, grad_phi(prob, ones));
  EXPECT_TRUE(descent_check(prob, ones, p, 1e-12, 1.0));
}

TEST(DescentCheck, HoldsAboveSegmentCurvature) {
  // Along r + t d, phi'' = -sum w d^2 / r^2; its magnitude bounds the curvature
  // relative to the squared weighted l1 length.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int k = 0; k < 50; ++k) {
    auto prob = random_problem(rng, 6, 0.4);
    std::vector<double> c(6), d(6);
    for (double& x : c) x = n(rng);
    auto r = linear_oracle(prob, c);
    std::vector<double> rv(r.values().begin(), r.values().end());
    auto p = linear_oracle(prob, grad_phi(prob, rv));
    for (std::size_t i = 0; i < 6; ++i) d[i] = p[i] - rv[i];
    const double len = weighted_l1(prob.qbar(), d);
    if (len == 0.0) continue;
    double worst = 0.0;
    for (int s = 0; s <= 100; ++s) {
      const double t = s / 100.0;
      double curv = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        const double x = rv[i] + t * d[i];
        curv += prob.weight()[i] * d[i] * d[i] / (x * x);
      }
      worst = std::max(worst, curv / (len * len));
    }
    const double lambda = u(rng);
    EXPECT_TRUE(descent_check(prob, rv, p, lambda, 2.0 * worst + 1e-9));
  }
}

TEST(DescentCheck, FailsForAscentDirectionWithSmallCurvature) {
  // Moving against the oracle direction increases phi to first order, so no
  // small curvature can make the quadratic model an upper bound.
  auto prob = DcProblem::from_rows(std::vector<double>{0.9, 0.1}, GridPmf::uniform(2),
                                   AmbiguityBudget(0.1));
  const std::vector<double> ones{1.0, 1.0};
  auto low = linear_oracle(prob, grad_phi(prob, ones));
  std::vector<double> r(low.values().begin(), low.values().end());
  EXPECT_GT(omega(prob, r, ones), 0.0);
  EXPECT_FALSE(descent_check(prob, r, ones, 0.5, 1e-6));
}

TEST(Solve, ZeroRadius) {
  auto prob = DcProblem::from_rows(std::vector<double>{0.9, 0.1}, GridPmf::uniform(2),
                                   AmbiguityBudget(0.0));
  auto res = solve(prob);
  for (double v : res.r_star.values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(res.phi_star, 0.0);
  EXPECT_NEAR(res.inner_max_value, kl_divergence(std::vector<double>{0.9, 0.1}, prob.qbar()), 1e-15);
  EXPECT_EQ(res.trace.termination, Termination::stationary);
}

TEST(Solve, TwoAtomMatchesScan) {
  auto prob = DcProblem::from_rows(std::vector<double>{0.9, 0.1}, GridPmf::uniform(2),
                                   AmbiguityBudget(0.1));
  auto res = solve(prob);
  // phi = 0.9 ln t + 0.1 ln(2 - t) is minimized at the smallest feasible t.
  const double t = scan_two_atoms(0.1, 1e-6, true);
  const double brute = 0.9 * std::log(t) + 0.1 * std::log(2 - t);
  EXPECT_NEAR(res.phi_star, brute, 1e-4);
  expect_feasible(prob, res.r_star);
}

TEST(Solve, ThreeAtomRandomMatchesBruteForce) {
  std::mt19937_64 rng(10);
  for (int seed = 0; seed < 10; ++seed) {
    auto prob = random_problem(rng, 3, 0.3);
    auto brute = brute_force_reference(prob, 1e-3);
    // phi is concave, so a single start may stop at a non-global stationary point.
    auto res = solve(prob);
    EXPECT_EQ(res.trace.termination, Termination::stationary);
    EXPECT_GE(res.phi_star, brute.phi - 1e-3);
    auto multi = solve_multistart(prob);
    EXPECT_NEAR(multi.phi_star, brute.phi, 1e-3) << "instance " << seed;
    EXPECT_LE(multi.phi_star, res.phi_star);
  }
}

class SolveInvariants : public ::testing::TestWithParam<StepRule> {};

TEST_P(SolveInvariants, RandomInstances) {
  std::mt19937_64 rng(11);
  SolverConfig cfg;
  cfg.step_rule = GetParam();
  for (int k = 0; k < 30; ++k) {
    const std::size_t n = 2 + k % 15;
    auto prob = random_problem(rng, n, 0.05 + 0.05 * (k % 7));
    auto res = solve(prob, cfg);
    const auto& rec = res.trace.records;
    ASSERT_FALSE(rec.empty());
    for (std::size_t i = 0; i + 1 < rec.size(); ++i) {
      EXPECT_LE(rec[i + 1].phi, rec[i].phi - 0.5 * std::abs(rec[i].omega) * rec[i].lambda + 1e-10);
      EXPECT_GT(rec[i].lambda, 0.0);
      EXPECT_GE(rec[i].L, cfg.L_floor);
    }
    for (const auto& r : rec) {
      EXPECT_LE(r.kl_residual, 1e-9);
      EXPECT_LE(r.norm_residual, 1e-9);
    }
    // The anchored rule keeps the curvature above 2 L_0 and may run out of iterations.
    if (GetParam() == StepRule::adaptive) {
      EXPECT_EQ(res.trace.termination, Termination::stationary);
    }
    if (res.trace.termination == Termination::stationary) {
      EXPECT_LE(std::abs(rec.back().omega), cfg.omega_tol * std::max(1.0, std::abs(rec.front().phi)));
    }
    EXPECT_LT(res.trace.max_backtracks, 60);
    expect_feasible(prob, res.r_star);
    EXPECT_EQ(res.phi_star, eval_phi(prob, res.r_star));
    const double nominal = kl_divergence(prob.weight(), prob.qbar());
    EXPECT_GE(res.inner_max_value, nominal - 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(StepRules, SolveInvariants,
                         ::testing::Values(StepRule::adaptive, StepRule::anchored));

TEST(Solve, RejectsInfeasibleStart) {
  auto prob = DcProblem(GridPmf::uniform(2), {1.0, 1.0}, AmbiguityBudget(0.01));
  auto far = RatioVector::checked(prob, {0.2, 1.8});
  EXPECT_THROW(solve(prob, {}, far), InvalidArgument);
}

TEST(Solve, Deterministic) {
  std::mt19937_64 rng(12);
  auto prob = random_problem(rng, 12, 0.3);
  auto a = solve_multistart(prob), b = solve_multistart(prob);
  EXPECT_EQ(a.phi_star, b.phi_star);
  EXPECT_TRUE(std::equal(a.r_star.values().begin(), a.r_star.values().end(), b.r_star.values().begin()));
}

TEST(Solve, MaxItersTermination) {
  std::mt19937_64 rng(13);
  auto prob = random_problem(rng, 10, 0.3);
  SolverConfig cfg;
  cfg.max_iters = 1;
  cfg.omega_tol = 1e-300;
  auto res = solve(prob, cfg);
  EXPECT_EQ(res.trace.termination, Termination::max_iters);
  EXPECT_EQ(res.trace.records.size(), 2u);
}

TEST(DepletionVertex, MinimizesSingleCell) {
  std::mt19937_64 rng(14);
  auto prob = random_problem(rng, 5, 0.2);
  auto v = depletion_vertex(prob, 2);
  expect_feasible(prob, v);
  for (std::size_t i = 0; i < 5; ++i) {
    if (i != 2) {
      EXPECT_GT(v[i], v[2]);
    }
  }
}

TEST(BruteForce, ZeroRadius) {
  auto prob = DcProblem::from_rows(std::vector<double>{0.2, 0.3, 0.5}, GridPmf::uniform(3),
                                   AmbiguityBudget(0.0));
  auto b = brute_force_reference(prob, 1e-2);
  for (double v : b.r.values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(b.phi, 0.0);
}

TEST(BruteForce, FeasibleAndRefinementMonotone) {
  std::mt19937_64 rng(15);
  for (int k = 0; k < 3; ++k) {
    auto prob = random_problem(rng, 3, 0.02);
    double prev = INFINITY;
    for (double res : {1e-2, 1e-3, 1e-4}) {
      auto b = brute_force_reference(prob, res);
      expect_feasible(prob, b.r);
      EXPECT_EQ(b.phi, eval_phi(prob, b.r));
      EXPECT_LE(b.phi, prev + 1e-12);
      prev = b.phi;
    }
  }
}

TEST(LinearOracle, NoWorseThanGridScanOnThreeCells) {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    auto prob = random_problem(rng, 3, 0.2);
    const auto q = prob.qbar();
    std::vector<double> c(3);
    for (double& x : c) x = n(rng);
    double best = INFINITY;
    for (double a = 1e-3; a < 4.0; a += 1e-3) {
      for (double b = 1e-3; b < 4.0; b += 1e-3) {
        const double r2 = (1.0 - q[0] * a - q[1] * b) / q[2];
        if (r2 <= 0.0) break;
        const double kl = q[0] * a * std::log(a) + q[1] * b * std::log(b) + q[2] * r2 * std::log(r2);
        if (kl > prob.eta()) continue;
        best = std::min(best, q[0] * c[0] * a + q[1] * c[1] * b + q[2] * c[2] * r2);
      }
    }
    EXPECT_LE(linear_value(prob, c, linear_oracle(prob, c)), best + 1e-5);
  }
}

TEST(BruteForce, VisitsOptimumOnLowerBound) {
  // Small q on the depleted cell: the coarse grid alone would miss the bound by ~1e-2.
  auto prob = DcProblem::from_rows(std::vector<double>{0.5934, 0.4066},
                                   GridPmf::from_masses({0.9052, 0.0948}), AmbiguityBudget(0.115));
  const auto res = solve_multistart(prob);
  ASSERT_NEAR(res.r_star[1], prob.bounds().delta0, 1e-12);
  const auto bf = brute_force_reference(prob, 1e-3);
  EXPECT_NEAR(bf.r[1], prob.bounds().delta0, 1e-12);
  EXPECT_NEAR(bf.phi, res.phi_star, 1e-9);
}

TEST(BruteForce, UnsupportedSize) {
  auto prob = DcProblem(GridPmf::uniform(4), {1.0, 1.0, 1.0, 1.0}, AmbiguityBudget(0.1));
  EXPECT_THROW(brute_force_reference(prob, 1e-2), UnsupportedSize);
}
