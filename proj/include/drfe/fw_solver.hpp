#pragma once

// Frank-Wolfe method for the constrained DC program
//
//   minimize phi(r) = g(r) - h(r)   over   C = { E_qbar[r] = 1,
//                                               E_qbar[r ln r] <= eta,
//                                               delta0 <= r <= delta1 },
//
// with the entropy-constrained linear minimization oracle, the quadratic
// majorization test with backtracking on the curvature estimate, and a
// brute-force reference for supports of at most three cells.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drfe/ambiguity_dc.hpp"
#include "drfe/errors.hpp"
#include "drfe/grid_prob.hpp"

namespace drfe {

/// How the backtracking index j is initialized at each iteration.
enum class StepRule {
  /// j starts at 0 (upward backtracking as usual); when the accepted step is
  /// below 1, the full-step index floor(log2(|omega| / (||p - r||^2 L_n)))
  /// is tried as well and kept if it passes. L_n can shrink to L_floor.
  adaptive,
  /// j = min{l : 2^l L_n >= 2 L_0}; keeps the curvature at or above 2 L_0.
  anchored,
};

struct SolverConfig {
  /// Stationarity tolerance on |omega|, scaled by max(1, |phi(r0)|).
  double omega_tol = 1e-8;
  int max_iters = 500;
  double L_floor = 1e-8;
  /// Target complementary-slackness residual of the oracle's dual search.
  double oracle_tol = 1e-10;
  StepRule step_rule = StepRule::adaptive;
  /// Extra starts from single-cell depletion vertices (heaviest plant cells first).
  int restarts = 3;
  /// Extra starts from oracle outputs for Gaussian random directions.
  int random_restarts = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(omega_tol > 0.0)) throw InvalidArgument("SolverConfig: omega_tol must be > 0");
    if (max_iters < 1) throw InvalidArgument("SolverConfig: max_iters must be >= 1");
    if (!(L_floor > 0.0)) throw InvalidArgument("SolverConfig: L_floor must be > 0");
    if (!(oracle_tol > 0.0)) throw InvalidArgument("SolverConfig: oracle_tol must be > 0");
    if (restarts < 0 || random_restarts < 0) {
      throw InvalidArgument("SolverConfig: restart counts must be >= 0");
    }
  }
};

enum class Termination { stationary, max_iters };

inline const char* to_string(Termination t) {
  return t == Termination::stationary ? "stationary" : "max_iters";
}

/// State of iterate n and the step taken from it (lambda = 0, j = 0 on the last record).
struct IterationRecord {
  int n = 0;
  double phi = 0.0;
  double omega = 0.0;
  double lambda = 0.0;
  int j = 0;
  double L = 0.0;
  double kl_residual = 0.0;
  double norm_residual = 0.0;
};

struct SolveTrace {
  std::vector<IterationRecord> records;
  Termination termination = Termination::max_iters;
  /// Largest number of doublings any backtracking loop needed.
  int max_backtracks = 0;
};

struct SolveResult {
  RatioVector r_star;
  double phi_star = 0.0;
  /// max KL(p || q) over the ambiguity set: E_qbar[rho ln rho] - phi*.
  double inner_max_value = 0.0;
  SolveTrace trace;
  /// Which start produced the result (0 is r = 1).
  int start = 0;
};

// ---------------------------------------------------------------------------
// Linear minimization oracle

namespace detail {

inline double weighted_kl_of_ratio(std::span<const double> q, std::span<const double> r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += q[i] * r[i] * std::log(r[i]);
  return s;
}

/// Solves min <c, p>_qbar over C. Cells with qbar = 0 are set to 1.
class EntropyBoxOracle {
 public:
  EntropyBoxOracle(std::span<const double> qbar, double eta, RatioBounds bounds, double tol)
      : q_(qbar), eta_(eta), b_(bounds), tol_(tol),
        log_d0_(std::log(bounds.delta0)), log_d1_(std::log(bounds.delta1)) {
    double lo = 0.0, hi = 0.0;
    for (double x : q_) {
      lo += x * b_.delta0;
      hi += x * b_.delta1;
    }
    constexpr double slack = 1e-12;
    if (!(eta_ >= 0.0) || lo > 1.0 + slack || hi < 1.0 - slack) {
      throw InfeasibleSet("linear oracle: no normalized ratio within the box and KL budget");
    }
  }

  std::vector<double> operator()(std::span<const double> c) {
    const std::size_t n = q_.size();
    std::vector<double> p(n, 1.0);
    if (eta_ == 0.0) return p;

    active_.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(c[i])) throw InvalidArgument("linear oracle: non-finite objective");
      if (q_[i] > 0.0) active_.push_back(i);
    }
    if (active_.empty()) return p;
    std::stable_sort(active_.begin(), active_.end(),
                     [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
    const double cmin = c[active_.front()];
    const double spread = c[active_.back()] - cmin;
    if (!(spread > 0.0)) return p;  // constant objective: r = 1 is optimal

    // Entropy constraint inactive: greedy fill of the LP over box and normalization.
    fill_greedy(p);
    if (weighted_kl_of_ratio(q_, p) <= eta_) return p;

    // Otherwise p_i = clip(exp(s - (c_i - cmin) / mu)) with KL(mu) = eta; KL falls as mu grows.
    offsets_.resize(active_.size());
    auto kl_at = [&](double mu) {
      profile(c, cmin, mu, p);
      return weighted_kl_of_ratio(q_, p);
    };
    double mu_hi = spread;
    int guard = 0;
    while (kl_at(mu_hi) > eta_) {
      mu_hi *= 4.0;
      if (++guard > 600 || !std::isfinite(mu_hi)) {
        throw OracleNoConvergence("linear oracle: could not bracket the entropy multiplier");
      }
    }
    // Below mu_floor at most one group of tied c values is interior to the
    // box, so the profile (and its KL) no longer changes: the LP limit with
    // ties shared evenly.
    double min_gap = spread;
    for (std::size_t k = 1; k < active_.size(); ++k) {
      const double gap = c[active_[k]] - c[active_[k - 1]];
      if (gap > 0.0) min_gap = std::min(min_gap, gap);
    }
    const double mu_floor = min_gap / (2.0 * (log_d1_ - log_d0_) + 4.0);
    double mu_lo = mu_floor;
    double factor = 2.0;
    for (;;) {
      const double trial = std::max(mu_hi / factor, mu_floor);
      if (kl_at(trial) > eta_) {
        mu_lo = trial;
        break;
      }
      if (trial == mu_floor) return p;
      mu_hi = trial;
      factor = std::min(factor * factor, 1e100);
    }

    // Bisection in log(mu), keeping mu_hi on the feasible side.
    double kl_hi = kl_at(mu_hi);
    for (int it = 0; it < 400 && eta_ - kl_hi > tol_; ++it) {
      const double mid = std::sqrt(mu_lo) * std::sqrt(mu_hi);
      if (!(mid > mu_lo && mid < mu_hi)) break;
      const double kl_mid = kl_at(mid);
      if (kl_mid > eta_) {
        mu_lo = mid;
      } else {
        mu_hi = mid;
        kl_hi = kl_mid;
      }
    }
    profile(c, cmin, mu_hi, p);
    return p;
  }

 private:
  void fill_greedy(std::vector<double>& p) const {
    double budget = 1.0;
    for (std::size_t i : active_) {
      p[i] = b_.delta0;
      budget -= q_[i] * b_.delta0;
    }
    for (std::size_t i : active_) {
      if (budget <= 0.0) break;
      const double add = std::min(b_.delta1 - b_.delta0, budget / q_[i]);
      p[i] += add;
      budget -= q_[i] * add;
    }
  }

  // Exact normalization for a fixed mu. With cells sorted by c, the cells at
  // delta1 form a prefix and those at delta0 a suffix; between consecutive
  // breakpoints the total mass is affine in exp(s), so s has a closed form.
  void profile(std::span<const double> c, double cmin, double mu, std::vector<double>& p) {
    const std::size_t m = active_.size();
    // Capped so that s - offset stays finite; capped cells sit at delta0 anyway.
    for (std::size_t k = 0; k < m; ++k) {
      offsets_[k] = std::min((c[active_[k]] - cmin) / mu, 1e300);
    }

    // mass(s) for the breakpoint search; offsets_ is nondecreasing.
    auto mass = [&](double s) {
      double total = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double x = s - offsets_[k];
        const double v = x >= log_d1_ ? b_.delta1 : (x <= log_d0_ ? b_.delta0 : std::exp(x));
        total += q_[active_[k]] * v;
      }
      return total;
    };

    // Breakpoints offsets_ + log_d0 and offsets_ + log_d1; mass is monotone in s.
    breaks_.resize(2 * m);
    for (std::size_t k = 0; k < m; ++k) {
      breaks_[k] = offsets_[k] + log_d0_;
      breaks_[m + k] = offsets_[k] + log_d1_;
    }
    std::inplace_merge(breaks_.begin(), breaks_.begin() + static_cast<std::ptrdiff_t>(m),
                       breaks_.end());

    std::size_t lo = 0, hi = breaks_.size() - 1;
    if (mass(breaks_[hi]) <= 1.0) {
      lo = hi;
    } else if (mass(breaks_[lo]) > 1.0) {
      hi = lo;
    } else {
      while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (mass(breaks_[mid]) <= 1.0) lo = mid; else hi = mid;
      }
    }
    const double s_lo = breaks_[lo];
    const double s_hi = breaks_[hi];
    const double probe = lo == hi ? s_lo : 0.5 * (s_lo + s_hi);

    double fixed = 0.0, free_mass = 0.0, ref = 0.0;
    bool have_ref = false;
    for (std::size_t k = 0; k < m; ++k) {
      const double x = probe - offsets_[k];
      const double qk = q_[active_[k]];
      if (x >= log_d1_) {
        fixed += qk * b_.delta1;
      } else if (x <= log_d0_) {
        fixed += qk * b_.delta0;
      } else {
        if (!have_ref) {
          ref = offsets_[k];
          have_ref = true;
        }
        free_mass += qk * std::exp(ref - offsets_[k]);
      }
    }
    double s = probe;
    if (have_ref && free_mass > 0.0 && 1.0 - fixed > 0.0) {
      s = ref + std::log((1.0 - fixed) / free_mass);
      s = std::clamp(s, s_lo, s_hi);
    }
    for (std::size_t k = 0; k < m; ++k) {
      const double x = s - offsets_[k];
      p[active_[k]] = x >= log_d1_ ? b_.delta1 : (x <= log_d0_ ? b_.delta0 : std::exp(x));
    }
  }

  std::span<const double> q_;
  double eta_;
  RatioBounds b_;
  double tol_;
  double log_d0_, log_d1_;
  std::vector<std::size_t> active_;
  std::vector<double> offsets_;
  std::vector<double> breaks_;
};

}  // namespace detail

/// argmin over C of <c, p> = sum_i qbar_i c_i p_i.
///
/// KKT: p_i = clip(exp(-c_i/mu - 1 - nu/mu), delta0, delta1) with mu >= 0 the
/// entropy multiplier and nu the normalization multiplier. For fixed mu the
/// normalization is solved exactly over the sorted breakpoints; mu itself is
/// bracketed geometrically and bisected in log scale. mu = 0 (entropy
/// constraint slack) is the greedy bang-bang fill of the box.
inline RatioVector linear_oracle(const DcProblem& prob, std::span<const double> c,
                                 double oracle_tol = 1e-10) {
  detail::check_same_size(c.size(), prob.size(), "linear_oracle");
  detail::EntropyBoxOracle oracle(prob.qbar(), prob.eta(), prob.bounds(), oracle_tol);
  return RatioVector::checked(prob, oracle(c));
}

/// <grad_g(r) - grad_h(r), p - r>; nonpositive when p is the oracle output at r.
inline double omega(const DcProblem& prob, std::span<const double> r, std::span<const double> p) {
  auto gphi = grad_phi(prob, r);
  auto q = prob.qbar();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += q[i] * gphi[i] * (p[i] - r[i]);
  return s;
}

/// min{1, |omega| / (curvature ||p - r||^2)}; 1 for a zero-length direction.
inline double candidate_step(double omega_abs, double curvature, double dist_sq) {
  if (!(dist_sq > 0.0)) return 1.0;
  return std::min(1.0, omega_abs / (curvature * dist_sq));
}

/// r + lambda (p - r), kept inside the segment [r, p] despite rounding.
inline std::vector<double> convex_step(std::span<const double> r, std::span<const double> p,
                                       double lambda) {
  std::vector<double> out(r.size());
  if (lambda >= 1.0) {
    out.assign(p.begin(), p.end());
    return out;
  }
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double v = r[i] + lambda * (p[i] - r[i]);
    out[i] = std::clamp(v, std::min(r[i], p[i]), std::max(r[i], p[i]));
  }
  return out;
}

namespace detail {

/// change <= -|omega| lambda + (curvature/2) dist_sq lambda^2, ordered to avoid overflow.
inline bool majorization_holds(double change, double omega_abs, double curvature, double dist_sq,
                               double lambda) {
  return change <= lambda * (-omega_abs + 0.5 * (curvature * dist_sq * lambda));
}

}  // namespace detail

/// Quadratic majorization test:
/// phi(r + lambda(p - r)) <= phi(r) - |omega| lambda + (curvature/2) ||p - r||^2 lambda^2.
inline bool descent_check(const DcProblem& prob, std::span<const double> r,
                          std::span<const double> p, double lambda, double curvature) {
  const double om = omega(prob, r, p);
  std::vector<double> d(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) d[i] = p[i] - r[i];
  const double dist = weighted_l1(prob.qbar(), d);
  const auto trial = convex_step(r, p, lambda);
  const double change = phi_difference(prob, r, trial);
  return detail::majorization_holds(change, std::abs(om), curvature, dist * dist, lambda);
}

/// Algorithm 1 from a feasible start r0.
inline SolveResult solve(const DcProblem& prob, const SolverConfig& config, const RatioVector& r0) {
  config.validate();
  detail::check_box(prob, r0.values(), "solve: start");
  if (normalization_residual(prob, r0) > 1e-9 || kl_constraint_residual(prob, r0) > 1e-9) {
    throw InvalidArgument("solve: start point is not feasible");
  }

  const auto q = prob.qbar();
  const auto rho = prob.rho();
  const std::size_t n = prob.size();
  detail::EntropyBoxOracle oracle(q, prob.eta(), prob.bounds(), config.oracle_tol);

  const double l0 = std::max(lipschitz_estimates(prob).phi, config.L_floor);
  double curv_base = l0;
  std::vector<double> r(r0.values().begin(), r0.values().end());
  double phi = eval_phi(prob, r);
  const double tol = config.omega_tol * std::max(1.0, std::abs(phi));

  SolveResult result;
  std::vector<double> c(n), d(n);
  for (int it = 0;; ++it) {
    for (std::size_t i = 0; i < n; ++i) c[i] = rho[i] / r[i];
    auto p = oracle(c);
    double om = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = p[i] - r[i];
      om += q[i] * c[i] * d[i];
    }
    // The exact minimizer is never worse than r itself. When the oracle's
    // dual tolerance, amplified by a steep gradient, leaves p behind r, r is
    // the better answer to the linear subproblem.
    if (om > 0.0) {
      p = r;
      std::fill(d.begin(), d.end(), 0.0);
      om = 0.0;
    }

    IterationRecord rec;
    rec.n = it;
    rec.phi = phi;
    rec.omega = om;
    rec.L = curv_base;
    rec.kl_residual = kl_constraint_residual(prob, r);
    rec.norm_residual = normalization_residual(prob, r);

    if (std::abs(om) <= tol || it == config.max_iters) {
      result.trace.termination =
          std::abs(om) <= tol ? Termination::stationary : Termination::max_iters;
      result.trace.records.push_back(rec);
      break;
    }

    const double dist = weighted_l1(q, d);
    const double dist_sq = dist * dist;
    int j = 0;
    if (config.step_rule == StepRule::anchored) {
      while (std::ldexp(curv_base, j) < 2.0 * l0) ++j;
    }
    const int j_start = j;
    auto attempt = [&](int jj, double& lam, std::vector<double>& out) {
      const double curvature = std::ldexp(curv_base, jj);
      if (!std::isfinite(curvature)) return false;
      lam = candidate_step(std::abs(om), curvature, dist_sq);
      out = convex_step(r, p, lam);
      // A step below floating resolution leaves r untouched; nothing to test.
      if (std::equal(out.begin(), out.end(), r.begin())) return true;
      return detail::majorization_holds(phi_difference(prob, r, out), std::abs(om), curvature,
                                        dist_sq, lam);
    };
    double lambda = 0.0;
    std::vector<double> trial;
    while (!attempt(j, lambda, trial)) {
      if (++j - j_start > 60) {
        throw NonDescentAnomaly("solve: backtracking exceeded 60 doublings at iteration " +
                                std::to_string(it));
      }
    }
    if (config.step_rule == StepRule::adaptive && lambda < 1.0 && dist_sq > 0.0) {
      // The seed curvature can exceed the true one by hundreds of orders of
      // magnitude. Also try the largest index whose step is a full one.
      const double ratio = std::abs(om) / (dist_sq * curv_base);
      const int j_full =
          static_cast<int>(std::clamp(std::floor(std::log2(ratio)), -2000.0, double(j)));
      double lam_full = 0.0;
      std::vector<double> trial_full;
      if (j_full < j && attempt(j_full, lam_full, trial_full) && lam_full > lambda) {
        j = j_full;
        lambda = lam_full;
        trial.swap(trial_full);
      }
    }
    result.trace.max_backtracks = std::max(result.trace.max_backtracks, j - j_start);

    const double phi_next = eval_phi(prob, trial);
    if (phi_next > phi + 1e-9) {
      throw NonDescentAnomaly("solve: accepted step increased phi by " +
                              std::to_string(phi_next - phi));
    }
    rec.lambda = lambda;
    rec.j = j;
    result.trace.records.push_back(rec);

    curv_base = std::max(config.L_floor, std::ldexp(curv_base, j - 1));
    r = std::move(trial);
    phi = phi_next;
  }

  result.phi_star = phi;
  double nominal_kl = 0.0;
  const auto w = prob.weight();
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] > 0.0) nominal_kl += w[i] * std::log(rho[i]);
  }
  result.inner_max_value = nominal_kl - phi;
  result.r_star = RatioVector::checked(prob, std::move(r));
  return result;
}

inline SolveResult solve(const DcProblem& prob, const SolverConfig& config = {}) {
  return solve(prob, config, RatioVector::ones(prob.size()));
}

/// The feasible point minimizing r_i alone.
inline RatioVector depletion_vertex(const DcProblem& prob, std::size_t cell,
                                    double oracle_tol = 1e-10) {
  std::vector<double> c(prob.size(), 0.0);
  c.at(cell) = 1.0;
  return linear_oracle(prob, c, oracle_tol);
}

/// Algorithm 1 from r = 1, from the depletion vertices of the `restarts`
/// heaviest plant cells, and from `random_restarts` random oracle vertices.
/// phi is concave, so single starts can stop at non-global stationary
/// points; the lowest phi* wins (earliest start on ties).
inline SolveResult solve_multistart(const DcProblem& prob, const SolverConfig& config = {}) {
  config.validate();
  SolveResult best = solve(prob, config);
  if (prob.eta() == 0.0) return best;

  auto consider = [&](const RatioVector& start, int tag) {
    SolveResult res = solve(prob, config, start);
    if (res.phi_star < best.phi_star) {
      best = std::move(res);
      best.start = tag;
    }
  };

  std::vector<std::size_t> order(prob.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto w = prob.weight();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  const std::size_t depletion =
      std::min<std::size_t>(static_cast<std::size_t>(config.restarts), prob.size());
  int tag = 1;
  for (std::size_t k = 0; k < depletion; ++k, ++tag) {
    if (prob.qbar()[order[k]] <= 0.0) continue;
    consider(depletion_vertex(prob, order[k], config.oracle_tol), tag);
  }
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < config.random_restarts; ++k, ++tag) {
    std::vector<double> dir(prob.size());
    for (double& x : dir) x = normal(rng);
    consider(linear_oracle(prob, dir, config.oracle_tol), tag);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Brute-force reference

struct BruteForceResult {
  RatioVector r;
  double phi = 0.0;
};

namespace detail {

/// For f convex with f(inside) <= level < f(outside), the point of
/// [inside, outside] where f crosses level, approached from the inside.
template <typename F>
double feasible_edge(F&& f, double inside, double outside, double level) {
  if (f(outside) <= level) return outside;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (inside + outside);
    if (mid == inside || mid == outside) break;
    if (f(mid) <= level) inside = mid; else outside = mid;
  }
  return inside;
}

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

/// Grid lo, lo + res, ... strictly below hi, then hi itself.
template <typename Visit>
void scan_interval(double lo, double hi, double res, Visit&& visit) {
  if (hi < lo) return;
  for (std::size_t k = 0;; ++k) {
    const double t = lo + static_cast<double>(k) * res;
    if (t >= hi) break;
    visit(t);
  }
  visit(hi);
}

/// Scans the pair (r_a, r_b) with q_a r_a + q_b r_b = mass and
/// q_a r_a ln r_a + q_b r_b ln r_b <= kl_budget. Visit gets (r_a, r_b).
template <typename Visit>
void scan_pair(double qa, double qb, double mass, double kl_budget, RatioBounds b, double res,
               Visit&& visit) {
  if (!(mass > 0.0) || kl_budget < -1e-15) return;
  const double lo_box = std::max(b.delta0, (mass - qb * b.delta1) / qa);
  const double hi_box = std::min(b.delta1, (mass - qb * b.delta0) / qa);
  if (lo_box > hi_box) return;
  auto partner = [&](double t) { return (mass - qa * t) / qb; };
  auto kl = [&](double t) { return qa * xlogx(t) + qb * xlogx(partner(t)); };
  // KL along the segment is convex with its minimum where both ratios agree.
  const double center = std::clamp(mass / (qa + qb), lo_box, hi_box);
  if (kl(center) > kl_budget) return;
  const double lo = feasible_edge(kl, center, lo_box, kl_budget);
  const double hi = feasible_edge(kl, center, hi_box, kl_budget);
  scan_interval(lo, hi, res, [&](double t) {
    double u = partner(t);
    // At the box endpoints the partner lands on a bound only up to rounding.
    const double slack = 1e-12 * std::max(1.0, std::abs(u));
    if (u < b.delta0 && u >= b.delta0 - slack) u = b.delta0;
    if (u > b.delta1 && u <= b.delta1 + slack) u = b.delta1;
    if (u < b.delta0 || u > b.delta1 || kl(t) > kl_budget) return;
    visit(t, u);
  });
}

}  // namespace detail

/// Exhaustive scan of the feasible slice at grid spacing `resolution` for
/// supports of at most three cells. Every one-dimensional scan line also
/// visits its exact feasible endpoints.
inline BruteForceResult brute_force_reference(const DcProblem& prob, double resolution) {
  const std::size_t n = prob.size();
  if (n == 0 || n > 3) throw UnsupportedSize("brute_force_reference: support size must be 1..3");
  if (!(resolution > 0.0)) throw InvalidArgument("brute_force_reference: resolution must be > 0");
  const auto q = prob.qbar();
  const auto w = prob.weight();
  const RatioBounds b = prob.bounds();
  const double eta = prob.eta();

  std::vector<double> best(n, 1.0);
  double best_phi = eval_phi(prob, best);
  std::vector<double> cand(n);
  auto offer = [&]() {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] > 0.0) v += w[i] * std::log(cand[i]);
    }
    if (v < best_phi) {
      best_phi = v;
      best = cand;
    }
  };

  if (n == 2) {
    detail::scan_pair(q[0], q[1], 1.0, eta, b, resolution, [&](double a, double c) {
      cand[0] = a;
      cand[1] = c;
      offer();
    });
  } else if (n == 3) {
    for (std::size_t outer = 0; outer < 3; ++outer) {
      const std::size_t ia = (outer + 1) % 3, ib = (outer + 2) % 3;
      const double qo = q[outer], qa = q[ia], qb = q[ib];
      const double lo_box = std::max(b.delta0, (1.0 - (qa + qb) * b.delta1) / qo);
      const double hi_box = std::min(b.delta1, (1.0 - (qa + qb) * b.delta0) / qo);
      if (lo_box > hi_box) continue;
      // Least KL compatible with a given outer ratio: the other two equal.
      auto kl_min = [&](double t) {
        const double m = (1.0 - qo * t) / (qa + qb);
        return qo * detail::xlogx(t) + (qa + qb) * detail::xlogx(m);
      };
      const double center = std::clamp(1.0, lo_box, hi_box);
      if (kl_min(center) > eta) continue;
      const double lo = detail::feasible_edge(kl_min, center, lo_box, eta);
      const double hi = detail::feasible_edge(kl_min, center, hi_box, eta);
      detail::scan_interval(lo, hi, resolution, [&](double t) {
        cand[outer] = t;
        detail::scan_pair(qa, qb, 1.0 - qo * t, eta - qo * detail::xlogx(t), b, resolution,
                          [&](double a, double c) {
                            cand[ia] = a;
                            cand[ib] = c;
                            offer();
                          });
      });
    }
  }
  return {RatioVector::checked(prob, std::move(best)), best_phi};
}

}  // namespace drfe
