#pragma once

// The KL ambiguity set in likelihood-ratio form and the difference-of-convex
// objective phi = g - h minimized over it.
//
// All inner products and norms are weighted by the nominal pmf qbar:
//   <a, b> = sum_i qbar_i a_i b_i,   ||a||_1 = sum_i qbar_i |a_i|.
// Gradients are reported in that geometry, so cell i of grad_g is
// rho_i (ln r_i + 1) rather than the raw partial derivative.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "drfe/errors.hpp"
#include "drfe/grid_prob.hpp"

namespace drfe {

/// Box on likelihood ratios, delta0 <= r <= delta1.
struct RatioBounds {
  double delta0 = 1e-4;
  double delta1 = 1e4;
};

/// KL radius eta >= 0 (nats) of one conditioning cell.
class AmbiguityBudget {
 public:
  AmbiguityBudget() = default;
  explicit AmbiguityBudget(double eta) : eta_(eta) {
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
      throw InvalidArgument("AmbiguityBudget: eta must be finite and nonnegative");
    }
  }
  double value() const { return eta_; }

 private:
  double eta_ = 0.0;
};

inline double weighted_inner(std::span<const double> weight, std::span<const double> a,
                             std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) s += weight[i] * a[i] * b[i];
  return s;
}

inline double weighted_l1(std::span<const double> weight, std::span<const double> a) {
  double s = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) s += weight[i] * std::abs(a[i]);
  return s;
}

/// One inner maximization instance: minimize phi(r) = E_qbar[rho ln r] over
/// {E_qbar[r] = 1, E_qbar[r ln r] <= eta, delta0 <= r <= delta1}.
class DcProblem {
 public:
  DcProblem() = default;

  /// rho = plant / base cellwise; cells where both vanish get rho = 0.
  static DcProblem from_rows(std::span<const double> plant, const GridPmf& base,
                             AmbiguityBudget budget, RatioBounds bounds = {}) {
    detail::check_same_size(plant.size(), base.size(), "DcProblem::from_rows");
    std::vector<double> rho(plant.size(), 0.0);
    for (std::size_t i = 0; i < plant.size(); ++i) {
      if (plant[i] <= 0.0) continue;
      if (base[i] <= 0.0) {
        throw AbsoluteContinuityViolation("DcProblem: plant has mass where the nominal model has none");
      }
      rho[i] = plant[i] / base[i];
    }
    DcProblem p(base, std::move(rho), budget, bounds, /*validate_mean=*/false);
    p.weight_.assign(plant.begin(), plant.end());
    p.validate_mean();
    return p;
  }

  DcProblem(GridPmf base, std::vector<double> rho, AmbiguityBudget budget, RatioBounds bounds = {})
      : DcProblem(std::move(base), std::move(rho), budget, bounds, /*validate_mean=*/true) {}

  const GridPmf& base() const { return base_; }
  std::span<const double> qbar() const { return base_.mass(); }
  std::span<const double> rho() const { return rho_; }
  /// qbar_i * rho_i, i.e. the plant pmf.
  std::span<const double> weight() const { return weight_; }
  double eta() const { return budget_.value(); }
  const RatioBounds& bounds() const { return bounds_; }
  /// M = max_i rho_i.
  double rho_sup_norm() const { return rho_sup_; }
  std::size_t size() const { return rho_.size(); }

 private:
  DcProblem(GridPmf base, std::vector<double> rho, AmbiguityBudget budget, RatioBounds bounds,
            bool check_mean)
      : base_(std::move(base)), rho_(std::move(rho)), budget_(budget), bounds_(bounds) {
    detail::check_same_size(base_.size(), rho_.size(), "DcProblem rho");
    if (!(bounds_.delta0 > 0.0) || !(bounds_.delta1 >= bounds_.delta0) ||
        !std::isfinite(bounds_.delta1)) {
      throw InvalidArgument("DcProblem: need 0 < delta0 <= delta1 < inf");
    }
    weight_.resize(rho_.size());
    for (std::size_t i = 0; i < rho_.size(); ++i) {
      if (!(rho_[i] >= 0.0) || !std::isfinite(rho_[i])) {
        throw InvalidArgument("DcProblem: rho must be finite and nonnegative");
      }
      weight_[i] = base_[i] * rho_[i];
      rho_sup_ = std::max(rho_sup_, rho_[i]);
    }
    if (check_mean) validate_mean();
  }

  void validate_mean() const {
    double mean = 0.0;
    for (double w : weight_) mean += w;
    if (std::abs(mean - 1.0) > 1e-9) {
      throw InvalidArgument("DcProblem: E_qbar[rho] = " + std::to_string(mean) + ", expected 1");
    }
  }

  GridPmf base_;
  std::vector<double> rho_;
  std::vector<double> weight_;
  AmbiguityBudget budget_;
  RatioBounds bounds_;
  double rho_sup_ = 0.0;
};

/// A likelihood ratio checked against a problem's box and normalization.
class RatioVector {
 public:
  RatioVector() = default;

  static RatioVector checked(const DcProblem& prob, std::vector<double> values) {
    detail::check_same_size(values.size(), prob.size(), "RatioVector");
    const auto& b = prob.bounds();
    for (double v : values) {
      if (!(v >= b.delta0 && v <= b.delta1)) {
        throw BoundsViolation("RatioVector: value " + std::to_string(v) + " outside [delta0, delta1]");
      }
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) mean += prob.qbar()[i] * values[i];
    if (std::abs(mean - 1.0) > 1e-9) {
      throw InvalidArgument("RatioVector: E_qbar[r] = " + std::to_string(mean) + ", expected 1");
    }
    return RatioVector(std::move(values));
  }

  static RatioVector ones(std::size_t n) { return RatioVector(std::vector<double>(n, 1.0)); }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  operator std::span<const double>() const { return values_; }

 private:
  explicit RatioVector(std::vector<double> v) : values_(std::move(v)) {}
  std::vector<double> values_;
};

namespace detail {

inline void check_box(const DcProblem& prob, std::span<const double> r, const char* what) {
  check_same_size(r.size(), prob.size(), what);
  const auto& b = prob.bounds();
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!(r[i] >= b.delta0 && r[i] <= b.delta1)) {
      throw BoundsViolation(std::string(what) + ": r[" + std::to_string(i) + "] = " +
                            std::to_string(r[i]) + " outside [delta0, delta1]");
    }
  }
}

}  // namespace detail

/// g(r) = E_qbar[rho r ln r].
inline double eval_g(const DcProblem& prob, std::span<const double> r) {
  detail::check_box(prob, r, "eval_g");
  auto w = prob.weight();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += w[i] * r[i] * std::log(r[i]);
  return s;
}

/// h(r) = E_qbar[rho kappa(r)] with kappa(r) = r ln r - ln r = (r - 1) ln r >= 0.
inline double eval_h(const DcProblem& prob, std::span<const double> r) {
  detail::check_box(prob, r, "eval_h");
  auto w = prob.weight();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double lr = std::log(r[i]);
    s += w[i] * (r[i] * lr - lr);
  }
  return s;
}

/// phi(r) = g(r) - h(r), evaluated through its closed form E_qbar[rho ln r].
inline double eval_phi(const DcProblem& prob, std::span<const double> r) {
  detail::check_box(prob, r, "eval_phi");
  auto w = prob.weight();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (w[i] > 0.0) s += w[i] * std::log(r[i]);
  }
  return s;
}

/// phi(r_new) - phi(r) summed cellwise as rho ln(r_new / r), free of the
/// cancellation in differencing two eval_phi values.
inline double phi_difference(const DcProblem& prob, std::span<const double> r,
                             std::span<const double> r_new) {
  auto w = prob.weight();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (w[i] > 0.0) s += w[i] * std::log1p((r_new[i] - r[i]) / r[i]);
  }
  return s;
}

inline std::vector<double> grad_g(const DcProblem& prob, std::span<const double> r) {
  detail::check_box(prob, r, "grad_g");
  auto rho = prob.rho();
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = rho[i] * (std::log(r[i]) + 1.0);
  return out;
}

inline std::vector<double> grad_h(const DcProblem& prob, std::span<const double> r) {
  detail::check_box(prob, r, "grad_h");
  auto rho = prob.rho();
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = rho[i] * (std::log(r[i]) + 1.0 - 1.0 / r[i]);
  return out;
}

/// grad_g - grad_h = rho / r.
inline std::vector<double> grad_phi(const DcProblem& prob, std::span<const double> r) {
  detail::check_box(prob, r, "grad_phi");
  auto rho = prob.rho();
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = rho[i] / r[i];
  return out;
}

/// E_qbar[r ln r] - eta; feasible iff <= 0. Equals KL(r qbar || qbar) - eta.
inline double kl_constraint_residual(const DcProblem& prob, std::span<const double> r) {
  auto q = prob.qbar();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] > 0.0) s += q[i] * r[i] * std::log(r[i]);
  }
  return s - prob.eta();
}

/// |E_qbar[r] - 1|.
inline double normalization_residual(const DcProblem& prob, std::span<const double> r) {
  auto q = prob.qbar();
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += q[i] * r[i];
  return std::abs(s - 1.0);
}

struct LipschitzEstimates {
  double g = 0.0;
  double h = 0.0;
  double phi = 0.0;
};

/// L_g = M(|ln d0| + 1), L_h = M max(|ln d0|, |ln d1|), L_phi = L_g + L_h.
/// These seed the curvature estimate; they are not certified global constants.
inline LipschitzEstimates lipschitz_estimates(const DcProblem& prob) {
  const double m = prob.rho_sup_norm();
  const double l0 = std::abs(std::log(prob.bounds().delta0));
  const double l1 = std::abs(std::log(prob.bounds().delta1));
  LipschitzEstimates est;
  est.g = m * (l0 + 1.0);
  est.h = m * std::max(l0, l1);
  est.phi = est.g + est.h;
  return est;
}

}  // namespace drfe
