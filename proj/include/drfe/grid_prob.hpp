#pragma once

// Probability primitives on finite grids: pmfs, conditional kernels, KL
// divergence, the free-energy functional and its closed-form minimizer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drfe/errors.hpp"

namespace drfe {

/// Tolerance on the total mass of any pmf produced by this library.
inline constexpr double kNormalizationTol = 1e-12;

/// Lower clamp applied to discretized densities so every cell stays in the support.
inline constexpr double kPositivityFloor = 1e-300;

namespace detail {

inline std::vector<std::int64_t> iota_support(std::size_t n) {
  std::vector<std::int64_t> s(n);
  std::iota(s.begin(), s.end(), std::int64_t{0});
  return s;
}

inline void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InvalidArgument(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
  }
}

inline double checked_total(std::span<const double> w, const char* what) {
  double total = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) {
      throw InvalidArgument(std::string(what) + ": weights must be finite and nonnegative");
    }
    total += x;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw InvalidArgument(std::string(what) + ": weights must have a positive finite total");
  }
  return total;
}

}  // namespace detail

/// A normalized probability mass function over an ordered list of cells.
class GridPmf {
 public:
  GridPmf() = default;

  /// Rescales nonnegative weights to unit mass. An empty support means 0..n-1.
  static GridPmf normalized(std::vector<double> weights, std::vector<std::int64_t> support = {}) {
    const double total = detail::checked_total(weights, "GridPmf");
    for (double& w : weights) w /= total;
    return GridPmf(std::move(weights), std::move(support));
  }

  /// Takes masses verbatim (no rescaling) after checking they already sum to one.
  static GridPmf from_masses(std::vector<double> mass, std::vector<std::int64_t> support = {}) {
    const double total = detail::checked_total(mass, "GridPmf");
    if (std::abs(total - 1.0) > kNormalizationTol) {
      throw InvalidArgument("GridPmf: masses sum to " + std::to_string(total) + ", not 1");
    }
    return GridPmf(std::move(mass), std::move(support));
  }

  static GridPmf uniform(std::size_t n) {
    return normalized(std::vector<double>(n, 1.0));
  }

  std::size_t size() const { return mass_.size(); }
  bool empty() const { return mass_.empty(); }
  double operator[](std::size_t i) const { return mass_[i]; }
  std::span<const double> mass() const { return mass_; }
  std::span<const std::int64_t> support() const { return support_; }

  friend bool operator==(const GridPmf&, const GridPmf&) = default;

 private:
  GridPmf(std::vector<double> mass, std::vector<std::int64_t> support)
      : support_(support.empty() ? detail::iota_support(mass.size()) : std::move(support)),
        mass_(std::move(mass)) {
    detail::check_same_size(support_.size(), mass_.size(), "GridPmf support");
  }

  std::vector<std::int64_t> support_;
  std::vector<double> mass_;
};

/// One pmf per conditioning cell, all over a shared target support. Stored row-major.
class ConditionalKernel {
 public:
  ConditionalKernel() = default;

  /// Builds `rows` rows; `fill(i, out)` writes unnormalized weights for row i.
  template <typename Fill>
  static ConditionalKernel build(std::size_t rows, std::vector<std::int64_t> support, Fill&& fill) {
    ConditionalKernel k;
    k.support_ = std::move(support);
    k.rows_ = rows;
    const std::size_t cols = k.support_.size();
    k.mass_.assign(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      std::span<double> out(k.mass_.data() + i * cols, cols);
      fill(i, out);
      const double total = detail::checked_total(out, "ConditionalKernel row");
      for (double& w : out) w /= total;
    }
    return k;
  }

  static ConditionalKernel from_rows(const std::vector<GridPmf>& rows) {
    if (rows.empty()) throw InvalidArgument("ConditionalKernel: no rows");
    std::vector<std::int64_t> support(rows.front().support().begin(), rows.front().support().end());
    ConditionalKernel k;
    k.support_ = support;
    k.rows_ = rows.size();
    k.mass_.reserve(rows.size() * support.size());
    for (const auto& r : rows) {
      if (!std::equal(r.support().begin(), r.support().end(), support.begin(), support.end())) {
        throw InvalidArgument("ConditionalKernel: rows must share one target support");
      }
      k.mass_.insert(k.mass_.end(), r.mass().begin(), r.mass().end());
    }
    return k;
  }

  /// Takes a row-major mass matrix verbatim; every row must already be normalized.
  static ConditionalKernel from_masses(std::vector<std::int64_t> support, std::vector<double> mass) {
    ConditionalKernel k;
    k.support_ = std::move(support);
    const std::size_t cols = k.support_.size();
    if (cols == 0 || mass.size() % cols != 0) {
      throw InvalidArgument("ConditionalKernel: mass matrix does not match support size");
    }
    k.rows_ = mass.size() / cols;
    k.mass_ = std::move(mass);
    for (std::size_t i = 0; i < k.rows_; ++i) {
      const double total = detail::checked_total(k.row(i), "ConditionalKernel row");
      if (std::abs(total - 1.0) > kNormalizationTol) {
        throw InvalidArgument("ConditionalKernel: row " + std::to_string(i) + " is not normalized");
      }
    }
    return k;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return support_.size(); }
  std::span<const std::int64_t> support() const { return support_; }
  std::span<const double> row(std::size_t i) const {
    return {mass_.data() + i * cols(), cols()};
  }
  GridPmf row_pmf(std::size_t i) const {
    auto r = row(i);
    return GridPmf::from_masses({r.begin(), r.end()}, support_);
  }

  friend bool operator==(const ConditionalKernel&, const ConditionalKernel&) = default;

 private:
  std::vector<std::int64_t> support_;
  std::size_t rows_ = 0;
  std::vector<double> mass_;
};

/// Per-cell loss values l(w); finite everywhere.
class LossTable {
 public:
  LossTable() = default;
  explicit LossTable(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!std::isfinite(v)) throw InvalidArgument("LossTable: non-finite loss");
    }
  }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

 private:
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Divergences

/// KL(p || q) with 0 ln 0 := 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  detail::check_same_size(p.size(), q.size(), "kl_divergence");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      throw AbsoluteContinuityViolation("kl_divergence: p > 0 where q = 0 at cell " +
                                        std::to_string(i));
    }
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

inline double kl_divergence(const GridPmf& p, const GridPmf& q) {
  return kl_divergence(p.mass(), q.mass());
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

/// |KL(f||g) - KL(f1||g1) - E_f1[KL(f(.|w1) || g(.|w1))]| for joints stored
/// row-major with `first_size` values of w1.
inline double kl_chain_rule_residual(const GridPmf& joint_f, const GridPmf& joint_g,
                                     std::size_t first_size) {
  detail::check_same_size(joint_f.size(), joint_g.size(), "kl_chain_rule_residual");
  if (first_size == 0 || joint_f.size() % first_size != 0) {
    throw InvalidArgument("kl_chain_rule_residual: joint size is not a multiple of first_size");
  }
  const std::size_t second_size = joint_f.size() / first_size;
  auto f = joint_f.mass();
  auto g = joint_g.mass();

  std::vector<double> f1(first_size, 0.0), g1(first_size, 0.0);
  for (std::size_t a = 0; a < first_size; ++a) {
    for (std::size_t b = 0; b < second_size; ++b) {
      f1[a] += f[a * second_size + b];
      g1[a] += g[a * second_size + b];
    }
  }

  const double joint_kl = kl_divergence(f, g);
  const double marginal_kl = kl_divergence(f1, g1);
  double conditional_kl = 0.0;
  std::vector<double> fc(second_size), gc(second_size);
  for (std::size_t a = 0; a < first_size; ++a) {
    if (f1[a] <= 0.0) continue;
    for (std::size_t b = 0; b < second_size; ++b) {
      fc[b] = f[a * second_size + b] / f1[a];
      gc[b] = g[a * second_size + b] / g1[a];
    }
    conditional_kl += f1[a] * kl_divergence(fc, gc);
  }
  return std::abs(joint_kl - marginal_kl - conditional_kl);
}

// ---------------------------------------------------------------------------
// Free energy

/// F(p, q) = KL(p || q) + E_p[l].
inline double free_energy(std::span<const double> p, std::span<const double> q,
                          std::span<const double> loss) {
  detail::check_same_size(p.size(), loss.size(), "free_energy loss");
  double expected_loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) expected_loss += p[i] * loss[i];
  return kl_divergence(p, q) + expected_loss;
}

inline double free_energy(const GridPmf& p, const GridPmf& q, const LossTable& l) {
  return free_energy(p.mass(), q.mass(), l.values());
}

/// base(w) exp(-score(w)) / Z. Throws DegenerateNormalizer when Z is 0 or not finite.
inline GridPmf softmax_tilt(const GridPmf& base, std::span<const double> score) {
  detail::check_same_size(base.size(), score.size(), "softmax_tilt");
  std::vector<double> w(base.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(score[i])) throw InvalidArgument("softmax_tilt: non-finite score");
    w[i] = base[i] * std::exp(-score[i]);
    z += w[i];
  }
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw DegenerateNormalizer("softmax_tilt: normalizer is " + std::to_string(z) +
                               "; rescale the scores");
  }
  for (double& x : w) x /= z;
  return GridPmf::from_masses(std::move(w), {base.support().begin(), base.support().end()});
}

struct FreeEnergyMinimum {
  GridPmf pmf;
  double value = 0.0;
};

/// argmin_p F(p, q): p* = q e^{-l} / Z, with optimal value -ln Z.
inline FreeEnergyMinimum free_energy_argmin(const GridPmf& q, const LossTable& l) {
  detail::check_same_size(q.size(), l.size(), "free_energy_argmin");
  double z = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) z += q[i] * std::exp(-l[i]);
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw DegenerateNormalizer("free_energy_argmin: sum q exp(-l) is " + std::to_string(z));
  }
  return {softmax_tilt(q, l.values()), -std::log(z)};
}

// ---------------------------------------------------------------------------
// Grids

/// A uniform axis of `cells` equal-width cells over [lo, hi].
struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t cells = 1;
  bool periodic = false;

  double width() const { return (hi - lo) / static_cast<double>(cells); }
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }

  /// Signed offset x - center(i), taken on the circle for periodic axes.
  double offset(double x, std::size_t i) const {
    double d = x - center(i);
    if (periodic) {
      const double period = hi - lo;
      d -= period * std::floor(d / period + 0.5);
    }
    return d;
  }

  /// Index of the cell containing x (equivalently, the nearest center).
  std::size_t locate(double x) const {
    double t = (x - lo) / width();
    if (periodic) {
      const double n = static_cast<double>(cells);
      t -= n * std::floor(t / n);
    }
    const double idx = std::floor(t);
    if (idx <= 0.0) return 0;
    if (idx >= static_cast<double>(cells - 1)) return cells - 1;
    return static_cast<std::size_t>(idx);
  }
};

/// Cartesian product of axes, flattened row-major (first axis slowest).
class ProductGrid {
 public:
  ProductGrid() = default;
  explicit ProductGrid(std::vector<Axis> axes) : axes_(std::move(axes)) {
    if (axes_.empty()) throw InvalidArgument("ProductGrid: no axes");
    for (const auto& a : axes_) {
      if (a.cells == 0 || !(a.hi > a.lo)) throw InvalidArgument("ProductGrid: degenerate axis");
    }
  }

  std::size_t dims() const { return axes_.size(); }
  const Axis& axis(std::size_t d) const { return axes_[d]; }

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes_) n *= a.cells;
    return n;
  }

  std::vector<std::size_t> unflatten(std::size_t flat) const {
    std::vector<std::size_t> idx(axes_.size());
    for (std::size_t d = axes_.size(); d-- > 0;) {
      idx[d] = flat % axes_[d].cells;
      flat /= axes_[d].cells;
    }
    return idx;
  }

  std::size_t flatten(std::span<const std::size_t> idx) const {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < axes_.size(); ++d) flat = flat * axes_[d].cells + idx[d];
    return flat;
  }

  std::vector<double> center(std::size_t flat) const {
    auto idx = unflatten(flat);
    std::vector<double> c(axes_.size());
    for (std::size_t d = 0; d < axes_.size(); ++d) c[d] = axes_[d].center(idx[d]);
    return c;
  }

  std::size_t locate(std::span<const double> point) const {
    detail::check_same_size(point.size(), axes_.size(), "ProductGrid::locate");
    std::vector<std::size_t> idx(axes_.size());
    for (std::size_t d = 0; d < axes_.size(); ++d) idx[d] = axes_[d].locate(point[d]);
    return flatten(idx);
  }

 private:
  std::vector<Axis> axes_;
};

/// Writes the discretized Gaussian N(mean, diag(variance)) over `grid` into
/// `out` (size grid.size()): density at cell centers, floored at
/// kPositivityFloor relative to the mode, then normalized.
inline void discretize_gaussian_into(std::span<const double> mean, std::span<const double> variance,
                                     const ProductGrid& grid, std::span<double> out) {
  detail::check_same_size(mean.size(), grid.dims(), "discretize_gaussian mean");
  detail::check_same_size(variance.size(), grid.dims(), "discretize_gaussian variance");
  detail::check_same_size(out.size(), grid.size(), "discretize_gaussian output");
  for (double v : variance) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("discretize_gaussian: variances must be positive");
    }
  }
  // The log-density separates across axes; tabulate each axis once.
  std::vector<std::vector<double>> axis_log(grid.dims());
  for (std::size_t d = 0; d < grid.dims(); ++d) {
    const Axis& a = grid.axis(d);
    auto& t = axis_log[d];
    t.resize(a.cells);
    for (std::size_t i = 0; i < a.cells; ++i) {
      const double off = a.offset(mean[d], i);
      t[i] = -0.5 * off * off / variance[d];
    }
    const double top = *std::max_element(t.begin(), t.end());
    for (double& x : t) x -= top;
  }
  std::vector<std::size_t> idx(grid.dims(), 0);
  double total = 0.0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    double lp = 0.0;
    for (std::size_t d = 0; d < grid.dims(); ++d) lp += axis_log[d][idx[d]];
    out[flat] = std::max(std::exp(lp), kPositivityFloor);
    total += out[flat];
    for (std::size_t d = grid.dims(); d-- > 0;) {
      if (++idx[d] < grid.axis(d).cells) break;
      idx[d] = 0;
    }
  }
  for (double& x : out) x /= total;
}

inline GridPmf discretize_gaussian(std::span<const double> mean, std::span<const double> variance,
                                   const ProductGrid& grid) {
  std::vector<double> w(grid.size());
  discretize_gaussian_into(mean, variance, grid, w);
  return GridPmf::normalized(std::move(w));
}

}  // namespace drfe
