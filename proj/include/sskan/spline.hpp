#pragma once

// Uniform-knot B-spline bases. A basis of degree p with G intervals on
// [lo, hi] carries G + 2p + 1 knots with spacing h = (hi - lo) / G, extended
// p knots past each end, giving G + p basis functions. Knots are never
// clamped, so the partition of unity holds on the whole of [lo, hi] and the
// basis decays to zero beyond the extended span.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "sskan/error.hpp"
#include "sskan/linalg.hpp"

namespace sskan {

inline constexpr int kMaxSplineDegree = 7;

class SplineBasis {
 public:
  SplineBasis() = default;

  int degree() const noexcept { return degree_; }
  double domain_lo() const noexcept { return lo_; }
  double domain_hi() const noexcept { return hi_; }
  int n_intervals() const noexcept { return intervals_; }
  double spacing() const noexcept { return h_; }
  std::size_t count() const noexcept { return static_cast<std::size_t>(intervals_ + degree_); }
  const Vector& knots() const noexcept { return knots_; }

  // Knot i of the uniform sequence, also defined for i outside the stored
  // range so local evaluation near the ends needs no special cases.
  double knot(int i) const noexcept { return lo_ + static_cast<double>(i - degree_) * h_; }

  friend bool operator==(const SplineBasis&, const SplineBasis&) = default;

  friend SplineBasis make_uniform_basis(int degree, double lo, double hi, int n_intervals);

 private:
  int degree_ = 3;
  double lo_ = -1.0;
  double hi_ = 1.0;
  int intervals_ = 5;
  double h_ = 0.4;
  Vector knots_;
};

inline SplineBasis make_uniform_basis(int degree, double lo, double hi, int n_intervals) {
  require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, "invalid-domain",
          "spline domain requires lo < hi, got [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  require(n_intervals >= 1, "invalid-size", "spline needs at least one interval");
  require(degree >= 1 && degree <= kMaxSplineDegree, "invalid-size",
          "spline degree must lie in [1, " + std::to_string(kMaxSplineDegree) + "]");
  SplineBasis b;
  b.degree_ = degree;
  b.lo_ = lo;
  b.hi_ = hi;
  b.intervals_ = n_intervals;
  b.h_ = (hi - lo) / n_intervals;
  b.knots_.resize(static_cast<std::size_t>(n_intervals + 2 * degree + 1));
  for (std::size_t i = 0; i < b.knots_.size(); ++i) b.knots_[i] = b.knot(static_cast<int>(i));
  return b;
}

inline SplineBasis default_basis() { return make_uniform_basis(3, -1.0, 1.0, 5); }

// The degree + 1 basis functions that may be nonzero at x, starting at basis
// index `first` (which can be negative or run past count() near the ends;
// callers skip those slots).
struct LocalBasis {
  int first = 0;
  int active = 0;  // 0 when x lies outside the extended knot span
  std::array<double, kMaxSplineDegree + 1> value{};
  std::array<double, kMaxSplineDegree + 1> slope{};
};

namespace detail {

// Triangular Cox–de Boor evaluation of the p+1 polynomial pieces attached to
// knot interval `span`. When x lies outside that interval the same recurrence
// yields the polynomial continuation of the piece.
inline LocalBasis eval_span(const SplineBasis& basis, double x, int span) {
  const int p = basis.degree();
  LocalBasis out;
  out.first = span - p;
  out.active = p + 1;
  std::array<double, kMaxSplineDegree + 1> n{};
  std::array<double, kMaxSplineDegree + 1> lower{};
  std::array<double, kMaxSplineDegree + 2> left{};
  std::array<double, kMaxSplineDegree + 2> right{};
  n[0] = 1.0;
  if (p == 1) lower[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - basis.knot(span + 1 - j);
    right[j] = basis.knot(span + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
    if (j == p - 1) lower = n;
  }
  // Uniform spacing: B'_{i,p} = (B_{i,p-1} - B_{i+1,p-1}) / h.
  const double inv_h = 1.0 / basis.spacing();
  for (int r = 0; r <= p; ++r) {
    const double a = r >= 1 ? lower[r - 1] : 0.0;
    const double b = r <= p - 1 ? lower[r] : 0.0;
    out.value[r] = n[r];
    out.slope[r] = (a - b) * inv_h;
  }
  return out;
}

}  // namespace detail

inline LocalBasis eval_local(const SplineBasis& basis, double x) {
  const auto& k = basis.knots();
  if (!(x >= k.front() && x < k.back())) return LocalBasis{};
  const int last_span = static_cast<int>(k.size()) - 2;
  int span = static_cast<int>(std::floor((x - k.front()) / basis.spacing()));
  if (span > last_span) span = last_span;
  if (span < 0) span = 0;
  // Guard rounding in the floor against the stored knots.
  while (span < last_span && x >= k[static_cast<std::size_t>(span) + 1]) ++span;
  while (span > 0 && x < k[static_cast<std::size_t>(span)]) --span;
  return detail::eval_span(basis, x, span);
}

inline Vector eval_basis(const SplineBasis& basis, double x) {
  Vector out(basis.count(), 0.0);
  const LocalBasis local = eval_local(basis, x);
  for (int r = 0; r < local.active; ++r) {
    const int i = local.first + r;
    if (i >= 0 && i < static_cast<int>(out.size())) out[static_cast<std::size_t>(i)] = local.value[r];
  }
  return out;
}

inline Vector eval_basis_derivative(const SplineBasis& basis, double x) {
  Vector out(basis.count(), 0.0);
  const LocalBasis local = eval_local(basis, x);
  for (int r = 0; r < local.active; ++r) {
    const int i = local.first + r;
    if (i >= 0 && i < static_cast<int>(out.size())) out[static_cast<std::size_t>(i)] = local.slope[r];
  }
  return out;
}

// Σ c_i B_i(x) and its x-derivative.
struct CurveValue {
  double value = 0.0;
  double slope = 0.0;
};

inline CurveValue eval_curve(const SplineBasis& basis, std::span<const double> coeffs, double x) {
  const LocalBasis local = eval_local(basis, x);
  CurveValue out;
  const int n = static_cast<int>(coeffs.size());
  for (int r = 0; r < local.active; ++r) {
    const int i = local.first + r;
    if (i < 0 || i >= n) continue;
    out.value += coeffs[static_cast<std::size_t>(i)] * local.value[r];
    out.slope += coeffs[static_cast<std::size_t>(i)] * local.slope[r];
  }
  return out;
}

// Curve value on [lo, hi] and polynomial continuation of the boundary pieces
// outside it.
inline double eval_curve_continued(const SplineBasis& basis, std::span<const double> coeffs, double x) {
  if (x >= basis.domain_lo() && x <= basis.domain_hi()) return eval_curve(basis, coeffs, x).value;
  const int p = basis.degree();
  const int span = x < basis.domain_lo() ? p : p + basis.n_intervals() - 1;
  const LocalBasis local = detail::eval_span(basis, x, span);
  double v = 0.0;
  for (int r = 0; r <= p; ++r) v += coeffs[static_cast<std::size_t>(local.first + r)] * local.value[r];
  return v;
}

inline constexpr double kGridMarginFraction = 0.05;
inline constexpr std::size_t kGridRefitOversampling = 10;

// Re-spans the basis over [observed_lo - m, observed_hi + m] with
// m = 0.05 (observed_hi - observed_lo), keeping degree and interval count, and
// refits the coefficients by least squares against the old curve sampled on
// the new domain (boundary pieces continued polynomially where the new domain
// extends past the old one).
inline std::pair<SplineBasis, Vector> update_grid(const SplineBasis& basis, std::span<const double> coeffs,
                                                  double observed_lo, double observed_hi) {
  require(coeffs.size() == basis.count(), "dimension-mismatch", "update_grid: coefficient count mismatch");
  require(std::isfinite(observed_lo) && std::isfinite(observed_hi) && observed_hi - observed_lo >= 1e-9,
          "degenerate-range", "update_grid: observed range is degenerate");
  const double margin = kGridMarginFraction * (observed_hi - observed_lo);
  SplineBasis next =
      make_uniform_basis(basis.degree(), observed_lo - margin, observed_hi + margin, basis.n_intervals());

  const std::size_t n_cols = next.count();
  const std::size_t n_rows = kGridRefitOversampling * n_cols;
  Vector design(n_rows * n_cols, 0.0);
  Vector target(n_rows, 0.0);
  const double lo = next.domain_lo();
  const double step = (next.domain_hi() - lo) / static_cast<double>(n_rows - 1);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double x = r + 1 == n_rows ? next.domain_hi() : lo + step * static_cast<double>(r);
    const Vector row = eval_basis(next, x);
    std::copy(row.begin(), row.end(), design.begin() + static_cast<std::ptrdiff_t>(r * n_cols));
    target[r] = eval_curve_continued(basis, coeffs, x);
  }
  return {std::move(next), lstsq(design, n_cols, target).coefficients};
}

}  // namespace sskan
