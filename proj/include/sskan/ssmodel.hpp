#pragma once

// State-space models with KAN nonlinearities.
//
//   x(k+1) = A x(k) + B u(k) + KAN_f(x(k), u(k))
//   y(k)   = C x(k) + D u(k) + KAN_g(x(k), u(k))
//
// KAN inputs are the concatenation (x_1..x_nx, u_1..u_nu). Either network may
// be absent, which stands for the identically zero function.
//
// The Wiener–Hammerstein cascade chains a linear block, a scalar KAN and a
// second linear block:
//
//   x1(k+1) = A1 x1 + B1 u,   v = C1 x1 + D1 u,   w = KAN(v),
//   x2(k+1) = A2 x2 + B2 w,   y = C2 x2 + D2 w.
//
// Signals are stored as time-major matrices (row k = sample k).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sskan/error.hpp"
#include "sskan/kan.hpp"
#include "sskan/linalg.hpp"
#include "sskan/normalization.hpp"

namespace sskan {

using Signal = Matrix;

inline Signal column_signal(std::span<const double> v) {
  Signal s(v.size(), 1);
  std::copy(v.begin(), v.end(), s.values().begin());
  return s;
}

inline Vector signal_column(const Signal& s, std::size_t col = 0) {
  Vector v(s.rows());
  for (std::size_t k = 0; k < s.rows(); ++k) v[k] = s(k, col);
  return v;
}

struct LinearSS {
  Matrix A, B, C, D;

  LinearSS() = default;
  LinearSS(std::size_t n_x, std::size_t n_u, std::size_t n_y)
      : A(n_x, n_x), B(n_x, n_u), C(n_y, n_x), D(n_y, n_u) {}

  std::size_t n_x() const noexcept { return A.rows(); }
  std::size_t n_u() const noexcept { return B.cols(); }
  std::size_t n_y() const noexcept { return C.rows(); }

  void validate() const {
    require(A.cols() == n_x() && B.rows() == n_x() && C.cols() == n_x() && D.rows() == n_y() &&
                D.cols() == n_u(),
            "dimension-mismatch", "linear state-space matrices have inconsistent shapes");
  }

  std::size_t param_count() const noexcept { return A.size() + B.size() + C.size() + D.size(); }

  double frobenius_sq_sum() const { return frobenius_sq(A) + frobenius_sq(B) + frobenius_sq(C) + frobenius_sq(D); }

  friend bool operator==(const LinearSS&, const LinearSS&) = default;
};

struct SimulationResult {
  Signal y;  // T x n_y
  Signal x;  // T x n_x, state at the time each output was produced
  Vector final_state;
};

inline void check_finite_state(std::span<const double> x, std::size_t k) {
  for (double v : x)
    if (!std::isfinite(v)) fail("non-finite-state", "state became non-finite at time index " + std::to_string(k));
}

// Plain linear recursion, the reference against which SS-KAN models with
// absent or zero networks are compared.
inline SimulationResult simulate_linear(const LinearSS& sys, const Signal& u, std::span<const double> x0) {
  sys.validate();
  SimulationResult r{Signal(u.rows(), sys.n_y()), Signal(u.rows(), sys.n_x()), Vector(x0.begin(), x0.end())};
  Vector next(sys.n_x());
  for (std::size_t k = 0; k < u.rows(); ++k) {
    std::span<const double> uk(&u(k, 0), u.cols());
    std::copy(r.final_state.begin(), r.final_state.end(), &r.x(k, 0));
    std::span<double> yk(&r.y(k, 0), sys.n_y());
    gemv_acc(sys.C, r.final_state, yk);
    gemv_acc(sys.D, uk, yk);
    std::fill(next.begin(), next.end(), 0.0);
    gemv_acc(sys.A, r.final_state, next);
    gemv_acc(sys.B, uk, next);
    std::swap(r.final_state, next);
  }
  return r;
}

struct SsKanModel {
  LinearSS linear;
  std::optional<KanNetwork> kan_f;  // inputs n_x + n_u, outputs n_x
  std::optional<KanNetwork> kan_g;  // inputs n_x + n_u, outputs n_y
  Normalization normalization;

  std::size_t n_x() const noexcept { return linear.n_x(); }
  std::size_t n_u() const noexcept { return linear.n_u(); }
  std::size_t n_y() const noexcept { return linear.n_y(); }

  void validate() const {
    linear.validate();
    const std::size_t width = n_x() + n_u();
    if (kan_f)
      require(kan_f->n_in() == width && kan_f->n_out() == n_x(), "dimension-mismatch",
              "KAN_f must map n_x + n_u inputs to n_x outputs");
    if (kan_g)
      require(kan_g->n_in() == width && kan_g->n_out() == n_y(), "dimension-mismatch",
              "KAN_g must map n_x + n_u inputs to n_y outputs");
  }
};

struct StepResult {
  Vector x_next;
  Vector y;
};

inline Vector kan_input(std::span<const double> x, std::span<const double> u) {
  Vector z(x.begin(), x.end());
  z.insert(z.end(), u.begin(), u.end());
  return z;
}

inline StepResult step(const SsKanModel& model, std::span<const double> x, std::span<const double> u) {
  require(x.size() == model.n_x() && u.size() == model.n_u(), "dimension-mismatch",
          "step: state or input dimension mismatch");
  StepResult r{Vector(model.n_x(), 0.0), Vector(model.n_y(), 0.0)};
  gemv_acc(model.linear.A, x, r.x_next);
  gemv_acc(model.linear.B, u, r.x_next);
  gemv_acc(model.linear.C, x, r.y);
  gemv_acc(model.linear.D, u, r.y);
  if (model.kan_f || model.kan_g) {
    const Vector z = kan_input(x, u);
    if (model.kan_f) {
      const Vector f = network_forward(*model.kan_f, z);
      for (std::size_t i = 0; i < f.size(); ++i) r.x_next[i] += f[i];
    }
    if (model.kan_g) {
      const Vector g = network_forward(*model.kan_g, z);
      for (std::size_t i = 0; i < g.size(); ++i) r.y[i] += g[i];
    }
  }
  return r;
}

// Free-run simulation: measured outputs are never consulted.
inline SimulationResult rollout(const SsKanModel& model, const Signal& u, std::span<const double> x0) {
  model.validate();
  require(u.rows() >= 1, "empty-sequence", "rollout needs at least one sample");
  require(u.cols() == model.n_u() && x0.size() == model.n_x(), "dimension-mismatch",
          "rollout: input or initial-state dimension mismatch");
  SimulationResult r{Signal(u.rows(), model.n_y()), Signal(u.rows(), model.n_x()), Vector(x0.begin(), x0.end())};
  for (std::size_t k = 0; k < u.rows(); ++k) {
    std::copy(r.final_state.begin(), r.final_state.end(), &r.x(k, 0));
    StepResult s = step(model, r.final_state, std::span<const double>(&u(k, 0), u.cols()));
    std::copy(s.y.begin(), s.y.end(), &r.y(k, 0));
    check_finite_state(s.x_next, k);
    r.final_state = std::move(s.x_next);
  }
  return r;
}

struct LinearInit {
  enum class Kind { scaled_identity, oscillator };
  Kind kind = Kind::scaled_identity;
  double radius = 0.99;
  double perturbation = 1e-3;  // std of the N(0, .) added to A (scaled_identity)
  double angle = 0.1;          // rotation per sample of each 2x2 block (oscillator)
  double b_scale = 0.1;
  double c_scale = 0.1;
};

// Stable, weakly damped linear system close to an identity mapping. The
// spectral radius of A lies in [0.95, 0.999]; D = 0.
//
// `oscillator` builds A from rotation-scaled 2x2 blocks
// radius * [[cos t, sin t], [-sin t, cos t]] and orients B and C so that the
// input drives the second state of each block and the output reads the first
// (a position/velocity layout), with small random perturbations.
inline LinearSS init_stable_linear(std::size_t n_x, std::size_t n_u, std::size_t n_y, std::uint64_t seed,
                                   const LinearInit& opt = {}) {
  require(n_x > 0 && n_u > 0 && n_y > 0, "invalid-size", "state-space dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, opt.perturbation);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  LinearSS sys(n_x, n_u, n_y);
  if (opt.kind == LinearInit::Kind::scaled_identity) {
    for (std::size_t i = 0; i < n_x; ++i)
      for (std::size_t j = 0; j < n_x; ++j) sys.A(i, j) = (i == j ? opt.radius : 0.0) + noise(rng);
    for (double& v : sys.B.values()) v = opt.b_scale * unit(rng);
    for (double& v : sys.C.values()) v = opt.c_scale * unit(rng);
  } else {
    const double c = opt.radius * std::cos(opt.angle);
    const double s = opt.radius * std::sin(opt.angle);
    for (std::size_t i = 0; i + 1 < n_x; i += 2) {
      sys.A(i, i) = c;
      sys.A(i, i + 1) = s;
      sys.A(i + 1, i) = -s;
      sys.A(i + 1, i + 1) = c;
    }
    if (n_x % 2 == 1) sys.A(n_x - 1, n_x - 1) = opt.radius;
    for (std::size_t i = 0; i < n_x; ++i)
      for (std::size_t j = 0; j < n_u; ++j) {
        const bool driven = i % 2 == 1 || (n_x % 2 == 1 && i + 1 == n_x);
        sys.B(i, j) = (driven ? opt.b_scale : 0.0) + 0.1 * opt.b_scale * unit(rng);
      }
    for (std::size_t i = 0; i < n_y; ++i)
      for (std::size_t j = 0; j < n_x; ++j) sys.C(i, j) = (j % 2 == 0 ? opt.c_scale : 0.0) + 0.1 * opt.c_scale * unit(rng);
  }
  const double rho = spectral_radius(sys.A);
  if (rho < 0.95 || rho > 0.999) {
    const double target = std::clamp(opt.radius, 0.95, 0.999);
    for (double& v : sys.A.values()) v *= target / rho;
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Wiener–Hammerstein cascade.

// H(z) = (b0 + b1 z^-1 + ... + bn z^-n) / (a0 + a1 z^-1 + ... + an z^-n).
struct FilterSpec {
  Vector b;
  Vector a;

  friend bool operator==(const FilterSpec&, const FilterSpec&) = default;
};

inline constexpr std::size_t kCascadeOrder = 3;

// Controllable-canonical realization of a third-order filter. Shorter specs
// are zero-padded to order three.
inline LinearSS realize_filter(const FilterSpec& spec) {
  require(!spec.a.empty() && !spec.b.empty(), "order-mismatch", "filter spec needs numerator and denominator");
  require(spec.a.size() <= kCascadeOrder + 1 && spec.b.size() <= kCascadeOrder + 1, "order-mismatch",
          "filter spec order exceeds 3");
  require(spec.a[0] != 0.0, "invalid-config", "filter denominator a0 must be nonzero");
  Vector a(kCascadeOrder + 1, 0.0);
  Vector b(kCascadeOrder + 1, 0.0);
  for (std::size_t i = 0; i < spec.a.size(); ++i) a[i] = spec.a[i] / spec.a[0];
  for (std::size_t i = 0; i < spec.b.size(); ++i) b[i] = spec.b[i] / spec.a[0];
  LinearSS sys(kCascadeOrder, 1, 1);
  for (std::size_t j = 0; j < kCascadeOrder; ++j) sys.A(0, j) = -a[j + 1];
  for (std::size_t i = 1; i < kCascadeOrder; ++i) sys.A(i, i - 1) = 1.0;
  sys.B(0, 0) = 1.0;
  for (std::size_t j = 0; j < kCascadeOrder; ++j) sys.C(0, j) = b[j + 1] - b[0] * a[j + 1];
  sys.D(0, 0) = b[0];
  const double rho = spectral_radius(sys.A);
  require(rho < 1.0, "unstable-spec", "filter has a pole of magnitude " + std::to_string(rho) + " >= 1");
  return sys;
}

inline void validate_filter(const FilterSpec& spec) { (void)realize_filter(spec); }

struct CascadeModel {
  LinearSS front;
  KanNetwork mid_kan;  // 1 -> hidden -> 1
  LinearSS back;
  Normalization normalization;

  void validate() const {
    front.validate();
    back.validate();
    require(front.n_u() == 1 && front.n_y() == 1 && back.n_u() == 1 && back.n_y() == 1, "dimension-mismatch",
            "cascade blocks must be SISO");
    require(mid_kan.n_in() == 1 && mid_kan.n_out() == 1, "dimension-mismatch", "cascade KAN must be scalar");
  }
};

struct CascadeResult {
  Vector y, v, w;
  Vector x1_final, x2_final;
};

struct CascadeStep {
  Vector x1_next, x2_next;
  double v = 0.0, w = 0.0, y = 0.0;
};

inline CascadeStep cascade_step(const CascadeModel& m, std::span<const double> x1, std::span<const double> x2,
                                double u) {
  CascadeStep s{Vector(m.front.n_x(), 0.0), Vector(m.back.n_x(), 0.0)};
  const double uk[1] = {u};
  double v[1] = {0.0};
  gemv_acc(m.front.C, x1, v);
  gemv_acc(m.front.D, uk, v);
  gemv_acc(m.front.A, x1, s.x1_next);
  gemv_acc(m.front.B, uk, s.x1_next);
  s.v = v[0];
  s.w = network_forward(m.mid_kan, std::span<const double>(v, 1))[0];
  const double wk[1] = {s.w};
  double y[1] = {0.0};
  gemv_acc(m.back.C, x2, y);
  gemv_acc(m.back.D, wk, y);
  gemv_acc(m.back.A, x2, s.x2_next);
  gemv_acc(m.back.B, wk, s.x2_next);
  s.y = y[0];
  return s;
}

inline CascadeResult cascade_rollout(const CascadeModel& m, std::span<const double> u, std::span<const double> x1_0,
                                     std::span<const double> x2_0) {
  m.validate();
  require(!u.empty(), "empty-sequence", "cascade rollout needs at least one sample");
  require(x1_0.size() == m.front.n_x() && x2_0.size() == m.back.n_x(), "dimension-mismatch",
          "cascade rollout: initial state dimension mismatch");
  CascadeResult r{Vector(u.size()), Vector(u.size()), Vector(u.size()), Vector(x1_0.begin(), x1_0.end()),
                  Vector(x2_0.begin(), x2_0.end())};
  for (std::size_t k = 0; k < u.size(); ++k) {
    CascadeStep s = cascade_step(m, r.x1_final, r.x2_final, u[k]);
    r.v[k] = s.v;
    r.w[k] = s.w;
    r.y[k] = s.y;
    check_finite_state(s.x1_next, k);
    check_finite_state(s.x2_next, k);
    r.x1_final = std::move(s.x1_next);
    r.x2_final = std::move(s.x2_next);
  }
  return r;
}

// Scalar KAN (1 -> hidden -> 1) close to the identity on [lo, hi]: every
// first-layer edge is the identity spline, every second-layer edge scales by
// 1 / hidden, and small uniform noise breaks the symmetry between paths.
inline KanNetwork near_identity_kan(std::size_t hidden, const KanInit& init, std::mt19937_64& rng) {
  require(hidden > 0, "invalid-size", "hidden width must be positive");
  const SplineBasis basis = make_uniform_basis(init.degree, init.domain_lo, init.domain_hi, init.grid_intervals);
  const double bound = init.coeff_scale / std::sqrt(static_cast<double>(basis.count()));
  std::uniform_real_distribution<double> jitter(-bound, bound);
  const Vector ident = identity_coeffs(basis);
  KanEdge proto;
  proto.basis = basis;
  proto.w_b = 0.0;
  proto.w_s = 1.0;
  KanLayer first(1, hidden, proto);
  for (auto& e : first.edges()) {
    e.coeffs = ident;
    for (double& c : e.coeffs) c += jitter(rng);
  }
  KanLayer second(hidden, 1, proto);
  for (auto& e : second.edges()) {
    e.coeffs = ident;
    for (double& c : e.coeffs) c = c / static_cast<double>(hidden) + jitter(rng) / static_cast<double>(hidden);
  }
  std::vector<KanLayer> layers;
  layers.push_back(std::move(first));
  layers.push_back(std::move(second));
  return KanNetwork(std::move(layers));
}

inline CascadeModel init_cascade_from_filters(const FilterSpec& front, const FilterSpec& back, std::size_t hidden,
                                              const KanInit& init, std::uint64_t seed) {
  validate_filter(front);
  validate_filter(back);
  std::mt19937_64 rng(seed);
  return CascadeModel{realize_filter(front), near_identity_kan(hidden, init, rng), realize_filter(back), {}};
}

}  // namespace sskan
