#pragma once

// Exact gradients of the segment loss
//
//   L = (1/N) sum_k |y_hat(k) - y(k)|^2
//       + lambda_l2 * (|A|_F^2 + |B|_F^2 + |C|_F^2 + |D|_F^2)
//       + lambda_l1 * |theta_KAN|_1
//
// by reverse-mode differentiation through the free-run rollout of one
// segment. Gradients stop at the segment start (the initial state is an
// input, not a parameter). The L1 subgradient uses sign(0) = 0.
//
// Flat parameter order:
//   SsKanModel:   A, B, C, D (row-major), KAN_f, KAN_g
//   CascadeModel: A1, B1, C1, D1, A2, B2, C2, D2, mid KAN
// KAN blocks follow the edge order documented in kan.hpp.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sskan/error.hpp"
#include "sskan/kan.hpp"
#include "sskan/linalg.hpp"
#include "sskan/ssmodel.hpp"

namespace sskan {

enum class BlockKind { linear, kan };

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  BlockKind kind = BlockKind::linear;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  void add(std::string name, std::size_t size, BlockKind kind) {
    blocks.push_back({std::move(name), total, size, kind});
    total += size;
  }

  const ParamBlock& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    fail("unknown-block", "no parameter block named " + name);
  }
};

struct Penalty {
  double l1 = 0.0;
  double l2 = 0.0;
};

struct SegmentGradient {
  double loss = 0.0;
  double mse = 0.0;
  Vector grad;
  Vector final_state;
};

namespace detail {

inline void copy_out(const Matrix& m, std::span<double> out, std::size_t& k) {
  for (double v : m.values()) out[k++] = v;
}
inline void copy_in(Matrix& m, std::span<const double> in, std::size_t& k) {
  for (double& v : m.values()) v = in[k++];
}

inline void add_penalties(const ParamLayout& layout, std::span<const double> params, const Penalty& pen,
                          double& loss, std::span<double> grad) {
  double l2 = 0.0;
  double l1 = 0.0;
  for (const auto& b : layout.blocks) {
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      const double p = params[i];
      if (b.kind == BlockKind::linear) {
        l2 += p * p;
        grad[i] += 2.0 * pen.l2 * p;
      } else {
        l1 += std::abs(p);
        grad[i] += pen.l1 * (p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0));
      }
    }
  }
  loss += pen.l2 * l2 + pen.l1 * l1;
}

inline void check_finite_loss(double loss) {
  if (!std::isfinite(loss)) fail("non-finite-loss", "segment loss is not finite");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SsKanModel

inline ParamLayout param_layout(const SsKanModel& m) {
  ParamLayout l;
  l.add("A", m.linear.A.size(), BlockKind::linear);
  l.add("B", m.linear.B.size(), BlockKind::linear);
  l.add("C", m.linear.C.size(), BlockKind::linear);
  l.add("D", m.linear.D.size(), BlockKind::linear);
  if (m.kan_f) l.add("kan_f", m.kan_f->param_count(), BlockKind::kan);
  if (m.kan_g) l.add("kan_g", m.kan_g->param_count(), BlockKind::kan);
  return l;
}

inline Vector pack(const SsKanModel& m) {
  const ParamLayout layout = param_layout(m);
  Vector out(layout.total);
  std::size_t k = 0;
  detail::copy_out(m.linear.A, out, k);
  detail::copy_out(m.linear.B, out, k);
  detail::copy_out(m.linear.C, out, k);
  detail::copy_out(m.linear.D, out, k);
  if (m.kan_f) {
    write_params(*m.kan_f, std::span<double>(out).subspan(k, m.kan_f->param_count()));
    k += m.kan_f->param_count();
  }
  if (m.kan_g) write_params(*m.kan_g, std::span<double>(out).subspan(k, m.kan_g->param_count()));
  return out;
}

inline void unpack(SsKanModel& m, std::span<const double> params) {
  require(params.size() == param_layout(m).total, "length-mismatch",
          "parameter vector length does not match the model");
  std::size_t k = 0;
  detail::copy_in(m.linear.A, params, k);
  detail::copy_in(m.linear.B, params, k);
  detail::copy_in(m.linear.C, params, k);
  detail::copy_in(m.linear.D, params, k);
  if (m.kan_f) {
    read_params(*m.kan_f, params.subspan(k, m.kan_f->param_count()));
    k += m.kan_f->param_count();
  }
  if (m.kan_g) read_params(*m.kan_g, params.subspan(k, m.kan_g->param_count()));
}

inline std::size_t state_size(const SsKanModel& m) { return m.n_x(); }

inline SegmentGradient loss_and_gradient(const SsKanModel& m, const Signal& u, const Signal& y,
                                         std::span<const double> x0, const Penalty& pen) {
  m.validate();
  const std::size_t n = u.rows();
  require(n >= 1 && y.rows() == n, "length-mismatch", "segment input and output lengths differ or are empty");
  require(u.cols() == m.n_u() && y.cols() == m.n_y() && x0.size() == m.n_x(), "dimension-mismatch",
          "segment dimensions do not match the model");
  const std::size_t nx = m.n_x();
  const std::size_t nu = m.n_u();
  const std::size_t ny = m.n_y();
  const ParamLayout layout = param_layout(m);

  // Forward pass with traces.
  Matrix xs(n + 1, nx);
  std::copy(x0.begin(), x0.end(), &xs(0, 0));
  Matrix resid(n, ny);
  std::vector<NetworkTape> tape_f(m.kan_f ? n : 0);
  std::vector<NetworkTape> tape_g(m.kan_g ? n : 0);
  Vector z(nx + nu);
  double sse = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::span<const double> xk(&xs(k, 0), nx);
    std::span<const double> uk(&u(k, 0), nu);
    std::span<double> xn(&xs(k + 1, 0), nx);
    Vector yk(ny, 0.0);
    gemv_acc(m.linear.A, xk, xn);
    gemv_acc(m.linear.B, uk, xn);
    gemv_acc(m.linear.C, xk, yk);
    gemv_acc(m.linear.D, uk, yk);
    if (m.kan_f || m.kan_g) {
      std::copy(xk.begin(), xk.end(), z.begin());
      std::copy(uk.begin(), uk.end(), z.begin() + static_cast<std::ptrdiff_t>(nx));
    }
    if (m.kan_f) {
      forward_traced(*m.kan_f, z, tape_f[k]);
      for (std::size_t i = 0; i < nx; ++i) xn[i] += tape_f[k].output[i];
    }
    if (m.kan_g) {
      forward_traced(*m.kan_g, z, tape_g[k]);
      for (std::size_t i = 0; i < ny; ++i) yk[i] += tape_g[k].output[i];
    }
    for (std::size_t i = 0; i < ny; ++i) {
      const double e = yk[i] - y(k, i);
      resid(k, i) = e;
      sse += e * e;
    }
  }

  SegmentGradient out;
  out.mse = sse / static_cast<double>(n);
  out.loss = out.mse;
  out.grad.assign(layout.total, 0.0);
  out.final_state.assign(&xs(n, 0), &xs(n, 0) + nx);

  // Reverse pass. Gradient views into the flat vector.
  std::span<double> g(out.grad);
  auto mat_grad = [&](const char* name, std::size_t rows, std::size_t cols) {
    const auto& b = layout.block(name);
    (void)rows;
    (void)cols;
    return g.subspan(b.offset, b.size);
  };
  auto gA = mat_grad("A", nx, nx);
  auto gB = mat_grad("B", nx, nu);
  auto gC = mat_grad("C", ny, nx);
  auto gD = mat_grad("D", ny, nu);
  std::span<double> gf = m.kan_f ? g.subspan(layout.block("kan_f").offset, m.kan_f->param_count()) : std::span<double>{};
  std::span<double> gg = m.kan_g ? g.subspan(layout.block("kan_g").offset, m.kan_g->param_count()) : std::span<double>{};

  const double scale = 2.0 / static_cast<double>(n);
  Vector lam_next(nx, 0.0);  // dL/dx(k+1)
  Vector lam(nx, 0.0);
  Vector dy(ny);
  Vector dz(nx + nu);
  std::vector<Vector> scratch;
  for (std::size_t k = n; k-- > 0;) {
    std::span<const double> xk(&xs(k, 0), nx);
    std::span<const double> uk(&u(k, 0), nu);
    for (std::size_t i = 0; i < ny; ++i) dy[i] = scale * resid(k, i);

    for (std::size_t r = 0; r < nx; ++r)
      for (std::size_t c = 0; c < nx; ++c) gA[r * nx + c] += lam_next[r] * xk[c];
    for (std::size_t r = 0; r < nx; ++r)
      for (std::size_t c = 0; c < nu; ++c) gB[r * nu + c] += lam_next[r] * uk[c];
    for (std::size_t r = 0; r < ny; ++r)
      for (std::size_t c = 0; c < nx; ++c) gC[r * nx + c] += dy[r] * xk[c];
    for (std::size_t r = 0; r < ny; ++r)
      for (std::size_t c = 0; c < nu; ++c) gD[r * nu + c] += dy[r] * uk[c];

    std::fill(lam.begin(), lam.end(), 0.0);
    gemv_t_acc(m.linear.A, lam_next, lam);
    gemv_t_acc(m.linear.C, dy, lam);
    if (m.kan_f) {
      backward_traced(*m.kan_f, tape_f[k], lam_next, gf, dz, scratch);
      for (std::size_t i = 0; i < nx; ++i) lam[i] += dz[i];
    }
    if (m.kan_g) {
      backward_traced(*m.kan_g, tape_g[k], dy, gg, dz, scratch);
      for (std::size_t i = 0; i < nx; ++i) lam[i] += dz[i];
    }
    std::swap(lam, lam_next);
  }

  detail::add_penalties(layout, pack(m), pen, out.loss, out.grad);
  detail::check_finite_loss(out.loss);
  return out;
}

inline Signal simulate_output(const SsKanModel& m, const Signal& u, std::span<const double> x0,
                              Vector* final_state = nullptr) {
  SimulationResult r = rollout(m, u, x0);
  if (final_state) *final_state = std::move(r.final_state);
  return std::move(r.y);
}

// Activations seen by each KAN over a free run, then grid updates on every
// edge. Returns the number of edges re-spanned.
inline std::size_t update_model_grids(SsKanModel& m, const Signal& u, std::span<const double> x0) {
  if (!m.kan_f && !m.kan_g) return 0;
  const SimulationResult r = rollout(m, u, x0);
  std::vector<Vector> batch;
  batch.reserve(u.rows());
  for (std::size_t k = 0; k < u.rows(); ++k)
    batch.push_back(kan_input(std::span<const double>(&r.x(k, 0), m.n_x()),
                              std::span<const double>(&u(k, 0), m.n_u())));
  std::size_t updated = 0;
  if (m.kan_f) updated += update_grids(*m.kan_f, observed_ranges(*m.kan_f, batch));
  if (m.kan_g) updated += update_grids(*m.kan_g, observed_ranges(*m.kan_g, batch));
  return updated;
}

inline double kan_l1(const SsKanModel& m) {
  return (m.kan_f ? l1_norm(*m.kan_f) : 0.0) + (m.kan_g ? l1_norm(*m.kan_g) : 0.0);
}

inline double linear_frobenius(const SsKanModel& m) { return m.linear.frobenius_sq_sum(); }

// ---------------------------------------------------------------------------
// CascadeModel. The state is the concatenation (x1, x2).

inline ParamLayout param_layout(const CascadeModel& m) {
  ParamLayout l;
  l.add("A1", m.front.A.size(), BlockKind::linear);
  l.add("B1", m.front.B.size(), BlockKind::linear);
  l.add("C1", m.front.C.size(), BlockKind::linear);
  l.add("D1", m.front.D.size(), BlockKind::linear);
  l.add("A2", m.back.A.size(), BlockKind::linear);
  l.add("B2", m.back.B.size(), BlockKind::linear);
  l.add("C2", m.back.C.size(), BlockKind::linear);
  l.add("D2", m.back.D.size(), BlockKind::linear);
  l.add("kan", m.mid_kan.param_count(), BlockKind::kan);
  return l;
}

inline Vector pack(const CascadeModel& m) {
  Vector out(param_layout(m).total);
  std::size_t k = 0;
  for (const LinearSS* s : {&m.front, &m.back}) {
    detail::copy_out(s->A, out, k);
    detail::copy_out(s->B, out, k);
    detail::copy_out(s->C, out, k);
    detail::copy_out(s->D, out, k);
  }
  write_params(m.mid_kan, std::span<double>(out).subspan(k));
  return out;
}

inline void unpack(CascadeModel& m, std::span<const double> params) {
  require(params.size() == param_layout(m).total, "length-mismatch",
          "parameter vector length does not match the model");
  std::size_t k = 0;
  for (LinearSS* s : {&m.front, &m.back}) {
    detail::copy_in(s->A, params, k);
    detail::copy_in(s->B, params, k);
    detail::copy_in(s->C, params, k);
    detail::copy_in(s->D, params, k);
  }
  read_params(m.mid_kan, params.subspan(k));
}

inline std::size_t state_size(const CascadeModel& m) { return m.front.n_x() + m.back.n_x(); }

inline SegmentGradient loss_and_gradient(const CascadeModel& m, const Signal& u, const Signal& y,
                                         std::span<const double> x0, const Penalty& pen) {
  m.validate();
  const std::size_t n = u.rows();
  require(n >= 1 && y.rows() == n, "length-mismatch", "segment input and output lengths differ or are empty");
  require(u.cols() == 1 && y.cols() == 1 && x0.size() == state_size(m), "dimension-mismatch",
          "segment dimensions do not match the cascade");
  const std::size_t n1 = m.front.n_x();
  const std::size_t n2 = m.back.n_x();
  const ParamLayout layout = param_layout(m);

  Matrix x1(n + 1, n1);
  Matrix x2(n + 1, n2);
  std::copy(x0.begin(), x0.begin() + static_cast<std::ptrdiff_t>(n1), &x1(0, 0));
  std::copy(x0.begin() + static_cast<std::ptrdiff_t>(n1), x0.end(), &x2(0, 0));
  Vector v(n), w(n), resid(n);
  std::vector<NetworkTape> tapes(n);
  double sse = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::span<const double> x1k(&x1(k, 0), n1);
    std::span<const double> x2k(&x2(k, 0), n2);
    const double uk[1] = {u(k, 0)};
    double vk[1] = {0.0};
    gemv_acc(m.front.C, x1k, vk);
    gemv_acc(m.front.D, uk, vk);
    gemv_acc(m.front.A, x1k, std::span<double>(&x1(k + 1, 0), n1));
    gemv_acc(m.front.B, uk, std::span<double>(&x1(k + 1, 0), n1));
    v[k] = vk[0];
    forward_traced(m.mid_kan, std::span<const double>(vk, 1), tapes[k]);
    w[k] = tapes[k].output[0];
    const double wk[1] = {w[k]};
    double yk[1] = {0.0};
    gemv_acc(m.back.C, x2k, yk);
    gemv_acc(m.back.D, wk, yk);
    gemv_acc(m.back.A, x2k, std::span<double>(&x2(k + 1, 0), n2));
    gemv_acc(m.back.B, wk, std::span<double>(&x2(k + 1, 0), n2));
    resid[k] = yk[0] - y(k, 0);
    sse += resid[k] * resid[k];
  }

  SegmentGradient out;
  out.mse = sse / static_cast<double>(n);
  out.loss = out.mse;
  out.grad.assign(layout.total, 0.0);
  out.final_state.assign(&x1(n, 0), &x1(n, 0) + n1);
  out.final_state.insert(out.final_state.end(), &x2(n, 0), &x2(n, 0) + n2);

  std::span<double> g(out.grad);
  auto blk = [&](const char* name) { return g.subspan(layout.block(name).offset, layout.block(name).size); };
  auto gA1 = blk("A1"), gB1 = blk("B1"), gC1 = blk("C1"), gD1 = blk("D1");
  auto gA2 = blk("A2"), gB2 = blk("B2"), gC2 = blk("C2"), gD2 = blk("D2");
  auto gk = blk("kan");

  const double scale = 2.0 / static_cast<double>(n);
  Vector mu1_next(n1, 0.0), mu1(n1);
  Vector mu2_next(n2, 0.0), mu2(n2);
  std::vector<Vector> scratch;
  double dv[1];
  for (std::size_t k = n; k-- > 0;) {
    std::span<const double> x1k(&x1(k, 0), n1);
    std::span<const double> x2k(&x2(k, 0), n2);
    const double dy = scale * resid[k];

    for (std::size_t r = 0; r < n2; ++r) {
      for (std::size_t c = 0; c < n2; ++c) gA2[r * n2 + c] += mu2_next[r] * x2k[c];
      gB2[r] += mu2_next[r] * w[k];
    }
    for (std::size_t c = 0; c < n2; ++c) gC2[c] += dy * x2k[c];
    gD2[0] += dy * w[k];

    double dw = m.back.D(0, 0) * dy;
    for (std::size_t r = 0; r < n2; ++r) dw += m.back.B(r, 0) * mu2_next[r];
    std::fill(mu2.begin(), mu2.end(), 0.0);
    gemv_t_acc(m.back.A, mu2_next, mu2);
    for (std::size_t c = 0; c < n2; ++c) mu2[c] += m.back.C(0, c) * dy;

    const double dw_arr[1] = {dw};
    backward_traced(m.mid_kan, tapes[k], dw_arr, gk, dv, scratch);

    for (std::size_t r = 0; r < n1; ++r) {
      for (std::size_t c = 0; c < n1; ++c) gA1[r * n1 + c] += mu1_next[r] * x1k[c];
      gB1[r] += mu1_next[r] * u(k, 0);
    }
    for (std::size_t c = 0; c < n1; ++c) gC1[c] += dv[0] * x1k[c];
    gD1[0] += dv[0] * u(k, 0);

    std::fill(mu1.begin(), mu1.end(), 0.0);
    gemv_t_acc(m.front.A, mu1_next, mu1);
    for (std::size_t c = 0; c < n1; ++c) mu1[c] += m.front.C(0, c) * dv[0];
    std::swap(mu1, mu1_next);
    std::swap(mu2, mu2_next);
  }

  detail::add_penalties(layout, pack(m), pen, out.loss, out.grad);
  detail::check_finite_loss(out.loss);
  return out;
}

inline Signal simulate_output(const CascadeModel& m, const Signal& u, std::span<const double> x0,
                              Vector* final_state = nullptr) {
  const std::size_t n1 = m.front.n_x();
  require(u.cols() == 1, "dimension-mismatch", "cascade input must be scalar");
  const CascadeResult r = cascade_rollout(m, u.values(), x0.subspan(0, n1), x0.subspan(n1));
  if (final_state) {
    *final_state = r.x1_final;
    final_state->insert(final_state->end(), r.x2_final.begin(), r.x2_final.end());
  }
  return column_signal(r.y);
}

inline std::size_t update_model_grids(CascadeModel& m, const Signal& u, std::span<const double> x0) {
  const std::size_t n1 = m.front.n_x();
  const CascadeResult r = cascade_rollout(m, u.values(), x0.subspan(0, n1), x0.subspan(n1));
  std::vector<Vector> batch;
  batch.reserve(r.v.size());
  for (double v : r.v) batch.push_back(Vector{v});
  return update_grids(m.mid_kan, observed_ranges(m.mid_kan, batch));
}

inline double kan_l1(const CascadeModel& m) { return l1_norm(m.mid_kan); }

inline double linear_frobenius(const CascadeModel& m) {
  return m.front.frobenius_sq_sum() + m.back.frobenius_sq_sum();
}

}  // namespace sskan
