#pragma once

// Kolmogorov–Arnold network layers. Each edge carries the learnable
// univariate function
//
//     phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)
//
// and each node sums its incoming edges. Networks are compositions of layers.
//
// Flat parameter order (used by packing, gradients and the L1 penalty):
// layer by layer, then output node j, then input node i, and per edge the
// spline coefficients followed by w_b and w_s.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "sskan/error.hpp"
#include "sskan/linalg.hpp"
#include "sskan/spline.hpp"

namespace sskan {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

struct KanEdge {
  SplineBasis basis = default_basis();
  Vector coeffs = Vector(basis.count(), 0.0);
  double w_b = 0.0;
  double w_s = 1.0;

  std::size_t param_count() const noexcept { return coeffs.size() + 2; }
};

inline double edge_forward(const KanEdge& edge, double x) {
  return edge.w_b * silu(x) + edge.w_s * eval_curve(edge.basis, edge.coeffs, x).value;
}

class KanLayer {
 public:
  KanLayer() = default;
  KanLayer(std::size_t n_in, std::size_t n_out, const KanEdge& prototype = KanEdge{})
      : n_in_(n_in), n_out_(n_out), edges_(n_in * n_out, prototype) {
    require(n_in > 0 && n_out > 0, "invalid-size", "KAN layer widths must be positive");
  }

  std::size_t n_in() const noexcept { return n_in_; }
  std::size_t n_out() const noexcept { return n_out_; }

  KanEdge& edge(std::size_t out, std::size_t in) { return edges_[out * n_in_ + in]; }
  const KanEdge& edge(std::size_t out, std::size_t in) const { return edges_[out * n_in_ + in]; }

  std::span<KanEdge> edges() noexcept { return edges_; }
  std::span<const KanEdge> edges() const noexcept { return edges_; }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : edges_) n += e.param_count();
    return n;
  }

 private:
  std::size_t n_in_ = 0;
  std::size_t n_out_ = 0;
  std::vector<KanEdge> edges_;
};

inline Vector layer_forward(const KanLayer& layer, std::span<const double> x) {
  require(x.size() == layer.n_in(), "dimension-mismatch", "layer_forward: input width mismatch");
  Vector out(layer.n_out(), 0.0);
  for (std::size_t j = 0; j < layer.n_out(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < layer.n_in(); ++i) acc += edge_forward(layer.edge(j, i), x[i]);
    out[j] = acc;
  }
  return out;
}

class KanNetwork {
 public:
  KanNetwork() = default;
  explicit KanNetwork(std::vector<KanLayer> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), "invalid-size", "KAN network needs at least one layer");
    for (std::size_t l = 1; l < layers_.size(); ++l)
      require(layers_[l - 1].n_out() == layers_[l].n_in(), "dimension-mismatch",
              "KAN layer widths do not chain");
  }

  std::size_t n_in() const noexcept { return layers_.empty() ? 0 : layers_.front().n_in(); }
  std::size_t n_out() const noexcept { return layers_.empty() ? 0 : layers_.back().n_out(); }
  std::size_t depth() const noexcept { return layers_.size(); }

  std::vector<KanLayer>& layers() noexcept { return layers_; }
  const std::vector<KanLayer>& layers() const noexcept { return layers_; }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    if (layers_.empty()) return w;
    w.push_back(n_in());
    for (const auto& l : layers_) w.push_back(l.n_out());
    return w;
  }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }

  template <typename Fn>
  void for_each_edge(Fn&& fn) {
    for (auto& l : layers_)
      for (auto& e : l.edges()) fn(e);
  }
  template <typename Fn>
  void for_each_edge(Fn&& fn) const {
    for (const auto& l : layers_)
      for (const auto& e : l.edges()) fn(e);
  }

 private:
  std::vector<KanLayer> layers_;
};

inline Vector network_forward(const KanNetwork& net, std::span<const double> x) {
  require(x.size() == net.n_in(), "dimension-mismatch", "network_forward: input width mismatch");
  Vector h(x.begin(), x.end());
  for (const auto& layer : net.layers()) h = layer_forward(layer, h);
  return h;
}

inline double l1_norm(const KanNetwork& net) {
  double s = 0.0;
  net.for_each_edge([&](const KanEdge& e) {
    for (double c : e.coeffs) s += std::abs(c);
    s += std::abs(e.w_b) + std::abs(e.w_s);
  });
  return s;
}

// Writes the flat parameter vector (see the order at the top of this file).
inline void write_params(const KanNetwork& net, std::span<double> out) {
  require(out.size() == net.param_count(), "length-mismatch", "KAN parameter span has wrong length");
  std::size_t k = 0;
  net.for_each_edge([&](const KanEdge& e) {
    for (double c : e.coeffs) out[k++] = c;
    out[k++] = e.w_b;
    out[k++] = e.w_s;
  });
}

inline void read_params(KanNetwork& net, std::span<const double> in) {
  require(in.size() == net.param_count(), "length-mismatch", "KAN parameter span has wrong length");
  std::size_t k = 0;
  net.for_each_edge([&](KanEdge& e) {
    for (double& c : e.coeffs) c = in[k++];
    e.w_b = in[k++];
    e.w_s = in[k++];
  });
}

// Per-edge (lo, hi) of the scalar each edge received over a batch, indexed
// [layer][out * n_in + in].
using EdgeRanges = std::vector<std::vector<std::pair<double, double>>>;

inline EdgeRanges observed_ranges(const KanNetwork& net, std::span<const Vector> batch) {
  require(!batch.empty(), "empty-batch", "observed_ranges: batch is empty");
  const auto inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<std::pair<double, double>>> per_input;
  for (const auto& l : net.layers()) per_input.emplace_back(l.n_in(), std::pair{inf, -inf});
  for (const auto& x : batch) {
    require(x.size() == net.n_in(), "dimension-mismatch", "observed_ranges: input width mismatch");
    Vector h = x;
    for (std::size_t l = 0; l < net.depth(); ++l) {
      for (std::size_t i = 0; i < h.size(); ++i) {
        auto& r = per_input[l][i];
        r.first = std::min(r.first, h[i]);
        r.second = std::max(r.second, h[i]);
      }
      if (l + 1 < net.depth()) h = layer_forward(net.layers()[l], h);
    }
  }
  EdgeRanges out;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& layer = net.layers()[l];
    auto& ranges = out.emplace_back(layer.n_in() * layer.n_out());
    for (std::size_t j = 0; j < layer.n_out(); ++j)
      for (std::size_t i = 0; i < layer.n_in(); ++i) ranges[j * layer.n_in() + i] = per_input[l][i];
  }
  return out;
}

// Re-spans every edge whose observed range is non-degenerate. Returns the
// number of edges updated.
inline std::size_t update_grids(KanNetwork& net, const EdgeRanges& ranges) {
  require(ranges.size() == net.depth(), "dimension-mismatch", "update_grids: layer count mismatch");
  std::size_t updated = 0;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    auto edges = net.layers()[l].edges();
    require(ranges[l].size() == edges.size(), "dimension-mismatch", "update_grids: edge count mismatch");
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [lo, hi] = ranges[l][e];
      if (!(hi - lo >= 1e-9)) continue;
      auto [basis, coeffs] = update_grid(edges[e].basis, edges[e].coeffs, lo, hi);
      edges[e].basis = std::move(basis);
      edges[e].coeffs = std::move(coeffs);
      ++updated;
    }
  }
  return updated;
}

struct KanInit {
  int degree = 3;
  int grid_intervals = 5;
  double domain_lo = -1.0;
  double domain_hi = 1.0;
  // c ~ U(-coeff_scale / sqrt(count), +coeff_scale / sqrt(count))
  double coeff_scale = 0.1;
  double w_b = 1.0;
  double w_s = 1.0;
  // Output-layer residual weight; the output layer's spline scale is w_s.
  double w_b_out = 1.0;
};

inline KanNetwork make_network(std::span<const std::size_t> widths, const KanInit& init, std::mt19937_64& rng) {
  require(widths.size() >= 2, "invalid-size", "KAN needs at least input and output widths");
  const SplineBasis basis = make_uniform_basis(init.degree, init.domain_lo, init.domain_hi, init.grid_intervals);
  const double bound = init.coeff_scale / std::sqrt(static_cast<double>(basis.count()));
  std::uniform_real_distribution<double> coeff(-bound, bound);
  std::vector<KanLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    KanEdge proto;
    proto.basis = basis;
    proto.coeffs.assign(basis.count(), 0.0);
    proto.w_b = l + 2 == widths.size() ? init.w_b_out : init.w_b;
    proto.w_s = init.w_s;
    KanLayer layer(widths[l], widths[l + 1], proto);
    for (auto& e : layer.edges())
      for (double& c : e.coeffs) c = coeff(rng);
    layers.push_back(std::move(layer));
  }
  return KanNetwork(std::move(layers));
}

// Spline coefficients whose curve is the identity on the basis domain
// (Greville abscissae; exact for degree >= 1).
inline Vector identity_coeffs(const SplineBasis& basis) {
  Vector c(basis.count());
  const int p = basis.degree();
  for (std::size_t i = 0; i < c.size(); ++i) {
    double s = 0.0;
    for (int k = 1; k <= p; ++k) s += basis.knot(static_cast<int>(i) + k);
    c[i] = s / p;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Traced evaluation for reverse-mode differentiation.

struct EdgeTrace {
  double x = 0.0;
  double silu = 0.0;
  double dsilu = 0.0;
  double spline = 0.0;
  double dspline = 0.0;
  LocalBasis local;
};

struct NetworkTape {
  std::vector<Vector> inputs;  // input of each layer
  Vector output;
  std::vector<std::vector<EdgeTrace>> edges;  // [layer][out * n_in + in]

  void shape_for(const KanNetwork& net) {
    inputs.resize(net.depth());
    edges.resize(net.depth());
    for (std::size_t l = 0; l < net.depth(); ++l) {
      inputs[l].assign(net.layers()[l].n_in(), 0.0);
      edges[l].resize(net.layers()[l].edges().size());
    }
    output.assign(net.n_out(), 0.0);
  }
};

// Same arithmetic (and summation order) as network_forward.
inline void forward_traced(const KanNetwork& net, std::span<const double> x, NetworkTape& tape) {
  if (tape.inputs.size() != net.depth()) tape.shape_for(net);
  std::copy(x.begin(), x.end(), tape.inputs[0].begin());
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& layer = net.layers()[l];
    const Vector& in = tape.inputs[l];
    Vector& out = l + 1 < net.depth() ? tape.inputs[l + 1] : tape.output;
    auto& traces = tape.edges[l];
    for (std::size_t j = 0; j < layer.n_out(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < layer.n_in(); ++i) {
        const KanEdge& e = layer.edge(j, i);
        EdgeTrace& t = traces[j * layer.n_in() + i];
        t.x = in[i];
        const double s = sigmoid(t.x);
        t.silu = t.x * s;
        t.dsilu = s * (1.0 + t.x * (1.0 - s));
        t.local = eval_local(e.basis, t.x);
        double v = 0.0;
        double dv = 0.0;
        const int n = static_cast<int>(e.coeffs.size());
        for (int r = 0; r < t.local.active; ++r) {
          const int idx = t.local.first + r;
          if (idx < 0 || idx >= n) continue;
          v += e.coeffs[static_cast<std::size_t>(idx)] * t.local.value[r];
          dv += e.coeffs[static_cast<std::size_t>(idx)] * t.local.slope[r];
        }
        t.spline = v;
        t.dspline = dv;
        acc += e.w_b * t.silu + e.w_s * v;
      }
      out[j] = acc;
    }
  }
}

// Accumulates d(loss)/d(params) into `grad` (flat network order) and writes
// d(loss)/d(input) into `dx`, given d(loss)/d(output) in `dout`.
// `scratch` holds per-layer adjoints and is resized as needed.
inline void backward_traced(const KanNetwork& net, const NetworkTape& tape, std::span<const double> dout,
                            std::span<double> grad, std::span<double> dx, std::vector<Vector>& scratch) {
  const std::size_t depth = net.depth();
  scratch.resize(depth + 1);
  scratch[depth].assign(dout.begin(), dout.end());
  std::vector<std::size_t> offsets(depth, 0);
  for (std::size_t l = 1; l < depth; ++l) offsets[l] = offsets[l - 1] + net.layers()[l - 1].param_count();

  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = net.layers()[l];
    const Vector& g_out = scratch[l + 1];
    Vector& g_in = scratch[l];
    g_in.assign(layer.n_in(), 0.0);
    std::size_t k = offsets[l];
    for (std::size_t j = 0; j < layer.n_out(); ++j) {
      const double g = g_out[j];
      for (std::size_t i = 0; i < layer.n_in(); ++i) {
        const KanEdge& e = layer.edge(j, i);
        const EdgeTrace& t = tape.edges[l][j * layer.n_in() + i];
        const int n = static_cast<int>(e.coeffs.size());
        for (int r = 0; r < t.local.active; ++r) {
          const int idx = t.local.first + r;
          if (idx < 0 || idx >= n) continue;
          grad[k + static_cast<std::size_t>(idx)] += g * e.w_s * t.local.value[r];
        }
        k += e.coeffs.size();
        grad[k++] += g * t.silu;
        grad[k++] += g * t.spline;
        g_in[i] += g * (e.w_b * t.dsilu + e.w_s * t.dspline);
      }
    }
  }
  std::copy(scratch[0].begin(), scratch[0].end(), dx.begin());
}

}  // namespace sskan
