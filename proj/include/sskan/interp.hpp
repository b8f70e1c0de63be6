#pragma once

// Interpretability analyses on trained KANs: univariate slices, polynomial
// fits of slices, term dominance, affine alignment against an oracle curve,
// and plot-data emission.

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sskan/error.hpp"
#include "sskan/kan.hpp"
#include "sskan/linalg.hpp"
#include "sskan/parallel.hpp"

namespace sskan {

struct PolyFit {
  std::size_t channel = 0;
  std::size_t degree = 0;
  Vector coefficients;  // ascending powers
  double residual_rms = 0.0;
};

struct AffineAlignment {
  double out_scale = 1.0;  // a in oracle(in_scale v + in_shift) ~ a learned(v) + b
  double out_shift = 0.0;  // b
  double in_scale = 1.0;
  double in_shift = 0.0;
  double aligned_max_error = 0.0;  // oracle output units
  double aligned_rms_error = 0.0;
  double oracle_range = 0.0;        // oracle output range over the mapped grid
  double relative_max_error = 0.0;  // aligned_max_error / oracle_range
  bool degenerate = false;
};

struct SliceReport {
  std::size_t varied_index = 0;
  std::string varied_name;
  Vector fixed_values;
  Vector grid;
  Matrix responses;  // grid.size() x n_out
  std::optional<PolyFit> fit;
  std::optional<AffineAlignment> oracle;
  // Named scalar diagnostics copied into the sidecar.
  std::vector<std::pair<std::string, double>> metrics;

  Vector channel(std::size_t c) const {
    Vector v(responses.rows());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = responses(i, c);
    return v;
  }
};

inline Vector linspace(double lo, double hi, std::size_t n) {
  require(n >= 2 && hi > lo, "invalid-size", "linspace needs n >= 2 and hi > lo");
  Vector g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  g.back() = hi;
  return g;
}

inline constexpr std::size_t kDefaultSlicePoints = 512;

inline SliceReport slice(const KanNetwork& net, std::size_t varied_index, std::span<const double> fixed_values,
                         std::span<const double> grid, std::string varied_name = {}) {
  require(varied_index < net.n_in(), "index-out-of-range",
          "varied index " + std::to_string(varied_index) + " is outside the " + std::to_string(net.n_in()) +
              " KAN inputs");
  require(fixed_values.size() == net.n_in(), "dimension-mismatch", "fixed values must cover every KAN input");
  require(!grid.empty(), "empty-report", "slice grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], "invalid-grid", "slice grid must be strictly increasing");
  SliceReport r;
  r.varied_index = varied_index;
  r.varied_name = varied_name.empty() ? "input_" + std::to_string(varied_index) : std::move(varied_name);
  r.fixed_values.assign(fixed_values.begin(), fixed_values.end());
  r.grid.assign(grid.begin(), grid.end());
  r.responses = Matrix(grid.size(), net.n_out());
  parallel_for(grid.size(), [&](std::size_t i) {
    Vector z = r.fixed_values;
    z[varied_index] = grid[i];
    const Vector out = network_forward(net, z);
    for (std::size_t c = 0; c < out.size(); ++c) r.responses(i, c) = out[c];
  });
  return r;
}

inline PolyFit polyfit(std::span<const double> x, std::span<const double> y, std::size_t degree) {
  require(x.size() == y.size(), "length-mismatch", "polyfit: x and y lengths differ");
  require(x.size() > degree, "rank-deficient", "polyfit needs more samples than the degree");
  const std::size_t cols = degree + 1;
  Vector design(x.size() * cols);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double p = 1.0;
    for (std::size_t j = 0; j < cols; ++j, p *= x[i]) design[i * cols + j] = p;
  }
  const LstsqResult ls = lstsq(design, cols, y);
  require(static_cast<std::size_t>(ls.rank) == cols, "rank-deficient", "polyfit: degenerate sample grid");
  PolyFit f;
  f.degree = degree;
  f.coefficients = ls.coefficients;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = 0.0;
    for (std::size_t j = cols; j-- > 0;) v = v * x[i] + f.coefficients[j];
    s += (v - y[i]) * (v - y[i]);
  }
  f.residual_rms = std::sqrt(s / static_cast<double>(x.size()));
  return f;
}

inline PolyFit polyfit(const SliceReport& report, std::size_t channel, std::size_t degree) {
  require(channel < report.responses.cols(), "index-out-of-range", "polyfit: channel out of range");
  PolyFit f = polyfit(report.grid, report.channel(channel), degree);
  f.channel = channel;
  return f;
}

inline double polyval(std::span<const double> coeffs, double x) {
  double v = 0.0;
  for (std::size_t j = coeffs.size(); j-- > 0;) v = v * x + coeffs[j];
  return v;
}

// Coefficients of q(z) = p(scale * z + shift), ascending powers.
inline Vector compose_affine(std::span<const double> coeffs, double scale, double shift) {
  Vector q(coeffs.size(), 0.0);
  Vector power{1.0};  // (scale z + shift)^k
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    for (std::size_t j = 0; j < power.size(); ++j) q[j] += coeffs[k] * power[j];
    Vector next(power.size() + 1, 0.0);
    for (std::size_t j = 0; j < power.size(); ++j) {
      next[j] += shift * power[j];
      next[j + 1] += scale * power[j];
    }
    power = std::move(next);
  }
  return q;
}

// share_j = |c_j| r^j / sum_i |c_i| r^i
inline Vector dominance(std::span<const double> coeffs, double half_width) {
  Vector w(coeffs.size());
  double total = 0.0;
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    w[j] = std::abs(coeffs[j]) * std::pow(half_width, static_cast<double>(j));
    total += w[j];
  }
  require(total > 0.0, "all-zero-coefficients", "dominance: coefficients are all zero");
  for (double& v : w) v /= total;
  return w;
}

namespace detail {

struct ProjectedFit {
  double a = 0.0;
  double b = 0.0;
  double sse = 0.0;
};

// Best (a, b) for target ~ a * source + b.
inline ProjectedFit project_affine(std::span<const double> source, std::span<const double> target) {
  const double n = static_cast<double>(source.size());
  double ms = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    ms += source[i];
    mt += target[i];
  }
  ms /= n;
  mt /= n;
  double sst = 0.0, sss = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    sst += (source[i] - ms) * (target[i] - mt);
    sss += (source[i] - ms) * (source[i] - ms);
  }
  ProjectedFit p;
  p.a = sss > 0.0 ? sst / sss : 0.0;
  p.b = mt - p.a * ms;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const double e = p.a * source[i] + p.b - target[i];
    p.sse += e * e;
  }
  return p;
}

struct AlignFunctor {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  std::span<const double> grid;
  std::span<const double> learned;
  const std::function<double(double)>* oracle;
  mutable Vector target;

  AlignFunctor(std::span<const double> g, std::span<const double> l, const std::function<double(double)>* o)
      : grid(g), learned(l), oracle(o), target(g.size()) {}

  int inputs() const { return 2; }
  int values() const { return static_cast<int>(grid.size()); }

  int operator()(const InputType& p, ValueType& r) const {
    for (std::size_t i = 0; i < grid.size(); ++i) target[i] = (*oracle)(p[0] * grid[i] + p[1]);
    const auto [lo, hi] = std::minmax_element(target.begin(), target.end());
    const double range = *hi - *lo;
    if (!(range > 1e-12)) {
      r.setConstant(1.0);
      return 0;
    }
    const ProjectedFit fit = project_affine(learned, target);
    for (std::size_t i = 0; i < grid.size(); ++i)
      r[static_cast<Eigen::Index>(i)] = (fit.a * learned[i] + fit.b - target[i]) / range;
    return 0;
  }
};

}  // namespace detail

inline double curve_range(std::span<const double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

struct InputMap {
  double scale = 1.0;
  double shift = 0.0;
};

// Least-squares input map with reference ~ scale * model + shift, e.g. from a
// model's intermediate signal and the oracle's hidden one over a record.
inline InputMap regress_input_map(std::span<const double> model, std::span<const double> reference) {
  require(model.size() == reference.size() && model.size() >= 2, "length-mismatch",
          "regress_input_map needs matching records of at least 2 samples");
  const detail::ProjectedFit fit = detail::project_affine(model, reference);
  require(fit.a != 0.0, "degenerate-range", "model signal is constant");
  return {fit.a, fit.b};
}

// Output-only alignment: the input map is held fixed and out_scale/out_shift
// are fitted by least squares.
inline AffineAlignment align_with_input_map(std::span<const double> grid, std::span<const double> learned,
                                            const std::function<double(double)>& oracle, InputMap map) {
  require(grid.size() == learned.size() && grid.size() >= 2, "length-mismatch",
          "align_with_input_map needs matching grids of at least 2 samples");
  AffineAlignment a;
  a.in_scale = map.scale;
  a.in_shift = map.shift;
  Vector target(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) target[i] = oracle(map.scale * grid[i] + map.shift);
  const detail::ProjectedFit fit = detail::project_affine(learned, target);
  a.out_scale = fit.a;
  a.out_shift = fit.b;
  double sse = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double e = fit.a * learned[i] + fit.b - target[i];
    a.aligned_max_error = std::max(a.aligned_max_error, std::abs(e));
    sse += e * e;
  }
  a.aligned_rms_error = std::sqrt(sse / static_cast<double>(grid.size()));
  a.oracle_range = curve_range(target);
  a.relative_max_error = a.oracle_range > 0.0 ? a.aligned_max_error / a.oracle_range : 0.0;
  a.degenerate = fit.a == 0.0;
  return a;
}

// Fits oracle(in_scale * v + in_shift) ~ out_scale * learned(v) + out_shift
// over the sample grid. The residual is measured relative to the oracle's
// output range over the mapped grid, so shrinking the input map onto a
// nearly flat piece of the oracle is not rewarded. `start` seeds the input
// map search, e.g. with a regression of a known intermediate signal.
inline AffineAlignment affine_align(std::span<const double> grid, std::span<const double> learned,
                                    const std::function<double(double)>& oracle,
                                    std::optional<InputMap> start = std::nullopt) {
  require(grid.size() == learned.size() && grid.size() >= 4, "length-mismatch",
          "affine_align needs matching grids of at least 4 samples");
  const auto [lo, hi] = std::minmax_element(learned.begin(), learned.end());
  if (!(*hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi)))) {
    AffineAlignment best;
    best.degenerate = true;
    for (std::size_t i = 0; i < grid.size(); ++i)
      best.aligned_max_error = std::max(best.aligned_max_error, std::abs(oracle(grid[i]) - learned[i]));
    return best;
  }
  const double span = grid.back() - grid.front();
  std::vector<InputMap> starts;
  if (start) starts.push_back(*start);
  for (double s0 : {1.0, 0.5, 2.0, 0.25, 4.0, -1.0, -0.5, -2.0})
    for (double t0 : {0.0, -0.25 * span, 0.25 * span}) starts.push_back({s0, t0});
  double best_sse = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_p(2);
  best_p << starts.front().scale, starts.front().shift;
  for (const InputMap& m : starts) {
    detail::AlignFunctor functor(grid, learned, &oracle);
    Eigen::NumericalDiff<detail::AlignFunctor> numdiff(functor);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::AlignFunctor>> lm(numdiff);
    Eigen::VectorXd p(2);
    p << m.scale, m.shift;
    lm.minimize(p);
    Eigen::VectorXd r(grid.size());
    functor(p, r);
    const double sse = r.squaredNorm();
    if (std::isfinite(sse) && sse < best_sse) {
      best_sse = sse;
      best_p = p;
    }
  }
  return align_with_input_map(grid, learned, oracle, {best_p[0], best_p[1]});
}

// Largest drop max_{i<j} (f_i - f_j) relative to the curve's range; a
// monotone non-decreasing curve gives 0.
inline double monotonicity_violation(std::span<const double> values) {
  require(!values.empty(), "empty-report", "monotonicity check on an empty curve");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return 0.0;
  double running_max = values[0];
  double worst = 0.0;
  for (double v : values) {
    running_max = std::max(running_max, v);
    worst = std::max(worst, running_max - v);
  }
  return worst / range;
}

// Recomputes the slice with every frozen input moved together across
// `settings` evenly spaced points from its min to its max and returns the
// largest pairwise sup-norm deviation between the mean-removed curves of
// `channel`, relative to the base slice's range.
inline double fixed_value_sweep(const KanNetwork& net, std::size_t varied_index, std::span<const double> mins,
                                std::span<const double> maxs, std::span<const double> grid, std::size_t channel,
                                std::size_t settings = 5) {
  require(mins.size() == net.n_in() && maxs.size() == net.n_in(), "dimension-mismatch",
          "sweep bounds must cover every KAN input");
  require(settings >= 2, "invalid-size", "sweep needs at least two settings");
  std::vector<Vector> curves;
  double range = 0.0;
  for (std::size_t s = 0; s < settings; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(settings - 1);
    Vector fixed(net.n_in());
    for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] = mins[i] + (maxs[i] - mins[i]) * t;
    Vector c = slice(net, varied_index, fixed, grid).channel(channel);
    range = std::max(range, curve_range(c));
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(c.size());
    for (double& v : c) v -= mean;
    curves.push_back(std::move(c));
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < curves.size(); ++a)
    for (std::size_t b = a + 1; b < curves.size(); ++b)
      for (std::size_t i = 0; i < grid.size(); ++i) worst = std::max(worst, std::abs(curves[a][i] - curves[b][i]));
  return range > 0.0 ? worst / range : 0.0;
}

// ---------------------------------------------------------------------------
// Plot data

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".json");
  return p;
}

// CSV columns: x, response_1..response_c, fit (empty when no fit). The JSON
// sidecar carries the fit coefficients, alignment and slice metadata.
inline void emit_plot_data(const SliceReport& report, const std::filesystem::path& path) {
  require(!report.grid.empty(), "empty-report", "refusing to write a slice with zero samples");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io-error", "cannot open " + path.string() + " for writing");
  out << "x";
  for (std::size_t c = 0; c < report.responses.cols(); ++c) out << ",response_" << c + 1;
  out << ",fit\n";
  char buf[64];
  for (std::size_t i = 0; i < report.grid.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", report.grid[i]);
    out << buf;
    for (std::size_t c = 0; c < report.responses.cols(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", report.responses(i, c));
      out << buf;
    }
    if (report.fit) {
      std::snprintf(buf, sizeof buf, ",%.17g", polyval(report.fit->coefficients, report.grid[i]));
      out << buf;
    } else {
      out << ",";
    }
    out << "\n";
  }
  require(out.good(), "io-error", "failed writing " + path.string());

  nlohmann::ordered_json meta;
  meta["varied_index"] = report.varied_index;
  meta["varied_name"] = report.varied_name;
  meta["fixed_values"] = report.fixed_values;
  meta["n_samples"] = report.grid.size();
  meta["grid_lo"] = report.grid.front();
  meta["grid_hi"] = report.grid.back();
  if (report.fit) {
    meta["fit"] = {{"channel", report.fit->channel},
                   {"degree", report.fit->degree},
                   {"coefficients_ascending", report.fit->coefficients},
                   {"residual_rms", report.fit->residual_rms}};
  }
  if (report.oracle) {
    const auto& o = *report.oracle;
    meta["oracle_alignment"] = {{"out_scale", o.out_scale},         {"out_shift", o.out_shift},
                                {"in_scale", o.in_scale},           {"in_shift", o.in_shift},
                                {"aligned_max_error", o.aligned_max_error},
                                {"aligned_rms_error", o.aligned_rms_error},
                                {"oracle_range", o.oracle_range},
                                {"relative_max_error", o.relative_max_error},
                                {"degenerate", o.degenerate}};
  }
  if (!report.metrics.empty()) {
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.metrics) m[k] = v;
    meta["metrics"] = m;
  }
  std::ofstream side(sidecar_path(path), std::ios::binary);
  require(side.good(), "io-error", "cannot open sidecar for " + path.string());
  side << meta.dump(2) << "\n";
}

// Time-domain simulation error: columns k, y_data, y_model, error.
inline void emit_time_series(std::span<const double> y_data, std::span<const double> y_model,
                             const std::filesystem::path& path) {
  require(y_data.size() == y_model.size(), "length-mismatch", "time series lengths differ");
  require(!y_data.empty(), "empty-report", "refusing to write an empty time series");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io-error", "cannot open " + path.string() + " for writing");
  out << "k,y_data,y_model,error\n";
  char buf[128];
  for (std::size_t k = 0; k < y_data.size(); ++k) {
    const int n = std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", k, y_data[k], y_model[k],
                                y_data[k] - y_model[k]);
    out.write(buf, n);
  }
  require(out.good(), "io-error", "failed writing " + path.string());
}

}  // namespace sskan
