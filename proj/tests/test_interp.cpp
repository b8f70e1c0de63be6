#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sskan/datagen.hpp"
#include "sskan/interp.hpp"

using namespace sskan;

namespace {

template <typename Fn>
void expect_error(Fn&& fn, const std::string& code) {
  try {
    fn();
    FAIL() << "expected " << code;
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

// 3 -> 1 network where only the edge from input 0 is active.
KanNetwork single_active_input() {
  std::mt19937_64 rng(11);
  KanNetwork net = oracle::random_network({3, 1}, rng, 0.5);
  KanLayer layer = net.layers()[0];
  for (std::size_t i = 1; i < 3; ++i) {
    KanEdge& e = layer.edge(0, i);
    std::fill(e.coeffs.begin(), e.coeffs.end(), 0.0);
    e.w_b = 0.0;
    e.w_s = 0.0;
  }
  return KanNetwork({layer});
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& p, std::string& header) {
  std::ifstream in(p);
  std::getline(in, header);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell.empty() ? std::nan("") : std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST(Slice, ZeroNetworkIsZero) {
  const KanNetwork net({KanLayer(3, 2, KanEdge{default_basis(), Vector(8, 0.0), 0.0, 0.0})});
  const Vector grid = linspace(-1.0, 1.0, 64);
  const SliceReport r = slice(net, 1, Vector{0.3, 0.0, -0.2}, grid);
  for (double v : r.responses.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.responses.rows(), 64u);
  EXPECT_EQ(r.responses.cols(), 2u);
}

TEST(Slice, SingleEdgeMatchesEdgeOracle) {
  std::mt19937_64 rng(2);
  const KanNetwork net = oracle::random_network({1, 1}, rng);
  const Vector grid = linspace(-1.2, 1.3, 101);
  const SliceReport r = slice(net, 0, Vector{0.0}, grid);
  for (std::size_t i = 0; i < grid.size(); ++i)
    EXPECT_NEAR(r.responses(i, 0), oracle::edge(net.layers()[0].edge(0, 0), grid[i]), 1e-12);
}

TEST(Slice, MatchesNetworkOracleWithFixedInputs) {
  std::mt19937_64 rng(3);
  const KanNetwork net = oracle::random_network({3, 2, 2}, rng);
  const Vector fixed{0.1, -0.4, 0.7};
  const Vector grid = linspace(-1.0, 1.0, 33);
  const SliceReport r = slice(net, 2, fixed, grid, "u");
  EXPECT_EQ(r.varied_name, "u");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::vector<double> ref = oracle::network(net, {0.1, -0.4, grid[i]});
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(r.responses(i, c), ref[c], 1e-12);
  }
}

TEST(Slice, Errors) {
  std::mt19937_64 rng(4);
  const KanNetwork net = oracle::random_network({3, 2}, rng);
  const Vector grid = linspace(-1.0, 1.0, 8);
  expect_error([&] { slice(net, 3, Vector(3, 0.0), grid); }, "index-out-of-range");
  expect_error([&] { slice(net, 0, Vector(2, 0.0), grid); }, "dimension-mismatch");
  expect_error([&] { slice(net, 0, Vector(3, 0.0), Vector{0.0, 0.5, 0.2}); }, "invalid-grid");
}

TEST(Slice, SingleActiveInputIgnoresFixedValues) {
  const KanNetwork net = single_active_input();
  const Vector grid = linspace(-1.0, 1.0, 50);
  const SliceReport a = slice(net, 0, Vector{0.0, -0.9, 0.9}, grid);
  const SliceReport b = slice(net, 0, Vector{0.0, 0.4, -0.3}, grid);
  EXPECT_EQ(a.responses, b.responses);
  const Vector lo{-1.0, -1.0, -1.0}, hi{1.0, 1.0, 1.0};
  EXPECT_EQ(fixed_value_sweep(net, 0, lo, hi, grid, 0), 0.0);
}

TEST(Slice, SweepDetectsInteraction) {
  // Two layers couple the inputs, so moving the frozen ones changes the shape.
  std::mt19937_64 rng(5);
  const KanNetwork net = oracle::random_network({2, 2, 1}, rng, 0.8);
  const Vector grid = linspace(-1.0, 1.0, 64);
  EXPECT_GT(fixed_value_sweep(net, 0, Vector{-1.0, -1.0}, Vector{1.0, 1.0}, grid, 0), 1e-3);
}

TEST(Polyfit, ExactCubic) {
  const Vector x = linspace(-1.0, 1.0, 200);
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2 * x[i] * x[i] * x[i] - x[i];
  const PolyFit f = polyfit(x, y, 3);
  const Vector expect{0.0, -1.0, 0.0, 2.0};
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(f.coefficients[j], expect[j], 1e-10);
  EXPECT_LT(f.residual_rms, 1e-12);
}

TEST(Polyfit, Constant) {
  const Vector x = linspace(-2.0, 3.0, 20);
  const PolyFit f = polyfit(x, Vector(20, 4.25), 3);
  EXPECT_NEAR(f.coefficients[0], 4.25, 1e-12);
  for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(f.coefficients[j], 0.0, 1e-12);
}

TEST(Polyfit, NoisyCubicWithinSamplingSpread) {
  const std::size_t n = 100, trials = 400;
  const double sigma = 0.05;
  const Vector truth{0.3, -0.8, 0.2, 1.5};
  const Vector x = linspace(-1.0, 1.0, n);
  Eigen::MatrixXd X(n, 4);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) X(static_cast<Eigen::Index>(i), j) = std::pow(x[i], j);
  const Eigen::MatrixXd cov = sigma * sigma * (X.transpose() * X).inverse();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, sigma);
  Vector mean(4, 0.0), sq(4, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = polyval(truth, x[i]) + noise(rng);
    const PolyFit f = polyfit(x, y, 3);
    for (std::size_t j = 0; j < 4; ++j) {
      mean[j] += f.coefficients[j] / trials;
      sq[j] += (f.coefficients[j] - truth[j]) * (f.coefficients[j] - truth[j]) / trials;
    }
  }
  for (std::size_t j = 0; j < 4; ++j) {
    const double sd = std::sqrt(cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
    EXPECT_LT(std::abs(mean[j] - truth[j]), 3.0 * sd / std::sqrt(static_cast<double>(trials))) << j;
    EXPECT_NEAR(std::sqrt(sq[j]) / sd, 1.0, 0.15) << j;
  }
}

TEST(Polyfit, Idempotent) {
  std::mt19937_64 rng(7);
  const Vector x = linspace(-1.0, 1.0, 64);
  Vector y = signal_column(oracle::random_signal(64, 1, rng));
  const PolyFit f = polyfit(x, y, 3);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = polyval(f.coefficients, x[i]);
  const PolyFit g = polyfit(x, y, 3);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g.coefficients[j], f.coefficients[j], 1e-10);
}

TEST(Polyfit, Errors) {
  expect_error([] { polyfit(Vector{0.0, 1.0, 2.0}, Vector{1.0, 2.0, 3.0}, 3); }, "rank-deficient");
  expect_error([] { polyfit(Vector(10, 0.5), Vector(10, 1.0), 2); }, "rank-deficient");
  expect_error([] { polyfit(Vector{0.0, 1.0}, Vector{1.0}, 0); }, "length-mismatch");
}

TEST(Polyfit, SliceChannel) {
  std::mt19937_64 rng(8);
  const KanNetwork net = oracle::random_network({2, 2}, rng);
  const SliceReport r = slice(net, 0, Vector{0.0, 0.2}, linspace(-1.0, 1.0, 40));
  const PolyFit f = polyfit(r, 1, 2);
  EXPECT_EQ(f.channel, 1u);
  const PolyFit g = polyfit(r.grid, r.channel(1), 2);
  EXPECT_EQ(f.coefficients, g.coefficients);
  expect_error([&] { polyfit(r, 2, 2); }, "index-out-of-range");
}

TEST(ComposeAffine, MatchesEvaluation) {
  const Vector p{0.4, -1.0, 2.5, 0.7};
  const Vector q = compose_affine(p, 1.7, -0.3);
  for (double z : {-2.0, -0.5, 0.0, 0.33, 1.9}) EXPECT_NEAR(polyval(q, z), polyval(p, 1.7 * z - 0.3), 1e-12);
}

TEST(Dominance, Examples) {
  const Vector a = dominance(Vector{0.0, 0.0, 0.0, 1.0}, 1.0);
  EXPECT_EQ(a, (Vector{0.0, 0.0, 0.0, 1.0}));
  const Vector b = dominance(Vector{1.0, 1.0, 0.0, 0.0}, 1.0);
  EXPECT_EQ(b, (Vector{0.5, 0.5, 0.0, 0.0}));
  const Vector c = dominance(Vector{-0.115, -24.6, 12.8, -996.0}, 1.0);
  EXPECT_NEAR(c[3], 996.0 / (0.115 + 24.6 + 12.8 + 996.0), 1e-15);
  EXPECT_NEAR(c[3], 0.964, 5e-4);
  const Vector d = dominance(Vector{1.0, 1.0, 1.0, 1.0}, 0.5);
  EXPECT_NEAR(d[0], 1.0 / 1.875, 1e-15);
  EXPECT_NEAR(d[3], 0.125 / 1.875, 1e-15);
  expect_error([] { dominance(Vector(4, 0.0), 1.0); }, "all-zero-coefficients");
}

TEST(Dominance, SharesSumToOne) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-5.0, 5.0);
  for (int t = 0; t < 50; ++t) {
    Vector c(5);
    for (double& v : c) v = d(rng);
    double s = 0.0;
    for (double v : dominance(c, 0.3 + std::abs(d(rng)))) s += v;
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(AffineAlign, ExactAffineRelation) {
  const DiodeParams diode;
  const std::function<double(double)> f = [&](double v) { return diode(v); };
  const Vector grid = linspace(-1.5, 2.0, 200);
  Vector learned(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) learned[i] = 2.0 * f(grid[i]) + 1.0;
  const AffineAlignment a = affine_align(grid, learned, f);
  EXPECT_LT(a.aligned_max_error, 1e-8);
  EXPECT_NEAR(a.out_scale, 0.5, 1e-8);
  EXPECT_NEAR(a.out_shift, -0.5, 1e-8);
  EXPECT_FALSE(a.degenerate);
}

TEST(AffineAlign, IdentityRecovered) {
  const std::function<double(double)> f = [](double v) { return std::tanh(v) + 0.1 * v; };
  const Vector grid = linspace(-2.0, 2.0, 150);
  Vector learned(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) learned[i] = f(grid[i]);
  const AffineAlignment a = affine_align(grid, learned, f);
  EXPECT_NEAR(a.in_scale, 1.0, 1e-6);
  EXPECT_NEAR(a.in_shift, 0.0, 1e-6);
  EXPECT_NEAR(a.out_scale, 1.0, 1e-6);
  EXPECT_NEAR(a.out_shift, 0.0, 1e-6);
  EXPECT_LT(a.aligned_max_error, 1e-8);
}

TEST(AffineAlign, InputScaleRecovered) {
  const DiodeParams diode;
  const std::function<double(double)> f = [&](double v) { return diode(v); };
  const Vector grid = linspace(-2.0, 4.0, 300);
  Vector learned(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) learned[i] = f(0.5 * grid[i]);
  const AffineAlignment a = affine_align(grid, learned, f);
  EXPECT_NEAR(a.in_scale, 0.5, 1e-4);
  EXPECT_LT(a.aligned_max_error, 1e-6);
}

TEST(AffineAlign, InvariantUnderOutputReparameterization) {
  const DiodeParams diode;
  const std::function<double(double)> f = [&](double v) { return diode(v); };
  const Vector grid = linspace(-1.0, 2.5, 200);
  Vector learned(grid.size()), other(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    learned[i] = 0.8 * grid[i] + 0.2 * std::tanh(1.5 * grid[i]);
    other[i] = -3.0 * learned[i] + 7.0;
  }
  const AffineAlignment a = affine_align(grid, learned, f);
  const AffineAlignment b = affine_align(grid, other, f);
  EXPECT_GT(a.aligned_max_error, 1e-3);
  EXPECT_NEAR(a.aligned_max_error, b.aligned_max_error, 1e-9);
}

TEST(AffineAlign, ConstantCurveIsFlagged) {
  const std::function<double(double)> f = [](double v) { return v; };
  const Vector grid = linspace(-1.0, 1.0, 20);
  const AffineAlignment a = affine_align(grid, Vector(20, 0.25), f);
  EXPECT_TRUE(a.degenerate);
  EXPECT_NEAR(a.aligned_max_error, 1.25, 1e-12);
}

TEST(AffineAlign, FixedInputMap) {
  const std::function<double(double)> f = [](double v) { return v * v; };
  const Vector grid = linspace(0.0, 1.0, 11);
  Vector learned(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) learned[i] = (2 * grid[i] + 1) * (2 * grid[i] + 1);
  const AffineAlignment a = align_with_input_map(grid, learned, f, InputMap{2.0, 1.0});
  EXPECT_NEAR(a.out_scale, 1.0, 1e-12);
  EXPECT_NEAR(a.out_shift, 0.0, 1e-12);
  EXPECT_NEAR(a.oracle_range, 8.0, 1e-12);
  const InputMap m = regress_input_map(grid, Vector{1, 1.2, 1.4, 1.6, 1.8, 2, 2.2, 2.4, 2.6, 2.8, 3});
  EXPECT_NEAR(m.scale, 2.0, 1e-12);
  EXPECT_NEAR(m.shift, 1.0, 1e-12);
}

TEST(Monotonicity, Violation) {
  EXPECT_EQ(monotonicity_violation(Vector{0.0, 1.0, 1.0, 3.0}), 0.0);
  EXPECT_NEAR(monotonicity_violation(Vector{0.0, 1.0, 0.5, 2.0}), 0.25, 1e-15);
  EXPECT_NEAR(monotonicity_violation(Vector{2.0, 1.0, 0.0}), 1.0, 1e-15);
  EXPECT_EQ(monotonicity_violation(Vector(5, 1.0)), 0.0);
}

TEST(PlotData, RoundTrip) {
  const auto dir = oracle::temp_dir("plot");
  std::mt19937_64 rng(10);
  const KanNetwork net = oracle::random_network({3, 2}, rng);
  SliceReport r = slice(net, 0, Vector{0.0, 0.1, -0.1}, linspace(-1.0, 1.0, 77), "x");
  r.fit = polyfit(r, 1, 3);
  emit_plot_data(r, dir / "slice.csv");
  std::string header;
  const auto rows = read_csv(dir / "slice.csv", header);
  EXPECT_EQ(header, "x,response_1,response_2,fit");
  ASSERT_EQ(rows.size(), 77u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(rows[i][0], r.grid[i], 1e-12);
    EXPECT_NEAR(rows[i][1], r.responses(i, 0), 1e-12);
    EXPECT_NEAR(rows[i][2], r.responses(i, 1), 1e-12);
    EXPECT_NEAR(rows[i][3], polyval(r.fit->coefficients, r.grid[i]), 1e-12);
  }
  std::ifstream side(dir / "slice.json");
  const auto meta = nlohmann::json::parse(side);
  EXPECT_EQ(meta["varied_name"], "x");
  EXPECT_EQ(meta["n_samples"], 77);
  EXPECT_EQ(meta["fit"]["coefficients_ascending"].get<std::vector<double>>(), r.fit->coefficients);
}

TEST(PlotData, ZeroSamplesRefused) {
  const auto dir = oracle::temp_dir("plot_empty");
  const SliceReport r;
  expect_error([&] { emit_plot_data(r, dir / "empty.csv"); }, "empty-report");
  EXPECT_FALSE(std::filesystem::exists(dir / "empty.csv"));
  expect_error([&] { emit_time_series(Vector{}, Vector{}, dir / "ts.csv"); }, "empty-report");
  EXPECT_FALSE(std::filesystem::exists(dir / "ts.csv"));
}

TEST(PlotData, TimeSeries) {
  const auto dir = oracle::temp_dir("plot_ts");
  emit_time_series(Vector{1.0, 2.0}, Vector{0.5, 2.5}, dir / "ts.csv");
  std::string header;
  const auto rows = read_csv(dir / "ts.csv", header);
  EXPECT_EQ(header, "k,y_data,y_model,error");
  EXPECT_EQ(rows[0], (std::vector<double>{0.0, 1.0, 0.5, 0.5}));
  EXPECT_EQ(rows[1], (std::vector<double>{1.0, 2.0, 2.5, -0.5}));
  expect_error([&] { emit_time_series(Vector{1.0}, Vector{1.0}, dir / "missing" / "ts.csv"); }, "io-error");
}
