#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "scenarios.hpp"
#include "sskan/datagen.hpp"

using namespace sskan;

namespace {

std::vector<std::complex<double>> naive_dft(const Vector& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t t = 0; t < n; ++t)
      s += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n));
    out[k] = s;
  }
  return out;
}

double rms(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

template <typename Fn>
void expect_error(Fn&& fn, const std::string& code) {
  try {
    fn();
    FAIL() << "expected " << code;
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(Multisine, FlatSpectrumInBandOnly) {
  const std::size_t n = 256;
  const Vector x = multisine(n, 100.0, 20.0, 0.7, 4);
  EXPECT_NEAR(rms(x), 0.7, 1e-12);
  const auto spec = naive_dft(x);
  const std::size_t bins = 51;  // floor(20 * 256 / 100)
  const double ref = std::abs(spec[1]);
  for (std::size_t k = 1; k <= bins; ++k) EXPECT_LT(std::abs(20.0 * std::log10(std::abs(spec[k]) / ref)), 0.1) << k;
  EXPECT_LT(std::abs(spec[0]), 1e-9 * ref);
  for (std::size_t k = bins + 1; k < spec.size(); ++k) EXPECT_LT(std::abs(spec[k]), 1e-9 * ref) << k;
}

TEST(Multisine, SeedControlsPhases) {
  EXPECT_EQ(multisine(128, 1.0, 0.3, 1.0, 7), multisine(128, 1.0, 0.3, 1.0, 7));
  EXPECT_NE(multisine(128, 1.0, 0.3, 1.0, 7), multisine(128, 1.0, 0.3, 1.0, 8));
}

TEST(Multisine, ZeroAmplitude) {
  for (double v : multisine(64, 1.0, 0.2, 0.0, 1)) EXPECT_EQ(v, 0.0);
}

TEST(Multisine, RejectsBandAboveNyquist) {
  expect_error([] { multisine(64, 10.0, 5.0, 1.0, 1); }, "aliasing");
  expect_error([] { filtered_gaussian_ramp(64, 10.0, 6.0, 1.0, 1.0, 1); }, "aliasing");
}

TEST(Ramp, EnvelopeAndBand) {
  const std::size_t n = 16384;
  const Vector x = filtered_gaussian_ramp(n, 1.0, 0.1, 0.2, 2.0, 3);
  const std::size_t w = 2048;
  const double first = rms(std::span<const double>(x).subspan(0, w));
  const double last = rms(std::span<const double>(x).subspan(n - w));
  EXPECT_LT(first, last);
  // Window RMS follows the envelope at the window centre.
  auto env_rms = [&](std::size_t begin) {
    double s = 0.0;
    for (std::size_t t = begin; t < begin + w; ++t) {
      const double e = 0.2 + 1.8 * static_cast<double>(t) / static_cast<double>(n - 1);
      s += e * e;
    }
    return std::sqrt(s / static_cast<double>(w));
  };
  EXPECT_NEAR(last / env_rms(n - w), 1.0, 0.1);
  EXPECT_NEAR(first / env_rms(0), 1.0, 0.1);
  EXPECT_EQ(filtered_gaussian_ramp(256, 1.0, 0.1, 1.0, 1.0, 9), filtered_gaussian_ramp(256, 1.0, 0.1, 1.0, 1.0, 9));
  EXPECT_NE(filtered_gaussian_ramp(256, 1.0, 0.1, 1.0, 1.0, 9), filtered_gaussian_ramp(256, 1.0, 0.1, 1.0, 1.0, 10));
}

TEST(Ramp, ConstantEnvelopeHasUnitSampleStd) {
  const Vector x = filtered_gaussian_ramp(4096, 1.0, 0.2, 1.5, 1.5, 5);
  EXPECT_NEAR(rms(x), 1.5, 1e-12);
  double mean = 0.0;
  for (double v : x) mean += v;
  EXPECT_NEAR(mean / 4096.0, 0.0, 1e-12);
}

TEST(Duffing, LinearUndampedMatchesCosine) {
  DuffingParams p;
  p.c = 0.0;
  p.alpha = 0.0;
  p.k = 4.0;
  const double fs = 10.0;
  const Vector u(10000, 0.0);
  const Dataset d = simulate_duffing(p, u, fs, 0.5, 0.0, 20);
  double worst = 0.0;
  for (std::size_t t = 0; t < u.size(); ++t)
    worst = std::max(worst, std::abs(d.y[t] - 0.5 * std::cos(2.0 * static_cast<double>(t) / fs)));
  EXPECT_LT(worst, 1e-6);
}

TEST(Duffing, ZeroInputZeroStateStaysAtRest) {
  const Dataset d = simulate_duffing(DuffingParams{}, Vector(500, 0.0), 5.0, 0.0, 0.0);
  for (double y : d.y) EXPECT_EQ(y, 0.0);
  EXPECT_EQ(d.provenance, "synthetic-duffing");
}

TEST(Duffing, HardeningStaticDeflection) {
  // Constant force F settles at the real root of k x + alpha x^3 = F.
  DuffingParams p;
  p.c = 0.8;
  p.k = 1.0;
  p.alpha = 2.0;
  const double force = 1.5;
  const Dataset d = simulate_duffing(p, Vector(4000, force), 10.0, 0.0, 0.0, 4);
  double lo = 0.0, hi = force / p.k;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (p.k * mid + p.alpha * mid * mid * mid < force ? lo : hi) = mid;
  }
  EXPECT_NEAR(d.y.back(), lo, 1e-6);
  EXPECT_LT(d.y.back(), force / p.k);
}

TEST(Duffing, FourthOrderConvergence) {
  DuffingParams p;
  const double fs = 4.0;
  const Vector u = multisine(200, fs, 0.3, 1.0, 2);
  const Vector ref = simulate_duffing(p, u, fs, 0.2, 0.0, 256).y;
  auto err = [&](int sub) {
    const Vector y = simulate_duffing(p, u, fs, 0.2, 0.0, sub).y;
    double e = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) e = std::max(e, std::abs(y[t] - ref[t]));
    return e;
  };
  const double ratio = err(4) / err(8);
  EXPECT_GT(ratio, 12.0);
  EXPECT_LT(ratio, 20.0);
}

TEST(Duffing, DivergenceDetected) {
  DuffingParams p;
  p.k = 1.0;
  p.alpha = 0.0;
  p.c = 0.0;
  expect_error([&] { simulate_duffing(p, Vector(10, 0.0), 0.05, 2e6, 0.0); }, "unstable-integration");
  p.m = 0.0;
  expect_error([&] { simulate_duffing(p, Vector(10, 0.0), 1.0, 0.0, 0.0); }, "invalid-config");
}

TEST(FilterSignal, MatchesDifferenceEquation) {
  std::mt19937_64 rng(3);
  const Vector x = signal_column(oracle::random_signal(400, 1, rng));
  for (const FilterSpec& f : {default_front_filter(), default_back_filter(), FilterSpec{{0.5, 0.2}, {2.0, -0.4, 0.1}}}) {
    const Vector y = filter_signal(f, x);
    const Vector ref = oracle::iir(f.b, f.a, x);
    for (std::size_t t = 0; t < x.size(); ++t) EXPECT_NEAR(y[t], ref[t], 1e-12);
  }
}

TEST(FilterSignal, DefaultFiltersHaveUnitDcGain) {
  for (const FilterSpec& f : {default_front_filter(), default_back_filter()}) {
    double b = 0.0, a = 0.0;
    for (double v : f.b) b += v;
    for (double v : f.a) a += v;
    EXPECT_NEAR(b / a, 1.0, 1e-9);
  }
}

TEST(WienerHammerstein, IdentityPath) {
  WhOracleSpec spec;
  spec.front = {{1.0}, {1.0}};
  spec.back = {{1.0}, {1.0}};
  spec.diode.knee = 10.0;
  std::mt19937_64 rng(1);
  const Vector u = signal_column(oracle::random_signal(300, 1, rng, 5.0));
  const Dataset d = simulate_wh(spec, u);
  for (std::size_t t = 0; t < u.size(); ++t) EXPECT_NEAR(d.y[t], u[t], 1e-12);
}

TEST(WienerHammerstein, DiodeShape) {
  const DiodeParams dp;
  EXPECT_EQ(dp(0.3), 0.3);
  EXPECT_EQ(dp(-4.0), -4.0);
  EXPECT_EQ(dp(0.5), 0.5);
  EXPECT_NEAR(dp(1.0), 0.5 + 0.5 * std::tanh(1.0), 1e-15);
  EXPECT_NEAR(dp(100.0), dp.saturation_level(), 1e-12);
  const double h = 1e-6;
  EXPECT_NEAR((dp(0.5 + h) - dp(0.5)) / h, 1.0, 1e-5);
}

TEST(WienerHammerstein, DcSaturation) {
  const Dataset d = simulate_wh(WhOracleSpec{}, Vector(3000, 20.0));
  EXPECT_NEAR(d.y.back(), DiodeParams{}.saturation_level(), 1e-6);
  EXPECT_NEAR(d.v.back(), 20.0, 1e-6);
}

TEST(WienerHammerstein, ZeroInput) {
  const Dataset d = simulate_wh(WhOracleSpec{}, Vector(200, 0.0));
  for (double y : d.y) EXPECT_EQ(y, 0.0);
}

TEST(WienerHammerstein, SmallAmplitudeIsLinearCascade) {
  const Vector u = multisine(1024, 1.0, 0.1, 0.05, 3);
  const Dataset d = simulate_wh(WhOracleSpec{}, u);
  const Vector ref = oracle::iir(default_back_filter().b, default_back_filter().a,
                                 oracle::iir(default_front_filter().b, default_front_filter().a, u));
  double err = 0.0;
  for (std::size_t t = 0; t < u.size(); ++t) err = std::max(err, std::abs(d.y[t] - ref[t]));
  EXPECT_LT(err, 0.01 * rms(ref));
}

TEST(WienerHammerstein, NoiseIsSeeded) {
  WhOracleSpec spec;
  spec.noise_std = 0.1;
  spec.noise_seed = 4;
  const Vector u = multisine(256, 1.0, 0.1, 0.5, 1);
  EXPECT_EQ(simulate_wh(spec, u).y, simulate_wh(spec, u).y);
  const Dataset clean = simulate_wh(WhOracleSpec{}, u);
  const Dataset noisy = simulate_wh(spec, u);
  Vector diff(u.size());
  for (std::size_t t = 0; t < u.size(); ++t) diff[t] = noisy.y[t] - clean.y[t];
  EXPECT_NEAR(rms(diff), 0.1, 0.02);
}

TEST(Csv, RoundTripIsExact) {
  const auto dir = oracle::temp_dir("csv_round");
  std::mt19937_64 rng(5);
  Dataset d;
  d.u = signal_column(oracle::random_signal(300, 1, rng, 1e3));
  d.y = signal_column(oracle::random_signal(300, 1, rng, 1e-3));
  d.u[0] = 1.0 / 3.0;
  d.y[1] = -0.0;
  save_csv(d, dir / "d.csv");
  const Dataset e = load_csv(dir / "d.csv");
  EXPECT_EQ(e.u, d.u);
  EXPECT_EQ(e.y, d.y);
}

TEST(Csv, SmallFixture) {
  const auto dir = oracle::temp_dir("csv_fixture");
  write_file(dir / "f.csv", "k,u,y\n0,1.5,-2\n1, 0.25 ,3e-1\r\n2,-1,0\n");
  const Dataset d = load_csv(dir / "f.csv", 2.0);
  EXPECT_EQ(d.u, (Vector{1.5, 0.25, -1.0}));
  EXPECT_EQ(d.y, (Vector{-2.0, 0.3, 0.0}));
  EXPECT_EQ(d.sample_rate, 2.0);
}

TEST(Csv, ColumnOrderFollowsHeader) {
  const auto dir = oracle::temp_dir("csv_order");
  write_file(dir / "f.csv", "y,k,u\n7,0,1\n8,1,2\n");
  const Dataset d = load_csv(dir / "f.csv");
  EXPECT_EQ(d.u, (Vector{1.0, 2.0}));
  EXPECT_EQ(d.y, (Vector{7.0, 8.0}));
}

TEST(Csv, Errors) {
  const auto dir = oracle::temp_dir("csv_errors");
  write_file(dir / "noy.csv", "k,u\n0,1\n");
  expect_error([&] { load_csv(dir / "noy.csv"); }, "malformed-header");
  write_file(dir / "empty.csv", "");
  expect_error([&] { load_csv(dir / "empty.csv"); }, "malformed-header");
  write_file(dir / "bad.csv", "k,u,y\n0,1,2\n1,abc,3\n");
  try {
    load_csv(dir / "bad.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "non-numeric-cell");
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  write_file(dir / "short.csv", "k,u,y\n0,1\n");
  expect_error([&] { load_csv(dir / "short.csv"); }, "length-mismatch");
  write_file(dir / "nan.csv", "k,u,y\n0,nan,1\n");
  expect_error([&] { load_csv(dir / "nan.csv"); }, "non-finite-data");
  expect_error([&] { load_csv(dir / "missing.csv"); }, "io-error");
}

TEST(Bla, RecoversLinearSystem) {
  const LinearSS truth = scenario::reference_linear_system();
  const Dataset train = scenario::linear_dataset(truth, scenario::odd_multisine(2048, 0.2, 0.5, 3));
  const Dataset test = scenario::linear_dataset(truth, scenario::odd_multisine(1024, 0.2, 0.5, 4));
  TrainConfig cfg;
  cfg.lr0 = 3e-3;
  cfg.lr_decay = 0.995;
  cfg.batch_size = 128;
  cfg.epochs = 200;
  cfg.lambda_l2 = 0.0;
  cfg.seed = 3;
  const BlaResult r = fit_bla(train, test, 2, cfg);
  EXPECT_LT(r.test_rmse_norm, 1e-3);
  EXPECT_EQ(r.report.epochs.size(), cfg.epochs);

  // Recompute the reported test RMSE with an independent rollout.
  const Normalization n = normalize_fit(train.u, train.y);
  const Signal pred = oracle::linear_sim(r.linear, column_signal(apply_map(n.u, test.u)), {0.0, 0.0});
  Vector err(test.size());
  for (std::size_t t = 0; t < err.size(); ++t) err[t] = n.y.invert(pred(t, 0)) - test.y[t];
  EXPECT_NEAR(r.test_rmse, rms(err), 1e-12);
}

TEST(Bla, ZeroOutputHasNoNormalization) {
  Dataset d;
  d.u = multisine(256, 1.0, 0.2, 1.0, 1);
  d.y = Vector(256, 0.0);
  TrainConfig cfg;
  expect_error([&] { fit_bla(d, d, 2, cfg); }, "zero-range-channel");
}
