#pragma once

// Synthetic ground truth (Duffing oscillator, Wiener–Hammerstein cascade),
// excitation signals, CSV datasets and the best-linear-approximation
// baseline.

#include <fftw3.h>

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sskan/error.hpp"
#include "sskan/linalg.hpp"
#include "sskan/ssmodel.hpp"
#include "sskan/trainer.hpp"

namespace sskan {

struct Dataset {
  double sample_rate = 1.0;
  Vector u;
  Vector y;
  std::string provenance = "external-csv";  // synthetic-duffing | synthetic-wh | external-csv
  // Hidden intermediate signals of the WH oracle; never used for training.
  Vector v;
  Vector w;

  std::size_t size() const noexcept { return u.size(); }

  void validate() const {
    require(u.size() == y.size(), "length-mismatch", "dataset u and y lengths differ");
    for (std::size_t k = 0; k < u.size(); ++k)
      require(std::isfinite(u[k]) && std::isfinite(y[k]), "non-finite-data",
              "dataset sample " + std::to_string(k) + " is not finite");
  }
};

// ---------------------------------------------------------------------------
// Excitation signals

namespace detail {

// Real signal of length n from its half spectrum X[0..n/2] (FFTW c2r, no
// normalization): x[t] = sum_k X[k] e^{2 pi i k t / n} over the full
// Hermitian spectrum.
inline Vector inverse_real_fft(std::vector<std::array<double, 2>>& half, std::size_t n) {
  Vector out(n);
  fftw_plan plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(half.data()), out.data(),
                                        FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  return out;
}

inline std::vector<std::array<double, 2>> forward_real_fft(Vector in) {
  std::vector<std::array<double, 2>> half(in.size() / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(in.size()), in.data(),
                                        reinterpret_cast<fftw_complex*>(half.data()), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  return half;
}

inline void check_band(std::size_t n, double sample_rate, double f_max) {
  require(n >= 2, "invalid-size", "signal needs at least two samples");
  require(sample_rate > 0.0, "invalid-config", "sample rate must be positive");
  require(f_max > 0.0 && f_max < sample_rate / 2.0, "aliasing",
          "f_max " + std::to_string(f_max) + " Hz must lie below Nyquist " + std::to_string(sample_rate / 2.0) + " Hz");
}

inline double rms_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace detail

// One period of a random-phase multisine: equal-amplitude cosines on every
// DFT bin k = 1..floor(f_max n / fs), scaled to the requested RMS.
inline Vector multisine(std::size_t n_samples, double sample_rate, double f_max, double amplitude,
                        std::uint64_t seed) {
  detail::check_band(n_samples, sample_rate, f_max);
  const auto bins = static_cast<std::size_t>(std::floor(f_max * static_cast<double>(n_samples) / sample_rate));
  require(bins >= 1, "invalid-config", "multisine band contains no frequency bin");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<std::array<double, 2>> half(n_samples / 2 + 1, {0.0, 0.0});
  for (std::size_t k = 1; k <= bins; ++k) {
    const double p = phase(rng);
    half[k] = {0.5 * std::cos(p), 0.5 * std::sin(p)};
  }
  Vector x = detail::inverse_real_fft(half, n_samples);
  const double r = detail::rms_of(x);
  for (double& v : x) v *= amplitude / r;
  return x;
}

// Ideal low-pass filtered white Gaussian noise (unit sample std) multiplied
// by a linear envelope from amp_start to amp_end.
inline Vector filtered_gaussian_ramp(std::size_t n_samples, double sample_rate, double f_max, double amp_start,
                                     double amp_end, std::uint64_t seed) {
  detail::check_band(n_samples, sample_rate, f_max);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector white(n_samples);
  for (double& v : white) v = gauss(rng);
  auto half = detail::forward_real_fft(std::move(white));
  const auto keep = static_cast<std::size_t>(std::floor(f_max * static_cast<double>(n_samples) / sample_rate));
  half[0] = {0.0, 0.0};
  for (std::size_t k = keep + 1; k < half.size(); ++k) half[k] = {0.0, 0.0};
  Vector x = detail::inverse_real_fft(half, n_samples);
  const double r = detail::rms_of(x);
  require(r > 0.0, "invalid-config", "filtered noise band is empty");
  const double denom = static_cast<double>(n_samples - 1);
  for (std::size_t t = 0; t < n_samples; ++t) {
    const double env = amp_start + (amp_end - amp_start) * static_cast<double>(t) / denom;
    x[t] = env * x[t] / r;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Duffing oscillator  m x'' + c x' + k x + alpha x^3 = u(t)

struct DuffingParams {
  double m = 1.0;
  double c = 0.3;
  double k = 1.0;
  double alpha = 1.0;

  void validate() const {
    require(m > 0.0 && c >= 0.0 && k > 0.0 && alpha >= 0.0, "invalid-config",
            "duffing parameters must satisfy m > 0, c >= 0, k > 0, alpha >= 0");
  }

  double natural_frequency_hz() const { return std::sqrt(k / m) / (2.0 * std::numbers::pi); }
};

// Fixed-step RK4 with the input held constant over each sample interval
// (`substeps` RK4 steps per sample). y(k) is the position at t = k / fs.
inline Dataset simulate_duffing(const DuffingParams& p, std::span<const double> u, double sample_rate, double x0,
                                double v0, int substeps = 1) {
  p.validate();
  require(sample_rate > 0.0 && substeps >= 1, "invalid-config", "sample rate and substeps must be positive");
  Dataset d;
  d.sample_rate = sample_rate;
  d.provenance = "synthetic-duffing";
  d.u.assign(u.begin(), u.end());
  d.y.resize(u.size());
  const double h = 1.0 / (sample_rate * substeps);
  double x = x0;
  double v = v0;
  auto accel = [&](double xx, double vv, double uu) { return (uu - p.c * vv - p.k * xx - p.alpha * xx * xx * xx) / p.m; };
  for (std::size_t t = 0; t < u.size(); ++t) {
    d.y[t] = x;
    const double uu = u[t];
    for (int s = 0; s < substeps; ++s) {
      const double k1x = v, k1v = accel(x, v, uu);
      const double k2x = v + 0.5 * h * k1v, k2v = accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v, uu);
      const double k3x = v + 0.5 * h * k2v, k3v = accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v, uu);
      const double k4x = v + h * k3v, k4v = accel(x + h * k3x, v + h * k3v, uu);
      x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    if (!(std::abs(x) <= 1e6 && std::abs(v) <= 1e6))
      fail("unstable-integration", "duffing state exceeded 1e6 at sample " + std::to_string(t));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Wiener–Hammerstein oracle: u -> G1 -> diode -> G2 -> y

struct DiodeParams {
  double knee = 0.5;       // onset of saturation (input units)
  double slope = 1.0;      // gain of the linear branch
  double softness = 0.5;   // s in knee*slope + s tanh(slope (v - knee) / s)

  double saturation_level() const noexcept { return slope * knee + softness; }

  double operator()(double v) const {
    if (v <= knee) return slope * v;
    return slope * knee + softness * std::tanh(slope * (v - knee) / softness);
  }
};

// Third-order Chebyshev designs at benchmark-like normalized cutoffs
// (type I, 0.5 dB ripple, 4.4/51.2 band edge; type II, 40 dB stopband,
// 5/51.2 band edge). Both have unit DC gain.
inline FilterSpec default_front_filter() {
  return {{0.010252548452322804, 0.030757645356968413, 0.030757645356968413, 0.010252548452322804},
          {1.0, -2.1519415123750694, 1.744729579695555, -0.5107676797019036}};
}

inline FilterSpec default_back_filter() {
  return {{0.008706163709009873, -0.004596089748036662, -0.004596089748036663, 0.008706163709009871},
          {1.0, -2.5748671713990765, 2.2357165467000724, -0.6526292273790495}};
}

struct WhOracleSpec {
  FilterSpec front = default_front_filter();
  FilterSpec back = default_back_filter();
  DiodeParams diode;
  double noise_std = 0.0;
  std::uint64_t noise_seed = 0;

  void validate() const {
    validate_filter(front);
    validate_filter(back);
    require(diode.knee > 0.0 && diode.slope > 0.0 && diode.softness > 0.0, "invalid-config",
            "diode knee, slope and softness must be positive");
    require(noise_std >= 0.0, "invalid-config", "noise_std must be >= 0");
  }
};

// Direct-form II transposed IIR filter.
inline Vector filter_signal(const FilterSpec& f, std::span<const double> x) {
  const std::size_t order = std::max(f.a.size(), f.b.size()) - 1;
  Vector a(order + 1, 0.0), b(order + 1, 0.0), z(order + 1, 0.0);
  for (std::size_t i = 0; i < f.a.size(); ++i) a[i] = f.a[i] / f.a[0];
  for (std::size_t i = 0; i < f.b.size(); ++i) b[i] = f.b[i] / f.a[0];
  Vector y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double out = b[0] * x[t] + z[0];
    for (std::size_t i = 1; i <= order; ++i) z[i - 1] = b[i] * x[t] + (i < order ? z[i] : 0.0) - a[i] * out;
    y[t] = out;
  }
  return y;
}

template <typename Nonlinearity>
Dataset simulate_wh(const WhOracleSpec& spec, std::span<const double> u, Nonlinearity&& f, double sample_rate = 1.0) {
  spec.validate();
  Dataset d;
  d.sample_rate = sample_rate;
  d.provenance = "synthetic-wh";
  d.u.assign(u.begin(), u.end());
  d.v = filter_signal(spec.front, u);
  d.w.resize(d.v.size());
  for (std::size_t t = 0; t < d.v.size(); ++t) d.w[t] = f(d.v[t]);
  d.y = filter_signal(spec.back, d.w);
  if (spec.noise_std > 0.0) {
    std::mt19937_64 rng(spec.noise_seed);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (double& y : d.y) y += noise(rng);
  }
  return d;
}

inline Dataset simulate_wh(const WhOracleSpec& spec, std::span<const double> u, double sample_rate = 1.0) {
  return simulate_wh(spec, u, spec.diode, sample_rate);
}

// ---------------------------------------------------------------------------
// CSV: header `k,u,y`, one sample per row.

inline void save_csv(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io-error", "cannot open " + path.string() + " for writing");
  out << "k,u,y\n";
  char buf[96];
  for (std::size_t k = 0; k < d.size(); ++k) {
    const int n = std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", k, d.u[k], d.y[k]);
    out.write(buf, n);
  }
  require(out.good(), "io-error", "failed writing " + path.string());
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline double parse_cell(std::string_view cell, std::size_t line_no, const std::string& path) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    fail("non-numeric-cell", path + ":" + std::to_string(line_no) + ": cannot parse '" + std::string(cell) + "'");
  return v;
}

}  // namespace detail

inline Dataset load_csv(const std::filesystem::path& path, double sample_rate = 1.0) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "io-error", "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "malformed-header", path.string() + ": file is empty");
  const auto header = detail::split_csv_line(line);
  auto column = [&](std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail("malformed-header", path.string() + ": missing column '" + std::string(name) + "'");
  };
  const std::size_t ck = column("k");
  const std::size_t cu = column("u");
  const std::size_t cy = column("y");
  Dataset d;
  d.sample_rate = sample_rate;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    require(cells.size() == header.size(), "length-mismatch",
            path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                " cells, found " + std::to_string(cells.size()));
    (void)detail::parse_cell(cells[ck], line_no, path.string());
    d.u.push_back(detail::parse_cell(cells[cu], line_no, path.string()));
    d.y.push_back(detail::parse_cell(cells[cy], line_no, path.string()));
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Best linear approximation: an SS-KAN with both networks absent, trained
// with the regular trainer.

struct BlaResult {
  LinearSS linear;
  double test_rmse = 0.0;       // physical units
  double test_rmse_norm = 0.0;  // normalized units
  TrainReport report;
};

inline BlaResult fit_bla(const Dataset& train_data, const Dataset& test_data, std::size_t n_x, const TrainConfig& cfg,
                         std::optional<LinearSS> init = std::nullopt, const LinearInit& linear_init = {}) {
  SsKanModel model;
  model.normalization = normalize_fit(train_data.u, train_data.y);
  model.linear = init ? *init : init_stable_linear(n_x, 1, 1, cfg.seed, linear_init);
  const Signal u = column_signal(apply_map(model.normalization.u, train_data.u));
  const Signal y = column_signal(apply_map(model.normalization.y, train_data.y));
  TrainConfig bla_cfg = cfg;
  bla_cfg.grid_update_epochs.clear();
  BlaResult r;
  r.report = train(model, u, y, bla_cfg);
  r.linear = model.linear;
  const Signal ut = column_signal(apply_map(model.normalization.u, test_data.u));
  const Vector pred = signal_column(simulate_output(model, ut, Vector(n_x, 0.0)));
  r.test_rmse_norm = rmse(pred, apply_map(model.normalization.y, test_data.y));
  r.test_rmse = rmse(invert_map(model.normalization.y, pred), test_data.y);
  return r;
}

}  // namespace sskan
