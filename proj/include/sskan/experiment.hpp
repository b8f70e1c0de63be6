#pragma once

// Experiment presets and the in-memory pipeline shared by the CLI and the
// acceptance suite: data generation, model construction, training,
// evaluation and slicing.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sskan/datagen.hpp"
#include "sskan/diffengine.hpp"
#include "sskan/error.hpp"
#include "sskan/interp.hpp"
#include "sskan/kan.hpp"
#include "sskan/normalization.hpp"
#include "sskan/parallel.hpp"
#include "sskan/ssmodel.hpp"
#include "sskan/trainer.hpp"

namespace sskan {

struct DataSpec {
  std::size_t n_train = 8192;
  std::size_t n_test = 4096;
  // Sample rate in Hz; 0 selects `rate_factor` times the oscillator's
  // linearized natural frequency.
  double sample_rate = 0.0;
  double rate_factor = 40.0;
  // Excited band as a fraction of the sample rate.
  double band_fraction = 0.075;
  double train_amplitude = 1.0;   // RMS of the training excitation
  double test_amp_start = 0.05;   // test envelope, relative to train_amplitude
  double test_amp_end = 1.25;
  std::string train_signal = "multisine";  // multisine | filtered-noise
  double noise_std = 0.0;
  // Duffing: alpha <= 0 selects the cubic stiffness at which the cubic force
  // equals the linear force at the training response's peak displacement.
  DuffingParams duffing{1.0, 0.3, 1.0, 0.0};
  int rk4_substeps = 4;
  WhOracleSpec wh;
  std::string train_csv;
  std::string test_csv;
};

struct ModelSpec {
  std::string kind = "sskan";  // sskan | cascade
  std::size_t n_x = 2;
  std::vector<std::size_t> kan_f_hidden{2};
  bool kan_f_enabled = true;
  bool kan_g_enabled = false;
  std::vector<std::size_t> kan_g_hidden{2};
  KanInit kan;
  LinearInit linear;
  std::size_t cascade_hidden = 15;
  FilterSpec front = default_front_filter();
  FilterSpec back = default_back_filter();
};

struct BlaSpec {
  std::size_t n_x = 2;
  TrainConfig train;
  // Cascade experiments start the BLA from the series connection of the
  // model's filter specs.
  bool init_from_filters = false;
};

struct SliceSpec {
  std::size_t degree = 3;
  std::size_t varied = 0;
  std::size_t points = kDefaultSlicePoints;
};

struct ExperimentConfig {
  int schema_version = 1;
  std::string preset = "silverbox-desk";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DataSpec data;
  ModelSpec model;
  TrainConfig train;
  BlaSpec bla;
  SliceSpec slice;

  bool is_wh() const { return model.kind == "cascade"; }
};

inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "silverbox-synthetic" || name == "silverbox-desk") {
    c.data.n_train = name == "silverbox-desk" ? 8192 : 65536;
    c.data.n_test = name == "silverbox-desk" ? 4096 : 40960;
    c.model.kind = "sskan";
    c.model.n_x = 2;
    c.model.kan_f_hidden = {2};
    c.model.kan_g_enabled = false;
    c.model.kan.w_b = 0.1;
    c.model.kan.w_b_out = 0.1;
    c.model.linear.kind = LinearInit::Kind::oscillator;
    c.model.linear.c_scale = 1.0;
    c.model.linear.b_scale = 0.3;
    c.train.lr0 = 1e-3;
    c.train.batch_size = 64;
    c.train.epochs = 100;
    c.train.lambda_l1 = 1e-4;
    c.train.lambda_l2 = 1e-4;
    c.bla.n_x = 2;
    c.bla.train = c.train;
  } else if (name == "wh-synthetic" || name == "wh-desk") {
    c.data.n_train = name == "wh-desk" ? 16384 : 80000;
    c.data.n_test = name == "wh-desk" ? 8192 : 78000;
    c.data.sample_rate = 51200.0;
    c.data.band_fraction = 10000.0 / 51200.0;
    c.data.train_signal = "filtered-noise";
    c.data.train_amplitude = 0.5;
    c.data.test_amp_start = 1.0;
    c.data.test_amp_end = 1.0;
    c.model.kind = "cascade";
    c.model.cascade_hidden = 15;
    c.train.lr0 = 1e-4;
    c.train.lr_decay = 0.995;
    c.train.batch_size = 2048;
    c.train.epochs = name == "wh-desk" ? 150 : 500;
    c.train.grid_update_epochs = {10, 25, 50};
    c.train.lambda_l1 = 1e-4;
    c.train.lambda_l2 = 1e-4;
    c.bla.n_x = 6;
    c.bla.train = c.train;
    c.bla.init_from_filters = true;
  } else if (name == "external") {
    c.data.train_signal = "csv";
    c.bla.train = c.train;
  } else {
    fail("invalid-config", "unknown preset '" + name + "'");
  }
  c.train.seed = c.seed;
  c.bla.train.seed = c.seed;
  return c;
}

// ---------------------------------------------------------------------------
// Data generation

struct ExperimentData {
  Dataset train;
  Dataset test;
  DuffingParams duffing;  // resolved parameters (synthetic-duffing)
};

inline double duffing_sample_rate(const DataSpec& d) {
  return d.sample_rate > 0.0 ? d.sample_rate : d.rate_factor * d.duffing.natural_frequency_hz();
}

inline ExperimentData generate_data(const ExperimentConfig& cfg) {
  const DataSpec& d = cfg.data;
  require(d.n_train >= 2 && d.n_test >= 2, "invalid-config", "data.n_train and data.n_test must be >= 2");
  ExperimentData out;
  if (cfg.preset == "external" || d.train_signal == "csv") {
    require(!d.train_csv.empty() && !d.test_csv.empty(), "invalid-config",
            "data.train_csv and data.test_csv are required for external data");
    out.train = load_csv(d.train_csv, d.sample_rate > 0.0 ? d.sample_rate : 1.0);
    out.test = load_csv(d.test_csv, d.sample_rate > 0.0 ? d.sample_rate : 1.0);
    return out;
  }
  const std::uint64_t train_seed = cfg.seed * 1000003ULL + 11;
  const std::uint64_t test_seed = cfg.seed * 1000003ULL + 29;
  if (cfg.is_wh()) {
    const double fs = d.sample_rate > 0.0 ? d.sample_rate : 1.0;
    const double f_max = d.band_fraction * fs;
    const Vector u_train =
        d.train_signal == "multisine"
            ? multisine(d.n_train, fs, f_max, d.train_amplitude, train_seed)
            : filtered_gaussian_ramp(d.n_train, fs, f_max, d.train_amplitude, d.train_amplitude, train_seed);
    const Vector u_test = filtered_gaussian_ramp(d.n_test, fs, f_max, d.test_amp_start * d.train_amplitude,
                                                 d.test_amp_end * d.train_amplitude, test_seed);
    WhOracleSpec spec = d.wh;
    spec.noise_std = d.noise_std;
    spec.noise_seed = train_seed + 1;
    out.train = simulate_wh(spec, u_train, fs);
    spec.noise_seed = test_seed + 1;
    out.test = simulate_wh(spec, u_test, fs);
    return out;
  }
  const double fs = duffing_sample_rate(d);
  const double f_max = d.band_fraction * fs;
  const Vector u_train = d.train_signal == "multisine"
                             ? multisine(d.n_train, fs, f_max, d.train_amplitude, train_seed)
                             : filtered_gaussian_ramp(d.n_train, fs, f_max, d.train_amplitude,
                                                      d.train_amplitude, train_seed);
  const Vector u_test = filtered_gaussian_ramp(d.n_test, fs, f_max, d.test_amp_start * d.train_amplitude,
                                               d.test_amp_end * d.train_amplitude, test_seed);
  DuffingParams p = d.duffing;
  if (p.alpha <= 0.0) {
    DuffingParams linear = p;
    linear.alpha = 0.0;
    const Dataset lin = simulate_duffing(linear, u_train, fs, 0.0, 0.0, d.rk4_substeps);
    double peak = 0.0;
    for (double y : lin.y) peak = std::max(peak, std::abs(y));
    require(peak > 0.0, "invalid-config", "training excitation produces no displacement");
    p.alpha = p.k / (peak * peak);
  }
  out.duffing = p;
  out.train = simulate_duffing(p, u_train, fs, 0.0, 0.0, d.rk4_substeps);
  out.test = simulate_duffing(p, u_test, fs, 0.0, 0.0, d.rk4_substeps);
  if (d.noise_std > 0.0) {
    std::mt19937_64 rng(train_seed + 7);
    std::normal_distribution<double> noise(0.0, d.noise_std);
    for (double& y : out.train.y) y += noise(rng);
    for (double& y : out.test.y) y += noise(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Models

inline SsKanModel build_sskan(const ExperimentConfig& cfg, std::size_t n_u = 1, std::size_t n_y = 1) {
  const ModelSpec& m = cfg.model;
  std::mt19937_64 rng(cfg.seed * 7919ULL + 3);
  SsKanModel model;
  model.linear = init_stable_linear(m.n_x, n_u, n_y, cfg.seed, m.linear);
  if (m.kan_f_enabled) {
    std::vector<std::size_t> widths{m.n_x + n_u};
    widths.insert(widths.end(), m.kan_f_hidden.begin(), m.kan_f_hidden.end());
    widths.push_back(m.n_x);
    model.kan_f = make_network(widths, m.kan, rng);
  }
  if (m.kan_g_enabled) {
    std::vector<std::size_t> widths{m.n_x + n_u};
    widths.insert(widths.end(), m.kan_g_hidden.begin(), m.kan_g_hidden.end());
    widths.push_back(n_y);
    model.kan_g = make_network(widths, m.kan, rng);
  }
  return model;
}

inline CascadeModel build_cascade(const ExperimentConfig& cfg) {
  return init_cascade_from_filters(cfg.model.front, cfg.model.back, cfg.model.cascade_hidden, cfg.model.kan,
                                   cfg.seed * 7919ULL + 5);
}

// Series connection front -> back of two SISO blocks as one linear system.
inline LinearSS series_connection(const LinearSS& first, const LinearSS& second) {
  const std::size_t n1 = first.n_x(), n2 = second.n_x();
  LinearSS s(n1 + n2, 1, 1);
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n1; ++j) s.A(i, j) = first.A(i, j);
    s.B(i, 0) = first.B(i, 0);
  }
  for (std::size_t i = 0; i < n2; ++i) {
    for (std::size_t j = 0; j < n1; ++j) s.A(n1 + i, j) = second.B(i, 0) * first.C(0, j);
    for (std::size_t j = 0; j < n2; ++j) s.A(n1 + i, n1 + j) = second.A(i, j);
    s.B(n1 + i, 0) = second.B(i, 0) * first.D(0, 0);
  }
  for (std::size_t j = 0; j < n1; ++j) s.C(0, j) = second.D(0, 0) * first.C(0, j);
  for (std::size_t j = 0; j < n2; ++j) s.C(0, n1 + j) = second.C(0, j);
  s.D(0, 0) = second.D(0, 0) * first.D(0, 0);
  return s;
}

struct NormalizedData {
  Normalization norm;
  Signal u_train, y_train, u_test, y_test;
};

inline NormalizedData normalize_data(const ExperimentData& data) {
  NormalizedData n;
  n.norm = normalize_fit(data.train.u, data.train.y);
  n.u_train = column_signal(apply_map(n.norm.u, data.train.u));
  n.y_train = column_signal(apply_map(n.norm.y, data.train.y));
  n.u_test = column_signal(apply_map(n.norm.u, data.test.u));
  n.y_test = column_signal(apply_map(n.norm.y, data.test.y));
  return n;
}

struct EvalMetrics {
  double train_rmse = 0.0;  // physical units
  double test_rmse = 0.0;
  double train_rmse_norm = 0.0;
  double test_rmse_norm = 0.0;
  double extrapolation_rmse = 0.0;  // test samples with |normalized u| > 1
  std::size_t extrapolation_samples = 0;
  double test_transient_rmse = 0.0;  // first 200 test samples
  Vector train_pred, test_pred;      // physical units
};

template <typename Model>
EvalMetrics evaluate(const Model& model, const Dataset& train, const Dataset& test) {
  require(train.size() > 0 && test.size() > 0, "empty-dataset", "evaluation needs nonempty datasets");
  const Normalization& n = model.normalization;
  EvalMetrics m;
  const Vector x0(state_size(model), 0.0);
  Vector tr, te;
  parallel_for(2, [&](std::size_t i) {
    const Dataset& d = i == 0 ? train : test;
    (i == 0 ? tr : te) = signal_column(simulate_output(model, column_signal(apply_map(n.u, d.u)), x0));
  });
  m.train_rmse_norm = rmse(tr, apply_map(n.y, train.y));
  m.test_rmse_norm = rmse(te, apply_map(n.y, test.y));
  m.train_pred = invert_map(n.y, tr);
  m.test_pred = invert_map(n.y, te);
  m.train_rmse = rmse(m.train_pred, train.y);
  m.test_rmse = rmse(m.test_pred, test.y);
  double s = 0.0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    if (std::abs(n.u.apply(test.u[k])) > 1.0) {
      const double e = m.test_pred[k] - test.y[k];
      s += e * e;
      ++m.extrapolation_samples;
    }
  }
  m.extrapolation_rmse = m.extrapolation_samples ? std::sqrt(s / static_cast<double>(m.extrapolation_samples)) : 0.0;
  const std::size_t head = std::min<std::size_t>(200, test.size());
  m.test_transient_rmse = rmse(std::span<const double>(m.test_pred).subspan(0, head),
                               std::span<const double>(test.y).subspan(0, head));
  return m;
}

}  // namespace sskan
