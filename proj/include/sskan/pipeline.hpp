#pragma once

// File-level experiment steps behind the CLI subcommands. Every step reads
// and writes a single output directory:
//
//   train.csv, test.csv, manifest.json        generate
//   checkpoint.json, report.csv               train
//   bla_checkpoint.json, bla_report.csv       bla
//   <role>_metrics.json, <role>_{train,test}_series.csv   eval
//   <role>_slice_<varied>.csv (+ .json)       slice

#include <algorithm>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <variant>

#include "sskan/datagen.hpp"
#include "sskan/experiment.hpp"
#include "sskan/interp.hpp"
#include "sskan/io.hpp"

namespace sskan {

struct OutputLayout {
  std::filesystem::path dir;

  std::filesystem::path train_csv() const { return dir / "train.csv"; }
  std::filesystem::path test_csv() const { return dir / "test.csv"; }
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path checkpoint(const std::string& role = "model") const {
    return dir / (role == "bla" ? "bla_checkpoint.json" : "checkpoint.json");
  }
  std::filesystem::path report(const std::string& role = "model") const {
    return dir / (role == "bla" ? "bla_report.csv" : "report.csv");
  }
  std::filesystem::path metrics(const std::string& role) const { return dir / (role + "_metrics.json"); }
  std::filesystem::path series(const std::string& role, const std::string& split) const {
    return dir / (role + "_" + split + "_series.csv");
  }
  std::filesystem::path slice(const std::string& role, std::size_t varied) const {
    return dir / (role + "_slice_" + std::to_string(varied) + ".csv");
  }
};

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), "io-error",
          "cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

// Train/test records plus what the manifest knows about their origin.
struct GeneratedData {
  ExperimentData data;
  std::string provenance = "external-csv";
  std::optional<WhOracleSpec> wh;
};

// ---------------------------------------------------------------------------
// generate

inline json manifest_json(const ExperimentConfig& cfg, const GeneratedData& g) {
  json oracle = nullptr;
  if (g.provenance == "synthetic-duffing") {
    const DuffingParams& p = g.data.duffing;
    oracle = {{"type", "duffing"},
              {"m", p.m},
              {"c", p.c},
              {"k", p.k},
              {"alpha", p.alpha},
              {"rk4_substeps", cfg.data.rk4_substeps}};
  } else if (g.provenance == "synthetic-wh") {
    const WhOracleSpec& w = *g.wh;
    oracle = {{"type", "wh"},
              {"front", {{"b", w.front.b}, {"a", w.front.a}}},
              {"back", {{"b", w.back.b}, {"a", w.back.a}}},
              {"diode", {{"knee", w.diode.knee}, {"slope", w.diode.slope}, {"softness", w.diode.softness}}},
              {"noise_std", w.noise_std}};
  }
  return json{{"schema_version", kSchemaVersion},
              {"provenance", g.provenance},
              {"preset", cfg.preset},
              {"seed", cfg.seed},
              {"sample_rate", g.data.train.sample_rate},
              {"n_train", g.data.train.size()},
              {"n_test", g.data.test.size()},
              {"length_rounding", "record lengths are powers of two or preset multiples thereof"},
              {"files", {{"train", "train.csv"}, {"test", "test.csv"}}},
              {"oracle", oracle},
              {"config_hash", config_hash(cfg)},
              {"config", config_to_json(cfg)}};
}

inline GeneratedData run_generate(const ExperimentConfig& cfg, const OutputLayout& out) {
  validate_config(cfg);
  GeneratedData g;
  g.data = generate_data(cfg);
  if (cfg.data.train_signal == "csv" || cfg.preset == "external") {
    g.provenance = "external-csv";
  } else if (cfg.is_wh()) {
    g.provenance = "synthetic-wh";
    g.wh = cfg.data.wh;
    g.wh->noise_std = cfg.data.noise_std;
  } else {
    g.provenance = "synthetic-duffing";
  }
  g.data.train.provenance = g.data.test.provenance = g.provenance;
  ensure_directory(out.dir);
  save_csv(g.data.train, out.train_csv());
  save_csv(g.data.test, out.test_csv());
  write_text_file(out.manifest(), dump_json(manifest_json(cfg, g)));
  return g;
}

// Reads the records written by run_generate. The WH oracle's hidden
// intermediate signals are recomputed from the manifest for recovery checks.
inline GeneratedData load_generated(const OutputLayout& out) {
  GeneratedData g;
  double fs = 1.0;
  json oracle = nullptr;
  if (std::filesystem::exists(out.manifest())) {
    const json m = parse_json_file(out.manifest(), "invalid-config");
    require(m.is_object(), "invalid-config", "manifest: expected object");
    if (m.contains("sample_rate") && m.at("sample_rate").is_number()) fs = m.at("sample_rate").get<double>();
    if (m.contains("provenance") && m.at("provenance").is_string())
      g.provenance = m.at("provenance").get<std::string>();
    if (m.contains("oracle")) oracle = m.at("oracle");
  }
  g.data.train = load_csv(out.train_csv(), fs);
  g.data.test = load_csv(out.test_csv(), fs);
  require(g.data.train.size() >= 2 && g.data.test.size() >= 1, "empty-dataset",
          "train.csv needs at least 2 samples and test.csv at least 1");
  g.data.train.provenance = g.data.test.provenance = g.provenance;
  if (oracle.is_object() && oracle.value("type", "") == "duffing") {
    g.data.duffing = {oracle.at("m").get<double>(), oracle.at("c").get<double>(), oracle.at("k").get<double>(),
                      oracle.at("alpha").get<double>()};
  }
  if (oracle.is_object() && oracle.value("type", "") == "wh") {
    WhOracleSpec w;
    w.front = {oracle.at("front").at("b").get<Vector>(), oracle.at("front").at("a").get<Vector>()};
    w.back = {oracle.at("back").at("b").get<Vector>(), oracle.at("back").at("a").get<Vector>()};
    w.diode = {oracle.at("diode").at("knee").get<double>(), oracle.at("diode").at("slope").get<double>(),
               oracle.at("diode").at("softness").get<double>()};
    w.validate();
    for (Dataset* d : {&g.data.train, &g.data.test}) {
      const Dataset sim = simulate_wh(w, d->u, fs);
      d->v = sim.v;
      d->w = sim.w;
    }
    g.wh = w;
  }
  return g;
}

// ---------------------------------------------------------------------------
// train / bla

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainReport report;
  EvalMetrics metrics;
};

inline json init_description(const ExperimentConfig& cfg, const std::string& role) {
  json j{{"rng", "mt19937_64"}, {"seed", cfg.seed}};
  if (role == "bla") {
    j["linear"] = cfg.bla.init_from_filters ? json("series connection of the model filter specs")
                                            : detail::linear_init_to_json(cfg.model.linear);
    return j;
  }
  j["kan"] = detail::kan_init_to_json(cfg.model.kan);
  if (cfg.is_wh()) {
    j["linear"] = "controllable-canonical realization of the model filter specs";
    j["kan_scheme"] = "near-identity, " + std::to_string(cfg.model.cascade_hidden) + " hidden paths";
  } else {
    j["linear"] = detail::linear_init_to_json(cfg.model.linear);
    j["kan_scheme"] = "c ~ U(-coeff_scale/sqrt(count), +coeff_scale/sqrt(count))";
  }
  return j;
}

template <typename Model>
TrainOutcome train_and_save(Model model, const GeneratedData& g, const Normalization& norm,
                            const ExperimentConfig& cfg, const TrainConfig& tcfg, const std::string& role,
                            const OutputLayout& out) {
  model.normalization = norm;
  const Signal u = column_signal(apply_map(norm.u, g.data.train.u));
  const Signal y = column_signal(apply_map(norm.y, g.data.train.y));
  TrainOutcome o;
  try {
    o.report = train(model, u, y, tcfg);
  } catch (const TrainingDiverged& e) {
    write_text_file(out.report(role), report_csv(e.report()));
    throw;
  }
  o.checkpoint.role = role;
  o.checkpoint.seed = cfg.seed;
  o.checkpoint.config_hash = config_hash(cfg);
  o.checkpoint.init = init_description(cfg, role);
  o.metrics = evaluate(model, g.data.train, g.data.test);
  o.checkpoint.model = std::move(model);
  save_checkpoint(o.checkpoint, out.checkpoint(role));
  write_text_file(out.report(role), report_csv(o.report));
  return o;
}

inline TrainOutcome run_train(const ExperimentConfig& cfg, const OutputLayout& out) {
  validate_config(cfg);
  const GeneratedData g = load_generated(out);
  const Normalization norm = normalize_fit(g.data.train.u, g.data.train.y);
  if (cfg.is_wh()) return train_and_save(build_cascade(cfg), g, norm, cfg, cfg.train, "model", out);
  return train_and_save(build_sskan(cfg), g, norm, cfg, cfg.train, "model", out);
}

inline TrainOutcome run_bla(const ExperimentConfig& cfg, const OutputLayout& out) {
  validate_config(cfg);
  const GeneratedData g = load_generated(out);
  const Normalization norm = normalize_fit(g.data.train.u, g.data.train.y);
  SsKanModel bla;
  if (cfg.bla.init_from_filters) {
    require(cfg.bla.n_x == 2 * kCascadeOrder, "invalid-config",
            "bla.n_x must be " + std::to_string(2 * kCascadeOrder) + " when bla.init_from_filters is set");
    bla.linear = series_connection(realize_filter(cfg.model.front), realize_filter(cfg.model.back));
  } else {
    bla.linear = init_stable_linear(cfg.bla.n_x, 1, 1, cfg.seed, cfg.model.linear);
  }
  TrainConfig tcfg = cfg.bla.train;
  tcfg.grid_update_epochs.clear();
  return train_and_save(std::move(bla), g, norm, cfg, tcfg, "bla", out);
}

// ---------------------------------------------------------------------------
// eval

struct EvalOutcome {
  EvalMetrics metrics;
  RecordRmse record;  // fitting part / held-out tail of the training record
  json summary;
};

inline EvalOutcome run_eval(const Checkpoint& ck, const ExperimentConfig& cfg, const GeneratedData& g,
                            const OutputLayout& out) {
  EvalOutcome o;
  std::visit(
      [&](const auto& m) {
        o.metrics = evaluate(m, g.data.train, g.data.test);
        const Signal u = column_signal(apply_map(m.normalization.u, g.data.train.u));
        const Signal y = column_signal(apply_map(m.normalization.y, g.data.train.y));
        o.record = evaluate_record(m, u, y, cfg.train.fit_length(u.rows()), m.normalization.y);
      },
      ck.model);
  const EvalMetrics& m = o.metrics;
  o.summary = json{{"role", ck.role},
                   {"kind", ck.is_cascade() ? "cascade" : "sskan"},
                   {"config_hash", ck.config_hash},
                   {"n_train", g.data.train.size()},
                   {"n_test", g.data.test.size()},
                   {"train_rmse", m.train_rmse},
                   {"test_rmse", m.test_rmse},
                   {"train_rmse_norm", m.train_rmse_norm},
                   {"test_rmse_norm", m.test_rmse_norm},
                   {"fit_rmse_norm", o.record.fit},
                   {"validation_rmse_norm", o.record.val},
                   {"fit_rmse", o.record.fit_phys},
                   {"validation_rmse", o.record.val_phys},
                   {"extrapolation_rmse", m.extrapolation_rmse},
                   {"extrapolation_samples", m.extrapolation_samples},
                   {"test_transient_rmse", m.test_transient_rmse}};
  ensure_directory(out.dir);
  write_text_file(out.metrics(ck.role), dump_json(o.summary));
  emit_time_series(g.data.train.y, m.train_pred, out.series(ck.role, "train"));
  emit_time_series(g.data.test.y, m.test_pred, out.series(ck.role, "test"));
  return o;
}

// ---------------------------------------------------------------------------
// slice

struct InputBounds {
  Vector mins, maxs, means;
};

inline InputBounds input_bounds(const Matrix& samples) {
  const std::size_t n = samples.rows(), w = samples.cols();
  InputBounds b{Vector(w, std::numeric_limits<double>::infinity()), Vector(w, -std::numeric_limits<double>::infinity()),
                Vector(w, 0.0)};
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < w; ++i) {
      const double v = samples(k, i);
      b.mins[i] = std::min(b.mins[i], v);
      b.maxs[i] = std::max(b.maxs[i], v);
      b.means[i] += v;
    }
  for (double& m : b.means) m /= static_cast<double>(n);
  return b;
}

// KAN_f inputs (x_k, u_k) along a free-run rollout of the training record.
inline Matrix kan_f_inputs(const SsKanModel& m, const Signal& u) {
  const SimulationResult r = rollout(m, u, Vector(m.n_x(), 0.0));
  Matrix z(u.rows(), m.n_x() + m.n_u());
  for (std::size_t k = 0; k < u.rows(); ++k) {
    for (std::size_t i = 0; i < m.n_x(); ++i) z(k, i) = r.x(k, i);
    for (std::size_t i = 0; i < m.n_u(); ++i) z(k, m.n_x() + i) = u(k, i);
  }
  return z;
}

inline std::string kan_input_name(const SsKanModel& m, std::size_t i) {
  return i < m.n_x() ? "x" + std::to_string(i + 1) : "u" + std::to_string(i - m.n_x() + 1);
}

struct SliceOutcome {
  SliceReport report;
  std::filesystem::path csv;
};

inline SliceOutcome slice_sskan(const SsKanModel& m, const GeneratedData& g, const SliceSpec& spec) {
  require(m.kan_f.has_value(), "index-out-of-range", "checkpoint has no state-update network to slice");
  const KanNetwork& net = *m.kan_f;
  require(spec.varied < net.n_in(), "index-out-of-range",
          "varied index " + std::to_string(spec.varied) + " is outside the " + std::to_string(net.n_in()) +
              " network inputs");
  const Signal u = column_signal(apply_map(m.normalization.u, g.data.train.u));
  const InputBounds b = input_bounds(kan_f_inputs(m, u));
  const Vector grid = linspace(b.mins[spec.varied], b.maxs[spec.varied], spec.points);
  SliceReport r = slice(net, spec.varied, b.means, grid, kan_input_name(m, spec.varied));
  std::size_t main = 0;
  for (std::size_t c = 0; c < r.responses.cols(); ++c) {
    const double range = curve_range(r.channel(c));
    r.metrics.emplace_back("range_channel_" + std::to_string(c + 1), range);
    if (range > curve_range(r.channel(main))) main = c;
  }
  r.fit = polyfit(r, main, spec.degree);
  const double half_width = std::max(std::abs(grid.front()), std::abs(grid.back()));
  const Vector share = dominance(r.fit->coefficients, half_width);
  for (std::size_t j = 0; j < share.size(); ++j)
    r.metrics.emplace_back("dominance_power_" + std::to_string(j), share[j]);
  r.metrics.emplace_back("dominance_half_width", half_width);
  r.metrics.emplace_back("sweep_deviation", fixed_value_sweep(net, spec.varied, b.mins, b.maxs, grid, main));
  if (spec.varied >= m.n_x()) {
    // The varied input is a normalized input channel: also report the fit in
    // physical input units.
    const Vector phys = compose_affine(r.fit->coefficients, m.normalization.u.scale, m.normalization.u.offset);
    for (std::size_t j = 0; j < phys.size(); ++j)
      r.metrics.emplace_back("physical_coefficient_" + std::to_string(j), phys[j]);
  }
  return {std::move(r), {}};
}

inline SliceOutcome slice_cascade(const CascadeModel& m, const GeneratedData& g, const SliceSpec& spec) {
  require(spec.varied == 0, "index-out-of-range", "the cascade nonlinearity has a single input (index 0)");
  const Vector u = apply_map(m.normalization.u, g.data.train.u);
  const CascadeResult run =
      cascade_rollout(m, u, Vector(m.front.n_x(), 0.0), Vector(m.back.n_x(), 0.0));
  const auto [lo, hi] = std::minmax_element(run.v.begin(), run.v.end());
  const Vector grid = linspace(*lo, *hi, spec.points);
  const Vector zero{0.0};
  SliceReport r = slice(m.mid_kan, 0, zero, grid, "v");
  const Vector learned = r.channel(0);
  r.fit = polyfit(r, 0, spec.degree);
  r.metrics.emplace_back("range_channel_1", curve_range(learned));
  r.metrics.emplace_back("monotonicity_violation", monotonicity_violation(learned));
  if (g.wh && g.data.train.v.size() == run.v.size()) {
    const DiodeParams diode = g.wh->diode;
    const std::function<double(double)> oracle = [diode](double v) { return diode(v); };
    const InputMap map = regress_input_map(run.v, g.data.train.v);
    r.oracle = align_with_input_map(grid, learned, oracle, map);
    const AffineAlignment free = affine_align(grid, learned, oracle, map);
    r.metrics.emplace_back("free_alignment_relative_max_error", free.relative_max_error);
    double res = 0.0;
    for (std::size_t k = 0; k < run.v.size(); ++k) {
      const double e = map.scale * run.v[k] + map.shift - g.data.train.v[k];
      res += e * e;
    }
    r.metrics.emplace_back("input_map_residual_rms", std::sqrt(res / static_cast<double>(run.v.size())));
  }
  return {std::move(r), {}};
}

inline SliceOutcome run_slice(const Checkpoint& ck, const ExperimentConfig& cfg, const GeneratedData& g,
                              const OutputLayout& out) {
  require(cfg.slice.points >= 4, "invalid-config", "slice.points must be >= 4");
  SliceOutcome o = std::visit(
      [&](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CascadeModel>)
          return slice_cascade(m, g, cfg.slice);
        else
          return slice_sskan(m, g, cfg.slice);
      },
      ck.model);
  ensure_directory(out.dir);
  o.csv = out.slice(ck.role, cfg.slice.varied);
  emit_plot_data(o.report, o.csv);
  return o;
}

}  // namespace sskan
