// sskan: generate data, train SS-KAN / cascade models and their linear
// baselines, evaluate checkpoints and slice learned networks.
//
// Config precedence, lowest first: preset defaults (--preset, else the
// config file's "preset", else silverbox-desk), config file fields, then
// --seed / --out / --degree / --varied. Without --config or --preset the
// train, bla, eval and slice commands reuse the config recorded in
// <out>/manifest.json.

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sskan/pipeline.hpp"

namespace {

using sskan::ExperimentConfig;
using sskan::OutputLayout;

struct CommonFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<std::size_t> degree;
  std::optional<std::size_t> varied;
};

ExperimentConfig resolve_config(const CommonFlags& f, bool allow_manifest) {
  ExperimentConfig cfg;
  const std::filesystem::path out_dir = f.out.empty() ? "out" : f.out;
  if (!f.config.empty()) {
    cfg = sskan::load_config(f.config, f.preset);
  } else if (!f.preset.empty()) {
    cfg = sskan::preset_config(f.preset);
  } else if (allow_manifest && std::filesystem::exists(OutputLayout{out_dir}.manifest())) {
    const sskan::json m = sskan::parse_json_file(OutputLayout{out_dir}.manifest(), "invalid-config");
    sskan::require(m.is_object() && m.contains("config"), "invalid-config", "manifest.json has no config");
    cfg = sskan::config_from_json(m.at("config"));
  } else {
    cfg = sskan::preset_config("silverbox-desk");
  }
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = cfg.bla.train.seed = *f.seed;
  }
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.degree) cfg.slice.degree = *f.degree;
  if (f.varied) cfg.slice.varied = *f.varied;
  sskan::validate_config(cfg);
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_outcome(const char* what, const sskan::TrainOutcome& o, double secs) {
  const auto& e = o.report.epochs.back();
  std::printf("%s: %zu epochs in %.1f s\n", what, o.report.epochs.size(), secs);
  std::printf("  final fit rmse   %.6g (normalized)  %.6g (physical)\n", e.train_rmse, e.train_rmse_phys);
  std::printf("  train rmse       %.6g (normalized)  %.6g (physical)\n", o.metrics.train_rmse_norm,
              o.metrics.train_rmse);
  std::printf("  test rmse        %.6g (normalized)  %.6g (physical)\n", o.metrics.test_rmse_norm,
              o.metrics.test_rmse);
}

int cmd_generate(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f, false);
  const OutputLayout out{cfg.output_dir};
  const sskan::GeneratedData g = sskan::run_generate(cfg, out);
  std::printf("generated %s: train %zu, test %zu samples at %.6g Hz -> %s\n", g.provenance.c_str(),
              g.data.train.size(), g.data.test.size(), g.data.train.sample_rate, out.dir.string().c_str());
  return 0;
}

int cmd_train(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f, true);
  const auto t0 = std::chrono::steady_clock::now();
  const sskan::TrainOutcome o = sskan::run_train(cfg, OutputLayout{cfg.output_dir});
  print_outcome(cfg.is_wh() ? "cascade" : "ss-kan", o, seconds_since(t0));
  return 0;
}

int cmd_bla(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f, true);
  const auto t0 = std::chrono::steady_clock::now();
  const sskan::TrainOutcome o = sskan::run_bla(cfg, OutputLayout{cfg.output_dir});
  print_outcome("bla", o, seconds_since(t0));
  return 0;
}

std::filesystem::path checkpoint_path(const CommonFlags& f, const ExperimentConfig& cfg) {
  return f.checkpoint.empty() ? OutputLayout{cfg.output_dir}.checkpoint() : std::filesystem::path(f.checkpoint);
}

int cmd_eval(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f, true);
  const OutputLayout out{cfg.output_dir};
  const sskan::Checkpoint ck = sskan::load_checkpoint(checkpoint_path(f, cfg));
  const sskan::EvalOutcome o = sskan::run_eval(ck, cfg, sskan::load_generated(out), out);
  std::printf("%s: train rmse %.6g, test rmse %.6g, extrapolation rmse %.6g (%zu samples) -> %s\n",
              ck.role.c_str(), o.metrics.train_rmse, o.metrics.test_rmse, o.metrics.extrapolation_rmse,
              o.metrics.extrapolation_samples, out.metrics(ck.role).string().c_str());
  return 0;
}

int cmd_slice(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f, true);
  const OutputLayout out{cfg.output_dir};
  const sskan::Checkpoint ck = sskan::load_checkpoint(checkpoint_path(f, cfg));
  const sskan::SliceOutcome o = sskan::run_slice(ck, cfg, sskan::load_generated(out), out);
  std::printf("slice of %s over [%.6g, %.6g] -> %s\n", o.report.varied_name.c_str(), o.report.grid.front(),
              o.report.grid.back(), o.csv.string().c_str());
  if (o.report.fit) {
    std::printf("  degree-%zu fit of channel %zu:", o.report.fit->degree, o.report.fit->channel + 1);
    for (double c : o.report.fit->coefficients) std::printf(" %.6g", c);
    std::printf("\n");
  }
  if (o.report.oracle)
    std::printf("  aligned to oracle: sup error %.6g (%.4g of the oracle range)\n", o.report.oracle->aligned_max_error,
                o.report.oracle->relative_max_error);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"State-space Kolmogorov-Arnold network system identification"};
  app.require_subcommand(1);
  CommonFlags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--preset", f.preset,
                    "silverbox-desk | silverbox-synthetic | wh-desk | wh-synthetic | external");
    sub->add_option("--seed", f.seed, "Seed for data, initialization and training");
    sub->add_option("--out", f.out, "Output directory (default: out)");
  };
  auto* gen = app.add_subcommand("generate", "Write train/test CSVs and manifest.json");
  auto* train = app.add_subcommand("train", "Train the preset's model; writes checkpoint.json and report.csv");
  auto* bla = app.add_subcommand("bla", "Fit the linear baseline; writes bla_checkpoint.json and bla_report.csv");
  auto* eval = app.add_subcommand("eval", "Free-run RMSE metrics and per-sample error series");
  auto* slc = app.add_subcommand("slice", "One-input slices of the learned network with polynomial fit");
  for (auto* s : {gen, train, bla, eval, slc}) add_common(s);
  for (auto* s : {eval, slc}) s->add_option("--checkpoint", f.checkpoint, "Checkpoint (default: <out>/checkpoint.json)");
  slc->add_option("--degree", f.degree, "Polynomial degree of the slice fit");
  slc->add_option("--varied", f.varied, "Index of the varied network input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    (void)sskan::thread_limit();
    if (*gen) return cmd_generate(f);
    if (*train) return cmd_train(f);
    if (*bla) return cmd_bla(f);
    if (*eval) return cmd_eval(f);
    if (*slc) return cmd_slice(f);
  } catch (const sskan::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 1;
}
