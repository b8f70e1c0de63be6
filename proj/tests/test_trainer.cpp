#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "scenarios.hpp"
#include "sskan/trainer.hpp"

using namespace sskan;

namespace {

struct SmallProblem {
  SsKanModel model;
  Signal u, y;
};

SmallProblem small_problem(std::uint64_t seed) {
  SmallProblem p;
  p.model = oracle::random_sskan(seed);
  std::mt19937_64 rng(seed);
  p.u = oracle::random_signal(640, 1, rng);
  const SsKanModel teacher = oracle::random_sskan(seed + 50);
  p.y = rollout(teacher, p.u, Vector{0.0, 0.0}).y;
  p.model.normalization = Normalization{};
  return p;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 64;
  c.epochs = 3;
  c.lr0 = 1e-3;
  return c;
}

}  // namespace

TEST(Normalization, EndpointsMapToUnitInterval) {
  const Vector data{-3.0, 0.0, 5.0, 1.0};
  const ChannelMap m = fit_channel(data);
  EXPECT_DOUBLE_EQ(m.scale, 0.25);
  EXPECT_DOUBLE_EQ(m.offset, -0.25);
  EXPECT_DOUBLE_EQ(m.apply(-3.0), -1.0);
  EXPECT_DOUBLE_EQ(m.apply(5.0), 1.0);
  EXPECT_GT(m.apply(6.0), 1.0);
}

TEST(Normalization, RoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-40.0, 90.0);
  Vector data(1000);
  for (double& v : data) v = d(rng);
  const Normalization n = normalize_fit(data, data);
  const Vector mapped = apply_map(n.u, data);
  const auto [lo, hi] = std::minmax_element(mapped.begin(), mapped.end());
  EXPECT_NEAR(*lo, -1.0, 1e-15);
  EXPECT_NEAR(*hi, 1.0, 1e-15);
  const Vector back = invert_map(n.u, mapped);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(back[i], data[i], 1e-12);
}

TEST(Normalization, ZeroRangeChannel) {
  try {
    fit_channel(Vector(10, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "zero-range-channel");
  }
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  Vector p{1.0, -2.0, 3.0};
  const Vector g(3, 0.0);
  AdamWState s(3);
  for (int i = 0; i < 5; ++i) adamw_step(p, g, s, 0.1, AdamWConfig{});
  EXPECT_EQ(p, (Vector{1.0, -2.0, 3.0}));
}

TEST(AdamW, FirstStepHasMagnitudeLr) {
  Vector p{1.0, -2.0, 3.0, 0.5};
  const Vector g{0.3, -4.0, 1e-3, 20.0};
  AdamWState s(4);
  adamw_step(p, g, s, 0.01, AdamWConfig{});
  const Vector before{1.0, -2.0, 3.0, 0.5};
  for (std::size_t i = 0; i < 4; ++i) {
    const double step = before[i] - p[i];
    EXPECT_NEAR(step, 0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-12);
    EXPECT_NEAR(std::abs(step), 0.01, 1e-6);
  }
}

TEST(AdamW, QuadraticDecreasesMonotonically) {
  Vector p(4, 1.0);
  AdamWState s(4);
  auto f = [](const Vector& v) {
    double a = 0.0;
    for (double x : v) a += x * x;
    return a;
  };
  double prev = f(p);
  for (int i = 0; i < 10; ++i) {
    Vector g(4);
    for (std::size_t j = 0; j < 4; ++j) g[j] = 2 * p[j];
    adamw_step(p, g, s, 0.05, AdamWConfig{});
    const double now = f(p);
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(AdamW, ZeroLrIgnoresWeightDecay) {
  Vector p{1.0, -2.0};
  AdamWState s(2);
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  adamw_step(p, Vector{0.7, 0.1}, s, 0.0, cfg);
  EXPECT_EQ(p, (Vector{1.0, -2.0}));
}

TEST(AdamW, DecoupledDecayShrinksParameters) {
  Vector p{1.0, -2.0};
  AdamWState s(2);
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  adamw_step(p, Vector{0.0, 0.0}, s, 0.5, cfg);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], -1.9);
}

TEST(Rmse, KnownValues) {
  const Vector a{1.0, 2.0, 3.0};
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_DOUBLE_EQ(rmse(Vector{1.5, 2.5, 3.5}, a), 0.5);
  try {
    rmse(a, Vector{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "length-mismatch");
  }
}

TEST(Rmse, MatchesTwoPassComputation) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 3.0);
  Vector a(1000), b(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    a[i] = d(rng);
    b[i] = d(rng);
  }
  Vector e(1000);
  for (std::size_t i = 0; i < 1000; ++i) e[i] = a[i] - b[i];
  long double mean_sq = 0.0L;
  for (double v : e) mean_sq += static_cast<long double>(v) * v;
  mean_sq /= 1000.0L;
  EXPECT_NEAR(rmse(a, b), static_cast<double>(std::sqrt(mean_sq)), 1e-12);
}

TEST(TrainConfig, ValidatesBatchSize) {
  TrainConfig c;
  c.batch_size = 900;
  try {
    c.validate(1000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid-config");
  }
  c.batch_size = 800;
  EXPECT_NO_THROW(c.validate(1000));
  c.lr_decay = 1.5;
  EXPECT_THROW(c.validate(1000), Error);
}

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig c;
  c.lr0 = 1e-4;
  c.lr_decay = 0.995;
  EXPECT_DOUBLE_EQ(c.lr_at(0), 1e-4);
  EXPECT_NEAR(c.lr_at(100), 1e-4 * std::pow(0.995, 100), 1e-18);
}

TEST(Train, ReportLengthsAndReproducibility) {
  SmallProblem a = small_problem(3), b = small_problem(3);
  const TrainConfig cfg = small_config();
  const TrainReport ra = train(a.model, a.u, a.y, cfg);
  const TrainReport rb = train(b.model, b.u, b.y, cfg);
  EXPECT_EQ(ra.epochs.size(), cfg.epochs);
  EXPECT_TRUE(ra == rb);
  EXPECT_EQ(ra.final_params, pack(a.model));
}

TEST(Train, LossDecompositionRecomputed) {
  SmallProblem p = small_problem(4);
  TrainConfig cfg = small_config();
  cfg.lambda_l1 = 1e-3;
  cfg.lambda_l2 = 2e-3;
  const TrainReport r = train(p.model, p.u, p.y, cfg);
  const EpochRecord& last = r.epochs.back();
  const std::size_t fit = cfg.fit_length(p.u.rows());
  const Signal pred = rollout(p.model, p.u, Vector{0.0, 0.0}).y;
  double mse = 0.0;
  for (std::size_t k = 0; k < fit; ++k) mse += (pred(k, 0) - p.y(k, 0)) * (pred(k, 0) - p.y(k, 0));
  mse /= static_cast<double>(fit);
  double frob = 0.0;
  for (const Matrix* m : {&p.model.linear.A, &p.model.linear.B, &p.model.linear.C, &p.model.linear.D})
    for (double v : m->values()) frob += v * v;
  double l1 = 0.0;
  p.model.kan_f->for_each_edge([&](const KanEdge& e) {
    for (double c : e.coeffs) l1 += std::abs(c);
    l1 += std::abs(e.w_b) + std::abs(e.w_s);
  });
  EXPECT_NEAR(last.loss, mse + cfg.lambda_l2 * frob + cfg.lambda_l1 * l1, 1e-10);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  SmallProblem p = small_problem(5);
  const Vector before = pack(p.model);
  TrainConfig cfg = small_config();
  cfg.lr0 = 1e-300;
  cfg.adamw.weight_decay = 0.3;
  train(p.model, p.u, p.y, cfg);
  const Vector after = pack(p.model);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i], before[i], 1e-280);
}

TEST(Train, DivergenceCarriesReport) {
  SmallProblem p = small_problem(6);
  TrainConfig cfg = small_config();
  cfg.lr0 = 1e6;
  cfg.epochs = 20;
  try {
    train(p.model, p.u, p.y, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.code(), "diverged");
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_LT(e.report().epochs.size(), cfg.epochs);
  }
}

TEST(Train, GridUpdateEpochsRespanEdges) {
  SmallProblem p = small_problem(7);
  TrainConfig cfg = small_config();
  cfg.grid_update_epochs = {1};
  cfg.epochs = 2;
  const SplineBasis before = p.model.kan_f->layers()[0].edge(0, 0).basis;
  train(p.model, p.u, p.y, cfg);
  EXPECT_FALSE(p.model.kan_f->layers()[0].edge(0, 0).basis == before);
}

TEST(Train, PartialSegmentDropped) {
  // 600 samples: fit part 480, batch 64 gives 7 segments and a dropped 32-sample tail.
  SmallProblem p = small_problem(8);
  Signal u = rows_of(p.u, 0, 600), y = rows_of(p.y, 0, 600);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  EXPECT_EQ(cfg.fit_length(600), 480u);
  const TrainReport r = train(p.model, u, y, cfg);
  EXPECT_GT(r.epochs[0].val_rmse, 0.0);
}

TEST(Train, LinearIdentification) {
  const scenario::LinearIdentification r = scenario::linear_identification();
  EXPECT_LT(r.report.epochs.back().train_rmse, 1e-3);
  EXPECT_LT(r.report.epochs.back().train_rmse, 0.1 * r.report.initial_train_rmse);
  EXPECT_LT(r.test_rmse_norm, 1e-3);
}

TEST(Train, ZeroOutputWithZeroReadoutStaysExact) {
  SsKanModel m;
  std::mt19937_64 rng(9);
  m.linear = oracle::random_linear(2, 1, 1, rng);
  m.linear.C = Matrix(1, 2);
  m.linear.D = Matrix(1, 1);
  const Signal u = oracle::random_signal(512, 1, rng);
  TrainConfig cfg = small_config();
  cfg.lambda_l2 = 1e-3;
  const TrainReport r = train(m, u, Signal(512, 1), cfg);
  EXPECT_EQ(r.epochs.back().train_rmse, 0.0);
  EXPECT_EQ(r.epochs.back().val_rmse, 0.0);
  for (double v : m.linear.C.values()) EXPECT_EQ(v, 0.0);
  for (double v : m.linear.D.values()) EXPECT_EQ(v, 0.0);
}
