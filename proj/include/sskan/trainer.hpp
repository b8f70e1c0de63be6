#pragma once

// AdamW training with sequential truncated-BPTT segments.
//
// Per epoch the fitting part of the (normalized) training record is cut into
// consecutive segments of `batch_size` samples. Each segment is rolled out
// from the final state of the previous one (the first from zero), one
// gradient is taken over it and one AdamW update is applied. A trailing
// partial segment takes no update but is covered by the epoch-end RMSE, which
// is a free run over the whole record. The last `validation_fraction` of the
// record is held out for monitoring.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sskan/diffengine.hpp"
#include "sskan/error.hpp"
#include "sskan/linalg.hpp"
#include "sskan/normalization.hpp"
#include "sskan/ssmodel.hpp"

namespace sskan {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  double lambda_l1 = 1e-4;
  double lambda_l2 = 1e-4;
  double lr0 = 1e-3;
  // lr(epoch) = lr0 * lr_decay^epoch; 1 means constant.
  double lr_decay = 1.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::set<std::size_t> grid_update_epochs;
  AdamWConfig adamw;
  double validation_fraction = 0.2;

  void validate(std::size_t record_length) const {
    require(lambda_l1 >= 0.0 && lambda_l2 >= 0.0, "invalid-config", "train.lambda_l1/lambda_l2 must be >= 0");
    require(lr0 > 0.0, "invalid-config", "train.lr0 must be positive");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "invalid-config", "train.lr_decay must lie in (0, 1]");
    require(epochs >= 1, "invalid-config", "train.epochs must be positive");
    require(validation_fraction >= 0.0 && validation_fraction < 1.0, "invalid-config",
            "train.validation_fraction must lie in [0, 1)");
    require(batch_size >= 1 && batch_size <= fit_length(record_length), "invalid-config",
            "train.batch_size must lie in [1, training length]");
  }

  std::size_t fit_length(std::size_t record_length) const {
    return record_length - static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(record_length)));
  }

  double lr_at(std::size_t epoch) const { return lr0 * std::pow(lr_decay, static_cast<double>(epoch)); }
};

struct AdamWState {
  Vector m;
  Vector v;
  std::size_t t = 0;

  explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One AdamW step with decoupled weight decay and bias-corrected moments.
inline void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state, double lr,
                       const AdamWConfig& cfg) {
  require(params.size() == grads.size() && state.m.size() == params.size(), "length-mismatch",
          "adamw_step: parameter, gradient and moment lengths differ");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] *= 1.0 - lr * cfg.weight_decay;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

inline double rmse(std::span<const double> pred, std::span<const double> data) {
  require(pred.size() == data.size(), "length-mismatch", "rmse: sequences differ in length");
  require(!pred.empty(), "length-mismatch", "rmse: empty sequences");
  double s = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double e = pred[k] - data[k];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mse + l2_term + l1_term at epoch end
  double mse = 0.0;
  double l2_term = 0.0;
  double l1_term = 0.0;
  double mean_segment_loss = 0.0;
  double train_rmse = 0.0;  // normalized units
  double val_rmse = 0.0;
  double train_rmse_phys = 0.0;
  double val_rmse_phys = 0.0;
  double lr = 0.0;
  double seconds = 0.0;

  // Equality ignores wall-clock time.
  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    return a.epoch == b.epoch && a.loss == b.loss && a.mse == b.mse && a.l2_term == b.l2_term &&
           a.l1_term == b.l1_term && a.mean_segment_loss == b.mean_segment_loss && a.train_rmse == b.train_rmse &&
           a.val_rmse == b.val_rmse && a.train_rmse_phys == b.train_rmse_phys &&
           a.val_rmse_phys == b.val_rmse_phys && a.lr == b.lr;
  }
};

struct TrainReport {
  double initial_train_rmse = 0.0;
  double initial_val_rmse = 0.0;
  std::vector<EpochRecord> epochs;
  Vector final_params;

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainReport report)
      : Error("diverged", message), report_(std::move(report)) {}
  const TrainReport& report() const noexcept { return report_; }

 private:
  TrainReport report_;
};

struct RecordRmse {
  double fit = 0.0;
  double val = 0.0;
  double fit_phys = 0.0;
  double val_phys = 0.0;
  double mse_fit = 0.0;
};

// Free run over the whole record from a zero state; RMSE on the fitting part
// and on the held-out tail, in normalized and physical units.
template <typename Model>
RecordRmse evaluate_record(const Model& model, const Signal& u, const Signal& y, std::size_t fit_len,
                           const ChannelMap& y_map) {
  const Vector x0(state_size(model), 0.0);
  const Signal pred = simulate_output(model, u, x0);
  const Vector p = signal_column(pred);
  const Vector d = signal_column(y);
  RecordRmse r;
  const std::span<const double> ps(p), ds(d);
  r.fit = rmse(ps.subspan(0, fit_len), ds.subspan(0, fit_len));
  r.mse_fit = r.fit * r.fit;
  const Vector pp = invert_map(y_map, p);
  const Vector dp = invert_map(y_map, d);
  r.fit_phys = rmse(std::span<const double>(pp).subspan(0, fit_len), std::span<const double>(dp).subspan(0, fit_len));
  if (fit_len < p.size()) {
    r.val = rmse(ps.subspan(fit_len), ds.subspan(fit_len));
    r.val_phys = rmse(std::span<const double>(pp).subspan(fit_len), std::span<const double>(dp).subspan(fit_len));
  }
  return r;
}

inline Signal rows_of(const Signal& s, std::size_t begin, std::size_t count) {
  Signal out(count, s.cols());
  std::copy(&s(begin, 0), &s(begin, 0) + count * s.cols(), out.values().begin());
  return out;
}

// `u`, `y` are the normalized training record; `model.normalization` maps
// back to physical units for reporting.
template <typename Model>
TrainReport train(Model& model, const Signal& u, const Signal& y, const TrainConfig& cfg) {
  require(u.rows() == y.rows() && u.rows() > 0, "length-mismatch", "training input and output lengths differ");
  cfg.validate(u.rows());
  const std::size_t fit_len = cfg.fit_length(u.rows());
  const std::size_t n_segments = fit_len / cfg.batch_size;
  const Penalty pen{cfg.lambda_l1, cfg.lambda_l2};
  const ChannelMap& y_map = model.normalization.y;

  std::vector<Signal> seg_u, seg_y;
  for (std::size_t s = 0; s < n_segments; ++s) {
    seg_u.push_back(rows_of(u, s * cfg.batch_size, cfg.batch_size));
    seg_y.push_back(rows_of(y, s * cfg.batch_size, cfg.batch_size));
  }
  const Signal u_fit = rows_of(u, 0, fit_len);

  TrainReport report;
  {
    const RecordRmse r0 = evaluate_record(model, u, y, fit_len, y_map);
    report.initial_train_rmse = r0.fit;
    report.initial_val_rmse = r0.val;
  }

  Vector params = pack(model);
  AdamWState opt(params.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t segment = 0;
    try {
      if (cfg.grid_update_epochs.contains(epoch)) {
        update_model_grids(model, u_fit, Vector(state_size(model), 0.0));
        params = pack(model);
      }
      const double lr = cfg.lr_at(epoch);
      Vector state(state_size(model), 0.0);
      double seg_loss_sum = 0.0;
      for (segment = 0; segment < n_segments; ++segment) {
        SegmentGradient sg = loss_and_gradient(model, seg_u[segment], seg_y[segment], state, pen);
        seg_loss_sum += sg.loss;
        state = std::move(sg.final_state);
        adamw_step(params, sg.grad, opt, lr, cfg.adamw);
        unpack(model, params);
      }
      const RecordRmse r = evaluate_record(model, u, y, fit_len, y_map);
      EpochRecord rec;
      rec.epoch = epoch;
      rec.mse = r.mse_fit;
      rec.l2_term = cfg.lambda_l2 * linear_frobenius(model);
      rec.l1_term = cfg.lambda_l1 * kan_l1(model);
      rec.loss = rec.mse + rec.l2_term + rec.l1_term;
      rec.mean_segment_loss = n_segments ? seg_loss_sum / static_cast<double>(n_segments) : 0.0;
      rec.train_rmse = r.fit;
      rec.val_rmse = r.val;
      rec.train_rmse_phys = r.fit_phys;
      rec.val_rmse_phys = r.val_phys;
      rec.lr = lr;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!std::isfinite(rec.loss)) fail("non-finite-loss", "epoch-end loss is not finite");
      report.epochs.push_back(rec);
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const Error& e) {
      if (e.code() != "non-finite-loss" && e.code() != "non-finite-state") throw;
      report.final_params = pack(model);
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", segment " +
                                 std::to_string(segment) + ": " + e.what(),
                             std::move(report));
    }
  }
  report.final_params = pack(model);
  return report;
}

}  // namespace sskan
