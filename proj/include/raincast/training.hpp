#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "raincast/features.hpp"
#include "raincast/layers.hpp"
#include "raincast/rng.hpp"

namespace raincast::train {

using data::SequenceSample;

/// Deterministic parallel map over [0, n): each index writes its own slot,
/// so results are independent of the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      int i;
      while ((i = next.fetch_add(1)) < n) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Loss: weighted MSE with extra weight alpha on samples whose log-space
// target reaches the threshold tau (resolved from the training targets'
// 90th percentile).
// ---------------------------------------------------------------------------

struct LossConfig {
  double tau_percentile = 90.0;
  double alpha = 5.0;
  double tau = 0.0;  // resolved threshold, log1p space

  double weight(double y) const { return y >= tau ? alpha : 1.0; }
};

/// 90th-percentile threshold over the training targets, linearly
/// interpolated (same quantile rule as the scaler).
inline double compute_tau(std::vector<double> targets, double percentile = 90.0) {
  if (targets.size() < 10)
    throw std::invalid_argument("compute_tau: need at least 10 training targets, have " +
                                std::to_string(targets.size()));
  std::sort(targets.begin(), targets.end());
  return data::quantile_sorted(targets, percentile / 100.0);
}

inline double weighted_mse(const std::vector<double>& y, const std::vector<double>& y_hat,
                           const LossConfig& cfg) {
  if (y.empty()) throw std::invalid_argument("weighted_mse: empty batch");
  if (y.size() != y_hat.size()) throw std::invalid_argument("weighted_mse: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - y_hat[i];
    acc += cfg.weight(y[i]) * r * r;
  }
  return acc / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Moment tensors mirror the parameter layout.
// ---------------------------------------------------------------------------

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Tensor> m, v;

  static OptimizerState init(const nn::ModelParams& params) {
    OptimizerState s;
    params.for_each([&](const char*, const Tensor& t) {
      s.m.emplace_back(t.shape);
      s.v.emplace_back(t.shape);
    });
    return s;
  }
};

/// One bias-corrected Adam update over the full parameter set. `grads` must
/// follow ModelParams::for_each order. NaN gradients abort with the
/// offending parameter named.
inline void adam_step(nn::ModelParams& params, const std::vector<Tensor>& grads,
                      OptimizerState& state, double lr) {
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  int ix = 0;
  params.for_each([&](const char* name, Tensor& p) {
    const Tensor& g = grads[static_cast<std::size_t>(ix)];
    Tensor& m = state.m[static_cast<std::size_t>(ix)];
    Tensor& v = state.v[static_cast<std::size_t>(ix)];
    if (g.shape != p.shape)
      throw std::invalid_argument(std::string("adam: gradient shape mismatch for ") + name);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      if (std::isnan(gi))
        throw std::runtime_error(std::string("adam: NaN gradient in parameter '") + name +
                                 "' at step " + std::to_string(state.step));
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    ++ix;
  });
}

// ---------------------------------------------------------------------------
// Batched prediction.
// ---------------------------------------------------------------------------

inline std::vector<double> predict_all(const nn::ModelConfig& cfg, const nn::ModelParams& params,
                                       const std::vector<const SequenceSample*>& samples,
                                       int threads = 1) {
  std::vector<double> out(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads,
               [&](int i) { out[static_cast<std::size_t>(i)] =
                                nn::predict(cfg, params, samples[static_cast<std::size_t>(i)]->x); });
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation metrics in mm/day, computed after the inverse target
// transform. The extreme subset holds samples whose observed rainfall
// reaches expm1(tau); when it is empty the extreme RMSE is absent.
// ---------------------------------------------------------------------------

struct Metrics {
  double rmse = 0.0;
  std::optional<double> extreme_rmse;
  int n_samples = 0;
  int n_extreme = 0;
  int n_clamped = 0;  // predictions clipped at 0 mm/day
};

inline Metrics evaluate_predictions(const std::vector<double>& y_log,
                                    const std::vector<double>& pred_log, double tau_log) {
  if (y_log.empty()) throw std::invalid_argument("evaluate: no samples");
  Metrics m;
  m.n_samples = static_cast<int>(y_log.size());
  const double tau_mm = std::expm1(tau_log);
  double acc = 0.0, acc_ext = 0.0;
  for (std::size_t i = 0; i < y_log.size(); ++i) {
    bool clamped = false;
    const double pred_mm = data::expm1_inverse(pred_log[i], &clamped);
    if (clamped) ++m.n_clamped;
    const double obs_mm = std::expm1(y_log[i]);
    const double r = obs_mm - pred_mm;
    acc += r * r;
    if (obs_mm >= tau_mm) {
      ++m.n_extreme;
      acc_ext += r * r;
    }
  }
  m.rmse = std::sqrt(acc / m.n_samples);
  if (m.n_extreme > 0) m.extreme_rmse = std::sqrt(acc_ext / m.n_extreme);
  return m;
}

inline Metrics evaluate(const nn::ModelConfig& cfg, const nn::ModelParams& params,
                        const std::vector<const SequenceSample*>& samples, double tau_log,
                        int threads = 1) {
  std::vector<double> y;
  y.reserve(samples.size());
  for (const auto* s : samples) y.push_back(s->y);
  return evaluate_predictions(y, predict_all(cfg, params, samples, threads), tau_log);
}

/// RMSE in mm/day of the constant predictor fixed at the mean of the
/// training targets (log space). The reference floor any trained model has
/// to beat.
inline double mean_predictor_rmse(const std::vector<const SequenceSample*>& train,
                                  const std::vector<const SequenceSample*>& eval_samples) {
  if (train.empty() || eval_samples.empty())
    throw std::invalid_argument("mean_predictor_rmse: empty partition");
  double mean = 0.0;
  for (const auto* s : train) mean += s->y;
  mean /= static_cast<double>(train.size());
  const double pred_mm = std::expm1(mean);
  double acc = 0.0;
  for (const auto* s : eval_samples) {
    const double r = std::expm1(s->y) - pred_mm;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(eval_samples.size()));
}

// ---------------------------------------------------------------------------
// Training protocol: Adam over mini-batches, early stopping on validation
// loss (patience 3), learning-rate halving on plateau, best-epoch weight
// restore.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int early_stop_patience = 3;
  double plateau_factor = 0.5;
  int plateau_patience = 2;
  double min_delta = 1e-6;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int threads = 1;
  // Start the dense bias at the training-target mean. Targets live in
  // log1p space with a strictly positive mean, which a zero-initialized
  // head would spend most of a short budget crawling toward.
  bool head_bias_warm_start = true;

  void validate() const {
    if (epochs < 1 || early_stop_patience < 1 || plateau_patience < 1 || batch_size < 1)
      throw std::invalid_argument("train config: counts must be positive");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
      throw std::invalid_argument("train config: plateau factor must be in (0,1)");
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: bad learning rate");
  }
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
};

struct FitResult {
  nn::ModelParams params;  // best-validation-epoch weights
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochStats> history;
  bool early_stopped = false;
};

class TrainingDiverged : public std::runtime_error {
public:
  explicit TrainingDiverged(int epoch)
      : std::runtime_error("training diverged: validation loss is not finite at epoch " +
                           std::to_string(epoch)),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

private:
  int epoch_;
};

namespace detail {

struct SampleGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

/// Forward + backward for one sample: loss contribution w * (y - pred)^2
/// and its parameter gradients.
inline SampleGrads sample_backward(const nn::ModelConfig& cfg, const nn::ModelParams& params,
                                   const SequenceSample& s, const LossConfig& loss,
                                   const Tensor* dropout_mask) {
  ad::Tape t;
  nn::TapeParams tp = nn::stage_params(t, params);
  nn::ForwardHandles fh = nn::model_forward(t, s.x, cfg, tp, dropout_mask);
  int resid = t.sub(fh.prediction, t.leaf(Tensor::scalar(s.y)));
  int weighted = t.scale(t.mul(resid, resid), loss.weight(s.y));
  t.backward(weighted);
  SampleGrads out;
  out.loss = t.val(weighted)[0];
  for (const Tensor* g : nn::param_grads(t, tp)) out.grads.push_back(*g);
  return out;
}

}  // namespace detail

inline FitResult fit(const nn::ModelConfig& cfg, nn::ModelParams params,
                     const std::vector<const SequenceSample*>& train_samples,
                     const std::vector<const SequenceSample*>& val_samples,
                     const TrainConfig& tc, const LossConfig& loss) {
  tc.validate();
  if (train_samples.empty() || val_samples.empty())
    throw std::invalid_argument("fit: empty train or validation partition");

  Rng root(tc.seed);
  Rng shuffle_rng = root.fork("shuffle");
  Rng dropout_rng = root.fork("dropout");

  if (tc.head_bias_warm_start) {
    double y_mean = 0.0;
    for (const auto* s : train_samples) y_mean += s->y;
    params.head.bias[0] = y_mean / static_cast<double>(train_samples.size());
  }

  OptimizerState opt = OptimizerState::init(params);
  double lr = tc.learning_rate;

  std::vector<double> val_y;
  for (const auto* s : val_samples) val_y.push_back(s->y);

  FitResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  nn::ModelParams best = params;
  int barren = 0;  // epochs since last validation improvement

  std::vector<int> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int n_params = [&] {
    int n = 0;
    params.for_each([&](const char*, Tensor&) { ++n; });
    return n;
  }();

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_acc = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const int b = static_cast<int>(std::min<std::size_t>(tc.batch_size, order.size() - start));

      // masks are drawn serially per batch so results do not depend on
      // the thread count
      std::vector<Tensor> masks;
      if (cfg.dropout > 0.0)
        for (int i = 0; i < b; ++i)
          masks.push_back(nn::make_dropout_mask(cfg.convlstm_filters, cfg.dropout, dropout_rng));

      std::vector<detail::SampleGrads> per_sample(static_cast<std::size_t>(b));
      parallel_for(b, tc.threads, [&](int i) {
        const SequenceSample& s = *train_samples[static_cast<std::size_t>(order[start + i])];
        per_sample[static_cast<std::size_t>(i)] = detail::sample_backward(
            cfg, params, s, loss, masks.empty() ? nullptr : &masks[static_cast<std::size_t>(i)]);
      });

      // ordered reduction: sum per-sample gradients in batch order
      std::vector<Tensor> grads;
      grads.reserve(static_cast<std::size_t>(n_params));
      for (int pi = 0; pi < n_params; ++pi) {
        Tensor acc = per_sample[0].grads[static_cast<std::size_t>(pi)];
        for (int i = 1; i < b; ++i) {
          const Tensor& g = per_sample[static_cast<std::size_t>(i)].grads[static_cast<std::size_t>(pi)];
          for (std::int64_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
        }
        for (double& v : acc.data) v /= b;
        grads.push_back(std::move(acc));
      }
      for (int i = 0; i < b; ++i) train_acc += per_sample[static_cast<std::size_t>(i)].loss;

      adam_step(params, grads, opt, lr);
    }

    const std::vector<double> val_pred = predict_all(cfg, params, val_samples, tc.threads);
    const double val_loss = weighted_mse(val_y, val_pred, loss);
    if (!std::isfinite(val_loss)) throw TrainingDiverged(epoch);

    result.history.push_back(
        {epoch, train_acc / static_cast<double>(train_samples.size()), val_loss, lr});

    if (val_loss < result.best_val_loss - tc.min_delta) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = params;
      barren = 0;
    } else {
      ++barren;
      if (barren >= tc.early_stop_patience) {
        result.early_stopped = true;
        break;
      }
      if (barren % tc.plateau_patience == 0) lr *= tc.plateau_factor;
    }
  }

  result.params = std::move(best);
  if (result.best_epoch == 0) {
    // validation never improved on infinity; keep the last epoch's weights
    result.best_epoch = static_cast<int>(result.history.size());
    result.params = std::move(params);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Expanding-window time-series cross-validation: with k folds the series is
// cut into k+1 chunks; fold j trains on the first j chunks and tests on
// chunk j+1. Validation for early stopping is carved from the tail of each
// fold's training span.
// ---------------------------------------------------------------------------

struct FoldResult {
  int fold = 0;  // 1-based
  int val_begin = 0;  // sample index ranges: train [0,val_begin), val
  int train_end = 0;  // [val_begin,train_end), test [train_end,test_end)
  int test_end = 0;
  int best_epoch = 0;
  double tau = 0.0;
  std::vector<EpochStats> history;
  Metrics test_metrics;
  nn::ModelParams params;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double mean_rmse = 0.0;
};

inline CvResult ts_cross_validate(const std::vector<const SequenceSample*>& samples, int k,
                                  const nn::ModelConfig& cfg, const TrainConfig& tc,
                                  double alpha, double tau_percentile) {
  const int n = static_cast<int>(samples.size());
  const int chunk = n / (k + 1);
  if (k < 2 || chunk < 15)
    throw std::invalid_argument("cross-validation: too few samples for " + std::to_string(k) +
                                " expanding folds");
  CvResult out;
  Rng root(tc.seed);
  for (int j = 1; j <= k; ++j) {
    const int train_end = j * chunk;
    const int test_end = (j + 1) * chunk;
    const int val_begin = train_end - std::max(1, static_cast<int>(0.15 * train_end));

    std::vector<const SequenceSample*> tr(samples.begin(), samples.begin() + val_begin);
    std::vector<const SequenceSample*> va(samples.begin() + val_begin,
                                          samples.begin() + train_end);
    std::vector<const SequenceSample*> te(samples.begin() + train_end,
                                          samples.begin() + test_end);

    LossConfig loss;
    loss.alpha = alpha;
    loss.tau_percentile = tau_percentile;
    std::vector<double> tr_y;
    for (const auto* s : tr) tr_y.push_back(s->y);
    loss.tau = compute_tau(tr_y, tau_percentile);

    TrainConfig fold_tc = tc;
    fold_tc.seed = root.fork("fold" + std::to_string(j)).seed();
    nn::ModelParams init = nn::init_weights(cfg, Rng(fold_tc.seed).fork("init"));

    FitResult fr = fit(cfg, std::move(init), tr, va, fold_tc, loss);

    FoldResult fold;
    fold.fold = j;
    fold.val_begin = val_begin;
    fold.train_end = train_end;
    fold.test_end = test_end;
    fold.best_epoch = fr.best_epoch;
    fold.tau = loss.tau;
    fold.history = fr.history;
    fold.test_metrics = evaluate(cfg, fr.params, te, loss.tau, tc.threads);
    fold.params = std::move(fr.params);
    out.folds.push_back(std::move(fold));
  }
  for (const auto& f : out.folds) out.mean_rmse += f.test_metrics.rmse;
  out.mean_rmse /= static_cast<double>(out.folds.size());
  return out;
}

}  // namespace raincast::train
