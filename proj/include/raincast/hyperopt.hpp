#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/rng.hpp"
#include "raincast/training.hpp"

namespace raincast::tune {

/// Tuning domain: categorical filter counts, kernel sizes and learning
/// rates, one continuous dropout axis.
struct SearchSpace {
  std::vector<int> conv_filters{32, 64, 128};
  std::vector<int> convlstm_filters{16, 32, 64};
  double dropout_min = 0.0;
  double dropout_max = 0.5;
  std::vector<double> learning_rates{1e-3, 1e-4};
  std::vector<int> kernel_sizes{3, 5};

  void validate() const {
    if (conv_filters.empty() || convlstm_filters.empty() || learning_rates.empty() ||
        kernel_sizes.empty())
      throw std::invalid_argument("search space: empty categorical dimension");
    if (dropout_min < 0.0 || dropout_max > 0.5 || dropout_min > dropout_max)
      throw std::invalid_argument("search space: dropout bounds outside [0,0.5]");
  }
};

struct CandidateConfig {
  int conv_filters = 32;
  int convlstm_filters = 16;
  int kernel_size = 3;
  double dropout = 0.0;
  double learning_rate = 1e-3;
};

struct Trial {
  int index = 0;
  CandidateConfig config;
  double objective = 0.0;  // best validation loss of the trial's fit
  std::string status = "ok";  // ok | diverged
  double wall_time_s = 0.0;
};

// ---------------------------------------------------------------------------
// Sequential model-based sampler in the TPE family. The first `n_startup`
// trials cover the space quasi-randomly (shuffled cycling through each
// categorical dimension, stratified dropout bins), which guarantees every
// categorical value appears. Later trials split the history at the
// gamma-quantile of the objective, model good and bad sets per dimension
// (smoothed counts for categoricals, a Gaussian kernel density for
// dropout), and take the candidate maximizing the good/bad density ratio.
// ---------------------------------------------------------------------------

class TpeSampler {
public:
  TpeSampler(SearchSpace space, int n_startup, double gamma, Rng rng)
      : space_(std::move(space)),
        n_startup_(n_startup),
        gamma_(gamma),
        rng_(rng),
        startup_rng_(rng.fork("startup")) {
    space_.validate();
    if (n_startup_ < 1) throw std::invalid_argument("sampler: n_startup must be >= 1");
    if (gamma_ <= 0.0 || gamma_ >= 1.0)
      throw std::invalid_argument("sampler: gamma must be in (0,1)");
    std::vector<int> bins(static_cast<std::size_t>(n_startup_));
    for (int i = 0; i < n_startup_; ++i) bins[static_cast<std::size_t>(i)] = i;
    startup_rng_.shuffle(bins);
    dropout_bins_ = bins;
  }

  CandidateConfig sample() {
    const int i = n_sampled_++;
    if (i < n_startup_ || good_pool_empty()) return startup_sample(i);
    return model_sample();
  }

  void observe(const CandidateConfig& cfg, double objective, bool ok) {
    if (ok) history_.push_back({cfg, objective});
  }

private:
  struct Observation {
    CandidateConfig cfg;
    double objective;
  };

  bool good_pool_empty() const { return history_.empty(); }

  template <typename T>
  T cycle_pick(const std::vector<T>& values, int trial_ix, std::vector<T>& order) {
    const int k = static_cast<int>(values.size());
    if (trial_ix % k == 0) {
      order = values;
      startup_rng_.shuffle(order);
    }
    return order[static_cast<std::size_t>(trial_ix % k)];
  }

  CandidateConfig startup_sample(int i) {
    CandidateConfig c;
    c.conv_filters = cycle_pick(space_.conv_filters, i, conv_order_);
    c.convlstm_filters = cycle_pick(space_.convlstm_filters, i, lstm_order_);
    c.kernel_size = cycle_pick(space_.kernel_sizes, i, kernel_order_);
    c.learning_rate = cycle_pick(space_.learning_rates, i, lr_order_);
    const double width = (space_.dropout_max - space_.dropout_min) / n_startup_;
    const int bin = dropout_bins_[static_cast<std::size_t>(i % n_startup_)];
    c.dropout = space_.dropout_min + (bin + startup_rng_.uniform()) * width;
    c.dropout = std::clamp(c.dropout, space_.dropout_min, space_.dropout_max);
    return c;
  }

  // smoothed categorical law of `value` within a set of observations
  template <typename T, typename Get>
  static double cat_prob(const std::vector<const Observation*>& set, const std::vector<T>& values,
                         T value, Get&& get) {
    double count = 0.0;
    for (const auto* o : set)
      if (get(o->cfg) == value) count += 1.0;
    return (count + 1.0) / (static_cast<double>(set.size()) + static_cast<double>(values.size()));
  }

  static double kde_pdf(const std::vector<const Observation*>& set, double lo, double hi,
                        double x) {
    // Gaussian kernels at observed dropouts plus one uniform prior component
    const double range = hi - lo;
    double mean = 0.0;
    for (const auto* o : set) mean += o->cfg.dropout;
    mean /= static_cast<double>(set.size());
    double var = 0.0;
    for (const auto* o : set) var += (o->cfg.dropout - mean) * (o->cfg.dropout - mean);
    var /= static_cast<double>(set.size());
    const double scott = 1.06 * std::sqrt(var) *
                         std::pow(static_cast<double>(set.size()), -0.2);
    const double bw = std::max(range / 20.0, scott);
    const double prior_w = 1.0 / (static_cast<double>(set.size()) + 1.0);
    double pdf = prior_w / range;
    const double kw = (1.0 - prior_w) / static_cast<double>(set.size());
    for (const auto* o : set) {
      const double z = (x - o->cfg.dropout) / bw;
      pdf += kw * std::exp(-0.5 * z * z) / (bw * 2.5066282746310002);
    }
    return pdf;
  }

  CandidateConfig model_sample() {
    // split history at the gamma quantile of the objective
    std::vector<const Observation*> sorted;
    for (const auto& o : history_) sorted.push_back(&o);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Observation* a, const Observation* b) {
                       return a->objective < b->objective;
                     });
    const int n_good = std::max(1, static_cast<int>(std::ceil(
                                       gamma_ * static_cast<double>(sorted.size()))));
    std::vector<const Observation*> good(sorted.begin(), sorted.begin() + n_good);
    std::vector<const Observation*> bad(sorted.begin() + n_good, sorted.end());
    if (bad.empty()) bad = good;  // degenerate early history

    const double lo = space_.dropout_min, hi = space_.dropout_max;
    CandidateConfig best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int cand = 0; cand < n_candidates_; ++cand) {
      CandidateConfig c;
      c.conv_filters = draw_categorical(space_.conv_filters, good,
                                        [](const CandidateConfig& k) { return k.conv_filters; });
      c.convlstm_filters =
          draw_categorical(space_.convlstm_filters, good,
                           [](const CandidateConfig& k) { return k.convlstm_filters; });
      c.kernel_size = draw_categorical(space_.kernel_sizes, good,
                                       [](const CandidateConfig& k) { return k.kernel_size; });
      c.learning_rate = draw_categorical(space_.learning_rates, good,
                                         [](const CandidateConfig& k) { return k.learning_rate; });
      c.dropout = draw_dropout(good, lo, hi);

      double score = 0.0;
      score += std::log(cat_prob(good, space_.conv_filters, c.conv_filters,
                                 [](const CandidateConfig& k) { return k.conv_filters; })) -
               std::log(cat_prob(bad, space_.conv_filters, c.conv_filters,
                                 [](const CandidateConfig& k) { return k.conv_filters; }));
      score += std::log(cat_prob(good, space_.convlstm_filters, c.convlstm_filters,
                                 [](const CandidateConfig& k) { return k.convlstm_filters; })) -
               std::log(cat_prob(bad, space_.convlstm_filters, c.convlstm_filters,
                                 [](const CandidateConfig& k) { return k.convlstm_filters; }));
      score += std::log(cat_prob(good, space_.kernel_sizes, c.kernel_size,
                                 [](const CandidateConfig& k) { return k.kernel_size; })) -
               std::log(cat_prob(bad, space_.kernel_sizes, c.kernel_size,
                                 [](const CandidateConfig& k) { return k.kernel_size; }));
      score += std::log(cat_prob(good, space_.learning_rates, c.learning_rate,
                                 [](const CandidateConfig& k) { return k.learning_rate; })) -
               std::log(cat_prob(bad, space_.learning_rates, c.learning_rate,
                                 [](const CandidateConfig& k) { return k.learning_rate; }));
      score += std::log(kde_pdf(good, lo, hi, c.dropout)) - std::log(kde_pdf(bad, lo, hi, c.dropout));

      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    return best;
  }

  template <typename T, typename Get>
  T draw_categorical(const std::vector<T>& values, const std::vector<const Observation*>& good,
                     Get&& get) {
    std::vector<double> weights;
    for (const T& v : values) weights.push_back(cat_prob(good, values, v, get));
    double total = 0.0;
    for (double w : weights) total += w;
    double u = rng_.uniform() * total;
    for (std::size_t i = 0; i < values.size(); ++i) {
      u -= weights[i];
      if (u <= 0.0) return values[i];
    }
    return values.back();
  }

  double draw_dropout(const std::vector<const Observation*>& good, double lo, double hi) {
    const double prior_w = 1.0 / (static_cast<double>(good.size()) + 1.0);
    if (rng_.uniform() < prior_w) return rng_.uniform(lo, hi);
    const auto pick = static_cast<std::size_t>(rng_.uniform_index(good.size()));
    double mean = 0.0;
    for (const auto* o : good) mean += o->cfg.dropout;
    mean /= static_cast<double>(good.size());
    double var = 0.0;
    for (const auto* o : good) var += (o->cfg.dropout - mean) * (o->cfg.dropout - mean);
    var /= static_cast<double>(good.size());
    const double scott =
        1.06 * std::sqrt(var) * std::pow(static_cast<double>(good.size()), -0.2);
    const double bw = std::max((hi - lo) / 20.0, scott);
    return std::clamp(good[pick]->cfg.dropout + bw * rng_.normal(), lo, hi);
  }

  SearchSpace space_;
  int n_startup_;
  double gamma_;
  int n_candidates_ = 24;
  Rng rng_;
  Rng startup_rng_;
  std::vector<Observation> history_;
  int n_sampled_ = 0;
  std::vector<int> conv_order_, lstm_order_, kernel_order_;
  std::vector<double> lr_order_;
  std::vector<int> dropout_bins_;
};

// ---------------------------------------------------------------------------
// Tuning protocol: n_trials fit-and-evaluate cycles, objective = best
// validation loss under early stopping. The trial log is the full record.
// ---------------------------------------------------------------------------

struct TuneOptions {
  int n_trials = 20;
  int n_startup = 8;
  double gamma = 0.3;
  std::uint64_t seed = 1;
  bool log_wall_time = false;  // keep the persisted log byte-reproducible
};

struct TuneResult {
  std::vector<Trial> trials;
  int best_index = -1;

  const Trial& best() const {
    if (best_index < 0) throw std::logic_error("tune: no completed trials");
    return trials[static_cast<std::size_t>(best_index)];
  }
};

/// Raised when no trial completes; carries the full trial log so callers
/// can persist it before propagating the failure.
class AllTrialsDiverged : public std::runtime_error {
public:
  explicit AllTrialsDiverged(std::vector<Trial> trials)
      : std::runtime_error("tune: every trial diverged"), trials_(std::move(trials)) {}
  const std::vector<Trial>& trials() const { return trials_; }

private:
  std::vector<Trial> trials_;
};

/// Objective evaluation for one candidate; returns best validation loss.
using TrialObjective = std::function<double(const CandidateConfig&, std::uint64_t trial_seed)>;

/// Generic tuning loop over an arbitrary objective (tests use toy
/// objectives; the CLI passes a fit-and-evaluate closure).
inline TuneResult tune_objective(const SearchSpace& space, const TuneOptions& opt,
                                 const TrialObjective& objective) {
  Rng root(opt.seed);
  TpeSampler sampler(space, opt.n_startup, opt.gamma, root.fork("sampler"));
  TuneResult out;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int i = 0; i < opt.n_trials; ++i) {
    Trial trial;
    trial.index = i;
    trial.config = sampler.sample();
    const std::uint64_t trial_seed = root.fork("trial" + std::to_string(i)).seed();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      trial.objective = objective(trial.config, trial_seed);
      if (!std::isfinite(trial.objective)) throw train::TrainingDiverged(0);
      trial.status = "ok";
    } catch (const train::TrainingDiverged&) {
      trial.objective = std::numeric_limits<double>::infinity();
      trial.status = "diverged";
    }
    trial.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    sampler.observe(trial.config, trial.objective, trial.status == "ok");
    if (trial.status == "ok" && trial.objective < best_obj) {
      best_obj = trial.objective;
      out.best_index = i;
    }
    out.trials.push_back(trial);
  }
  if (out.best_index < 0) throw AllTrialsDiverged(std::move(out.trials));
  return out;
}

/// Standard tuning entry: candidates train on `train` and are scored by
/// validation loss on `val`, with the loss threshold resolved from the
/// training targets once.
inline TuneResult tune_model(const std::vector<const train::SequenceSample*>& train_samples,
                       const std::vector<const train::SequenceSample*>& val_samples,
                       const SearchSpace& space, const TuneOptions& opt,
                       const nn::ModelConfig& dims, const train::TrainConfig& base_tc,
                       double alpha, double tau_percentile) {
  std::vector<double> train_y;
  for (const auto* s : train_samples) train_y.push_back(s->y);
  train::LossConfig loss;
  loss.alpha = alpha;
  loss.tau_percentile = tau_percentile;
  loss.tau = train::compute_tau(train_y, tau_percentile);

  return tune_objective(space, opt, [&](const CandidateConfig& c, std::uint64_t trial_seed) {
    nn::ModelConfig cfg = dims;
    cfg.conv_filters = c.conv_filters;
    cfg.convlstm_filters = c.convlstm_filters;
    cfg.kernel_size = c.kernel_size;
    cfg.dropout = c.dropout;
    cfg.validate();
    train::TrainConfig tc = base_tc;
    tc.learning_rate = c.learning_rate;
    tc.seed = trial_seed;
    nn::ModelParams init = nn::init_weights(cfg, Rng(tc.seed).fork("init"));
    train::FitResult fr =
        train::fit(cfg, std::move(init), train_samples, val_samples, tc, loss);
    return fr.best_val_loss;
  });
}

/// Most frequent value per dimension among a set of winning configs; ties
/// resolve to the smaller value. Used to report a single configuration
/// when tuning ran per fold.
inline CandidateConfig modal_config(const std::vector<CandidateConfig>& winners) {
  if (winners.empty()) throw std::invalid_argument("modal_config: no winners");
  auto mode = [&](auto&& get) {
    std::vector<double> values;
    for (const auto& w : winners) values.push_back(static_cast<double>(get(w)));
    std::sort(values.begin(), values.end());
    double best_v = values[0];
    int best_n = 0;
    for (std::size_t i = 0; i < values.size();) {
      std::size_t j = i;
      while (j < values.size() && values[j] == values[i]) ++j;
      if (static_cast<int>(j - i) > best_n) {
        best_n = static_cast<int>(j - i);
        best_v = values[i];
      }
      i = j;
    }
    return best_v;
  };
  CandidateConfig c;
  c.conv_filters = static_cast<int>(mode([](const CandidateConfig& k) { return k.conv_filters; }));
  c.convlstm_filters =
      static_cast<int>(mode([](const CandidateConfig& k) { return k.convlstm_filters; }));
  c.kernel_size = static_cast<int>(mode([](const CandidateConfig& k) { return k.kernel_size; }));
  c.dropout = mode([](const CandidateConfig& k) { return k.dropout; });
  c.learning_rate = mode([](const CandidateConfig& k) { return k.learning_rate; });
  return c;
}

}  // namespace raincast::tune
