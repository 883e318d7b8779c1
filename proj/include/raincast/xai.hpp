#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "raincast/training.hpp"

namespace raincast::xai {

using data::SequenceSample;
using Samples = std::vector<const SequenceSample*>;

/// Model under explanation: maps an input cube [T,H,W,F] to a log1p-space
/// prediction. All methods are read-only over the model.
using PredictFn = std::function<double(const Tensor&)>;

inline PredictFn make_predictor(const nn::ModelConfig& cfg, const nn::ModelParams& params) {
  return [&cfg, &params](const Tensor& x) { return nn::predict(cfg, params, x); };
}

/// RMSE in mm/day of a predictor over samples; identical arithmetic to
/// evaluate(), so method baselines match plain evaluation bit for bit.
inline double rmse_mm(const PredictFn& model, const Samples& samples, int threads = 1) {
  std::vector<double> y, pred(samples.size());
  y.reserve(samples.size());
  for (const auto* s : samples) y.push_back(s->y);
  train::parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    pred[static_cast<std::size_t>(i)] = model(samples[static_cast<std::size_t>(i)]->x);
  });
  return train::evaluate_predictions(y, pred, std::numeric_limits<double>::infinity()).rmse;
}

namespace detail {

inline int channel_count(const Samples& samples) {
  return samples.at(0)->x.shape[3];
}

/// Copy of `x` with one feature channel replaced from `src`.
inline Tensor swap_channel(const Tensor& x, const Tensor& src, int channel) {
  Tensor out = x;
  const int f = x.shape[3];
  for (std::int64_t i = channel; i < x.size(); i += f) out[i] = src[i];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Permutation feature importance: shuffle one channel across the sample
// axis (each sample's whole T x H x W block for that channel moves as a
// unit), measure the RMSE increase in mm/day. Negative values are reported
// as-is; they mean the model can substitute that predictor.
// ---------------------------------------------------------------------------

struct FeatureImportanceReport {
  double baseline_rmse = 0.0;  // mm/day, shared by all rows
  std::vector<std::string> features;
  std::vector<double> mean_delta_rmse;
  std::vector<double> std_delta_rmse;
  int repeats = 0;
};

/// RMSE after rearranging `channel` across samples by `perm` (perm[i] = the
/// sample whose channel block sample i receives).
inline double channel_permuted_rmse(const PredictFn& model, const Samples& samples, int channel,
                                    const std::vector<int>& perm, int threads = 1) {
  std::vector<double> y, pred(samples.size());
  y.reserve(samples.size());
  for (const auto* s : samples) y.push_back(s->y);
  train::parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const auto ui = static_cast<std::size_t>(i);
    const Tensor swapped = detail::swap_channel(
        samples[ui]->x, samples[static_cast<std::size_t>(perm[ui])]->x, channel);
    pred[ui] = model(swapped);
  });
  return train::evaluate_predictions(y, pred, std::numeric_limits<double>::infinity()).rmse;
}

inline FeatureImportanceReport permutation_importance(const PredictFn& model,
                                                      const Samples& samples,
                                                      const std::vector<std::string>& features,
                                                      int repeats, Rng rng, int threads = 1) {
  if (samples.size() < 2)
    throw std::invalid_argument("permutation importance: need at least 2 samples");
  if (repeats < 1) throw std::invalid_argument("permutation importance: repeats must be >= 1");
  const int f = detail::channel_count(samples);
  if (static_cast<int>(features.size()) != f)
    throw std::invalid_argument("permutation importance: feature name count mismatch");

  FeatureImportanceReport report;
  report.features = features;
  report.repeats = repeats;
  report.baseline_rmse = rmse_mm(model, samples, threads);

  // one permutation set shared by all channels: comparisons are paired
  std::vector<std::vector<int>> perms;
  for (int r = 0; r < repeats; ++r) {
    std::vector<int> perm(samples.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    rng.shuffle(perm);
    perms.push_back(std::move(perm));
  }

  for (int ch = 0; ch < f; ++ch) {
    double mean = 0.0, m2 = 0.0;
    std::vector<double> deltas;
    for (int r = 0; r < repeats; ++r)
      deltas.push_back(channel_permuted_rmse(model, samples, ch, perms[static_cast<std::size_t>(r)],
                                             threads) -
                       report.baseline_rmse);
    for (double d : deltas) mean += d;
    mean /= repeats;
    for (double d : deltas) m2 += (d - mean) * (d - mean);
    report.mean_delta_rmse.push_back(mean);
    report.std_delta_rmse.push_back(repeats > 1 ? std::sqrt(m2 / (repeats - 1)) : 0.0);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Temporal occlusion: replace each input time step with an uninformative
// fill slice (the training-set mean per cell and channel), measure the
// RMSE increase. Step T-1 is the most recent day.
// ---------------------------------------------------------------------------

struct OcclusionReport {
  double baseline_rmse = 0.0;       // mm/day
  std::vector<double> delta_rmse;   // one entry per input step
};

/// Mean slice over samples and steps, per (row, col, channel). Computed
/// from the training partition and used as the occlusion fill.
inline Tensor mean_step_slice(const Samples& samples) {
  if (samples.empty()) throw std::invalid_argument("mean_step_slice: no samples");
  const Shape& xs = samples[0]->x.shape;
  const int steps = xs[0];
  const std::int64_t per = static_cast<std::int64_t>(xs[1]) * xs[2] * xs[3];
  Tensor mean({xs[1], xs[2], xs[3]});
  for (const auto* s : samples)
    for (int t = 0; t < steps; ++t)
      for (std::int64_t i = 0; i < per; ++i) mean[i] += s->x.data[static_cast<std::size_t>(t * per + i)];
  const double scale = 1.0 / (static_cast<double>(samples.size()) * steps);
  for (double& v : mean.data) v *= scale;
  return mean;
}

inline OcclusionReport temporal_occlusion(const PredictFn& model, const Samples& samples,
                                          const Tensor& fill_slice, int threads = 1) {
  if (samples.empty()) throw std::invalid_argument("temporal occlusion: no samples");
  const Shape& xs = samples[0]->x.shape;
  if (fill_slice.shape != Shape{xs[1], xs[2], xs[3]})
    throw std::invalid_argument("temporal occlusion: fill slice shape mismatch");
  const int steps = xs[0];
  const std::int64_t per = fill_slice.size();

  OcclusionReport report;
  report.baseline_rmse = rmse_mm(model, samples, threads);
  std::vector<double> y;
  for (const auto* s : samples) y.push_back(s->y);

  for (int t = 0; t < steps; ++t) {
    std::vector<double> pred(samples.size());
    train::parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
      Tensor x = samples[static_cast<std::size_t>(i)]->x;
      std::copy(fill_slice.data.begin(), fill_slice.data.end(),
                x.data.begin() + static_cast<std::int64_t>(t) * per);
      pred[static_cast<std::size_t>(i)] = model(x);
    });
    const double occluded =
        train::evaluate_predictions(y, pred, std::numeric_limits<double>::infinity()).rmse;
    report.delta_rmse.push_back(occluded - report.baseline_rmse);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Grad-CAM over the final recurrent hidden state H_T: channel weights are
// the spatial mean of d(prediction)/dA^k, the map is ReLU of the weighted
// channel sum, averaged over the selected high-rain predictions and
// min-max normalized to [0,1].
// ---------------------------------------------------------------------------

struct GradCamMap {
  int rows = 0, cols = 0;
  std::vector<double> values;  // row-major, in [0,1]
  bool all_zero = false;       // raw map was identically zero
  int n_selected = 0;
  std::string selection;
};

inline GradCamMap grad_cam(const nn::ModelConfig& cfg, const nn::ModelParams& params,
                           const Samples& samples, double selection_quantile = 0.90,
                           int threads = 1) {
  if (samples.empty()) throw std::invalid_argument("grad-cam: no samples");
  if (selection_quantile < 0.0 || selection_quantile >= 1.0)
    throw std::invalid_argument("grad-cam: selection quantile outside [0,1)");

  // select the high-rain predictions
  std::vector<double> preds(samples.size());
  train::parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    preds[static_cast<std::size_t>(i)] = nn::predict(cfg, params, samples[static_cast<std::size_t>(i)]->x);
  });
  std::vector<double> sorted = preds;
  std::sort(sorted.begin(), sorted.end());
  const double threshold = data::quantile_sorted(sorted, selection_quantile);
  std::vector<int> selected;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] >= threshold) selected.push_back(static_cast<int>(i));

  const int rows = cfg.rows, cols = cfg.cols, ch = cfg.convlstm_filters;
  std::vector<Tensor> raw_maps(selected.size());
  train::parallel_for(static_cast<int>(selected.size()), threads, [&](int si) {
    const SequenceSample& s = *samples[static_cast<std::size_t>(selected[static_cast<std::size_t>(si)])];
    ad::Tape t;
    nn::TapeParams tp = nn::stage_params(t, params);
    nn::ForwardHandles fh = nn::model_forward(t, s.x, cfg, tp);
    t.backward(fh.prediction);
    const Tensor& activation = t.val(fh.last_hidden);  // A^k = H_T
    const Tensor& grad = t.grad(fh.last_hidden);

    // channel weights: spatial mean of the gradient
    std::vector<double> alpha(static_cast<std::size_t>(ch), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int k = 0; k < ch; ++k) alpha[static_cast<std::size_t>(k)] += grad.at(r, c, k);
    for (double& a : alpha) a /= static_cast<double>(rows) * cols;

    Tensor map({rows, cols});
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (int k = 0; k < ch; ++k) acc += alpha[static_cast<std::size_t>(k)] * activation.at(r, c, k);
        map.at(r, c) = acc > 0.0 ? acc : 0.0;
      }
    raw_maps[static_cast<std::size_t>(si)] = std::move(map);
  });

  Tensor mean({rows, cols});
  for (const Tensor& m : raw_maps)
    for (std::int64_t i = 0; i < mean.size(); ++i) mean[i] += m[i];
  for (double& v : mean.data) v /= static_cast<double>(raw_maps.size());

  GradCamMap out;
  out.rows = rows;
  out.cols = cols;
  out.n_selected = static_cast<int>(selected.size());
  {
    char buf[64];
    std::snprintf(buf, sizeof buf, "top predictions (quantile %.2f)", selection_quantile);
    out.selection = buf;
  }
  double lo = mean[0], hi = mean[0];
  for (double v : mean.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  out.values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  if (hi > lo) {
    for (std::int64_t i = 0; i < mean.size(); ++i)
      out.values[static_cast<std::size_t>(i)] = (mean[i] - lo) / (hi - lo);
  } else if (hi > 0.0) {
    std::fill(out.values.begin(), out.values.end(), 1.0);
  } else {
    out.all_zero = true;  // raw map identically zero
  }
  return out;
}

// ---------------------------------------------------------------------------
// Counterfactual perturbation: scale one feature channel by (1 - delta)
// everywhere and record the root-mean-square change of the predicted
// rainfall in mm/day.
// ---------------------------------------------------------------------------

struct CounterfactualReport {
  std::vector<std::string> features;
  std::vector<double> l2_norm;  // mm/day, RMS over samples
  double delta = 0.0;
};

inline CounterfactualReport counterfactual_perturb(const PredictFn& model, const Samples& samples,
                                                   const std::vector<std::string>& features,
                                                   double delta, int threads = 1) {
  if (samples.empty()) throw std::invalid_argument("counterfactual: no samples");
  if (delta < 0.0 || delta >= 1.0)
    throw std::invalid_argument("counterfactual: delta " + std::to_string(delta) +
                                " outside [0,1)");
  const int f = detail::channel_count(samples);
  if (static_cast<int>(features.size()) != f)
    throw std::invalid_argument("counterfactual: feature name count mismatch");

  std::vector<double> base_mm(samples.size());
  train::parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    base_mm[static_cast<std::size_t>(i)] =
        data::expm1_inverse(model(samples[static_cast<std::size_t>(i)]->x));
  });

  CounterfactualReport report;
  report.features = features;
  report.delta = delta;
  for (int ch = 0; ch < f; ++ch) {
    std::vector<double> changed(samples.size());
    train::parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
      Tensor x = samples[static_cast<std::size_t>(i)]->x;
      for (std::int64_t j = ch; j < x.size(); j += f) x[j] *= 1.0 - delta;
      changed[static_cast<std::size_t>(i)] = data::expm1_inverse(model(x));
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double d = changed[i] - base_mm[i];
      acc += d * d;
    }
    report.l2_norm.push_back(std::sqrt(acc / static_cast<double>(samples.size())));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization: tidy CSVs, a text/PGM rendering of the attention
// map, and a JSON summary assembled by the caller.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline void write_feature_importance_csv(const FeatureImportanceReport& r, std::ostream& out) {
  out << "feature,mean_delta_rmse_mm,std_delta_rmse_mm\n";
  for (std::size_t i = 0; i < r.features.size(); ++i)
    out << r.features[i] << ',' << detail::fmt(r.mean_delta_rmse[i]) << ','
        << detail::fmt(r.std_delta_rmse[i]) << '\n';
}

inline void write_occlusion_csv(const OcclusionReport& r, std::ostream& out) {
  out << "timestep,delta_rmse_mm\n";
  for (std::size_t t = 0; t < r.delta_rmse.size(); ++t)
    out << "time_" << t << ',' << detail::fmt(r.delta_rmse[t]) << '\n';
}

inline void write_counterfactual_csv(const CounterfactualReport& r, std::ostream& out) {
  out << "feature,l2_norm_mm\n";
  for (std::size_t i = 0; i < r.features.size(); ++i)
    out << r.features[i] << ',' << detail::fmt(r.l2_norm[i]) << '\n';
}

inline void write_gradcam_txt(const GradCamMap& m, std::ostream& out) {
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c)
      out << (c ? " " : "") << detail::fmt(m.values[static_cast<std::size_t>(r) * m.cols + c]);
    out << '\n';
  }
}

/// Plain ASCII portable graymap, 0..255.
inline void write_gradcam_pgm(const GradCamMap& m, std::ostream& out) {
  out << "P2\n" << m.cols << ' ' << m.rows << "\n255\n";
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      const double v = m.values[static_cast<std::size_t>(r) * m.cols + c];
      out << (c ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    out << '\n';
  }
}

}  // namespace raincast::xai
