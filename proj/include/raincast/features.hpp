#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/dataset.hpp"
#include "raincast/tensor.hpp"

namespace raincast::data {

constexpr const char* kPrecipVariable = "total_precipitation";

// ---------------------------------------------------------------------------
// Lag features: X_{t-lag} = shift(X_t, lag), applied within each grid
// cell's time series. The first max(lag) days become warm-up and are
// excluded from sequencing.
// ---------------------------------------------------------------------------

inline FeatureCube build_lag_features(const FeatureCube& cube, const std::vector<int>& lags) {
  if (lags.empty()) return cube;
  int max_lag = 0;
  for (int lag : lags) {
    if (lag < 1) throw std::invalid_argument("lag features: lag must be >= 1");
    max_lag = std::max(max_lag, lag);
  }
  if (cube.days() < max_lag + 1)
    throw std::invalid_argument("lag features: need at least " + std::to_string(max_lag + 1) +
                                " days, have " + std::to_string(cube.days()));

  FeatureCube out;
  out.rows = cube.rows;
  out.cols = cube.cols;
  out.dates = cube.dates;
  out.warmup = std::max(cube.warmup, max_lag);
  out.channels = cube.channels;
  const int base = cube.width();
  for (int lag : lags)
    for (int ch = 0; ch < base; ++ch)
      out.channels.push_back(cube.channels[ch] + "_lag" + std::to_string(lag));

  const int width = out.width();
  out.values.assign(static_cast<std::size_t>(cube.days()) * cube.rows * cube.cols * width, 0.0);
  for (int d = 0; d < cube.days(); ++d)
    for (int r = 0; r < cube.rows; ++r)
      for (int c = 0; c < cube.cols; ++c) {
        for (int ch = 0; ch < base; ++ch) out.at(d, r, c, ch) = cube.at(d, r, c, ch);
        int dst = base;
        for (int lag : lags)
          for (int ch = 0; ch < base; ++ch, ++dst)
            out.at(d, r, c, dst) = d >= lag ? cube.at(d - lag, r, c, ch) : 0.0;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Precipitation deltas: dP_lag = P_{t-lag} - P_{t-(lag-1)} for lag 1..3,
// computed from the already-built precipitation lag channels.
// ---------------------------------------------------------------------------

inline FeatureCube build_precip_deltas(const FeatureCube& cube,
                                       const std::string& precip = kPrecipVariable) {
  int lag_ch[4];  // lag_ch[0] = current precipitation
  for (int lag = 0; lag <= 3; ++lag) {
    const std::string name = lag == 0 ? precip : precip + "_lag" + std::to_string(lag);
    auto it = std::find(cube.channels.begin(), cube.channels.end(), name);
    if (it == cube.channels.end())
      throw std::invalid_argument("precip deltas: missing channel '" + name +
                                  "' (build lag features first)");
    lag_ch[lag] = static_cast<int>(it - cube.channels.begin());
  }

  FeatureCube out = cube;
  for (int lag = 1; lag <= 3; ++lag)
    out.channels.push_back(precip + "_delta" + std::to_string(lag));
  const int width = out.width();
  std::vector<double> values(static_cast<std::size_t>(cube.days()) * cube.rows * cube.cols * width);
  for (int d = 0; d < cube.days(); ++d)
    for (int r = 0; r < cube.rows; ++r)
      for (int c = 0; c < cube.cols; ++c) {
        for (int ch = 0; ch < cube.width(); ++ch)
          values[out.index(d, r, c, ch)] = cube.at(d, r, c, ch);
        for (int lag = 1; lag <= 3; ++lag)
          values[out.index(d, r, c, cube.width() + lag - 1)] =
              cube.at(d, r, c, lag_ch[lag]) - cube.at(d, r, c, lag_ch[lag - 1]);
      }
  out.values = std::move(values);
  out.warmup = std::max(cube.warmup, 3);
  return out;
}

// ---------------------------------------------------------------------------
// Robust scaling: x' = (x - median) / IQR per channel, quantiles by linear
// interpolation between order statistics. Constant channels fall back to
// IQR = 1 so they scale to zero instead of exploding.
// ---------------------------------------------------------------------------

/// Linearly interpolated quantile of a sorted sample (the common "type 7"
/// convention: h = (n-1)q).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct ScalerParams {
  std::vector<std::string> channels;
  std::vector<double> median;
  std::vector<double> iqr;
};

/// Fit medians and interquartile ranges over days [day_begin, day_end) of
/// the cube. Callers must restrict the range to the training partition.
inline ScalerParams robust_fit(const FeatureCube& cube, int day_begin, int day_end) {
  if (day_begin < 0 || day_end > cube.days() || day_begin >= day_end)
    throw std::invalid_argument("robust_fit: bad day range");
  ScalerParams p;
  p.channels = cube.channels;
  const std::size_t n = static_cast<std::size_t>(day_end - day_begin) * cube.rows * cube.cols;
  std::vector<double> sample;
  sample.reserve(n);
  for (int ch = 0; ch < cube.width(); ++ch) {
    sample.clear();
    for (int d = day_begin; d < day_end; ++d)
      for (int r = 0; r < cube.rows; ++r)
        for (int c = 0; c < cube.cols; ++c) sample.push_back(cube.at(d, r, c, ch));
    std::sort(sample.begin(), sample.end());
    const double med = quantile_sorted(sample, 0.50);
    double iqr = quantile_sorted(sample, 0.75) - quantile_sorted(sample, 0.25);
    if (iqr < 1e-9) iqr = 1.0;
    p.median.push_back(med);
    p.iqr.push_back(iqr);
  }
  return p;
}

inline FeatureCube robust_transform(const FeatureCube& cube, const ScalerParams& p) {
  if (p.channels != cube.channels)
    throw std::invalid_argument("robust_transform: scaler fitted on different channels");
  FeatureCube out = cube;
  const int width = cube.width();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const int ch = static_cast<int>(i % width);
    out.values[i] = (out.values[i] - p.median[ch]) / p.iqr[ch];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target transform: y = log(1 + mm/day) and its inverse, with a reported
// clamp at zero for slightly negative predictions.
// ---------------------------------------------------------------------------

inline double log1p_target(double y_mm) {
  if (y_mm < 0.0)
    throw std::invalid_argument("log1p_target: negative rainfall " + std::to_string(y_mm));
  return std::log1p(y_mm);
}

inline double expm1_inverse(double y_log, bool* clamped = nullptr) {
  const double mm = std::expm1(y_log);
  if (mm < 0.0) {
    if (clamped) *clamped = true;
    return 0.0;
  }
  if (clamped) *clamped = false;
  return mm;
}

// ---------------------------------------------------------------------------
// Sequencing: one sample per admissible anchor day t, with X spanning days
// t-T+1..t and y the log1p of the next day's area-averaged precipitation.
// A window is admissible only if it clears warm-up and the T+1 days are
// consecutive calendar days (no seasonal gap).
// ---------------------------------------------------------------------------

/// One training instance: scaled predictor cube plus next-day target.
struct SequenceSample {
  Tensor x;         // [T,H,W,F], scaled feature space
  double y;         // log1p(mm/day)
  Date target_date;
  int anchor_day;   // cube day index of the last input step
};

struct SequencingResult {
  std::vector<SequenceSample> samples;
  std::vector<std::string> warnings;
};

inline bool window_contiguous(const std::vector<Date>& dates, int first_day, int last_day) {
  for (int d = first_day; d < last_day; ++d)
    if (dates[d + 1].serial() != dates[d].serial() + 1) return false;
  return true;
}

/// `scaled` provides X; `precip_mm` is the per-day area-averaged raw
/// precipitation from which targets are derived.
inline SequencingResult assemble_sequences(const FeatureCube& scaled,
                                           const std::vector<double>& precip_mm, int seq_len) {
  if (static_cast<int>(precip_mm.size()) != scaled.days())
    throw std::invalid_argument("assemble_sequences: precip series length mismatch");
  if (seq_len < 1) throw std::invalid_argument("assemble_sequences: T must be >= 1");

  SequencingResult out;
  const int t_min = scaled.warmup + seq_len - 1;
  if (t_min > scaled.days() - 2) {
    out.warnings.push_back("too few days for T=" + std::to_string(seq_len) + " after warm-up of " +
                           std::to_string(scaled.warmup) + "; no samples produced");
    return out;
  }
  const int f = scaled.width();
  for (int t = t_min; t + 1 < scaled.days(); ++t) {
    if (!window_contiguous(scaled.dates, t - seq_len + 1, t + 1)) continue;
    SequenceSample s;
    s.x = Tensor({seq_len, scaled.rows, scaled.cols, f});
    const std::int64_t per_day = static_cast<std::int64_t>(scaled.rows) * scaled.cols * f;
    for (int step = 0; step < seq_len; ++step) {
      const int d = t - seq_len + 1 + step;
      std::copy_n(scaled.values.begin() + scaled.index(d, 0, 0, 0), per_day,
                  s.x.data.begin() + step * per_day);
    }
    s.y = log1p_target(precip_mm[static_cast<std::size_t>(t) + 1]);
    s.target_date = scaled.dates[static_cast<std::size_t>(t) + 1];
    s.anchor_day = t;
    out.samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chronological split with floor boundaries: train gets floor(f1*N), the
// middle remainder is validation, the tail is test.
// ---------------------------------------------------------------------------

struct SplitSpec {
  double fractions[3] = {0.70, 0.15, 0.15};
  int train_end = 0;  // samples [0, train_end)
  int val_end = 0;    // samples [train_end, val_end); test = [val_end, N)
  int n = 0;
};

inline SplitSpec chronological_split(int n_samples, double train_frac = 0.70,
                                     double val_frac = 0.15) {
  if (n_samples < 3) throw std::invalid_argument("split: need at least 3 samples");
  if (train_frac <= 0 || val_frac <= 0 || train_frac + val_frac >= 1.0)
    throw std::invalid_argument("split: bad fractions");
  SplitSpec s;
  s.fractions[0] = train_frac;
  s.fractions[1] = val_frac;
  s.fractions[2] = 1.0 - train_frac - val_frac;
  s.n = n_samples;
  s.train_end = static_cast<int>(std::floor(train_frac * n_samples));
  s.val_end = static_cast<int>(std::floor((train_frac + val_frac) * n_samples));
  // keep all three partitions nonempty even for tiny sample counts
  s.train_end = std::min(std::max(1, s.train_end), n_samples - 2);
  s.val_end = std::min(std::max(s.train_end + 1, s.val_end), n_samples - 1);
  return s;
}

}  // namespace raincast::data
