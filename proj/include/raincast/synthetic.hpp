#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/dataset.hpp"
#include "raincast/features.hpp"
#include "raincast/rng.hpp"

namespace raincast::data {

/// Recipe for a synthetic dataset with a planted causal signal.
///
/// The planted rule, indexed by anchor day t (the last input day of a
/// sequence): the target y(t) = log1p of day t+1's area-mean precipitation
/// satisfies
///
///   y(t) = baseline + coeff * mean over mask of driver(t - lag) + noise
///
/// exactly, where `baseline` is chosen by the generator so precipitation
/// never goes negative. With sequences of length T, the informative slice
/// for a sample therefore sits at input step T-1-lag.
struct SyntheticSpec {
  int grid_rows = 8;
  int grid_cols = 8;
  int n_days = 400;
  int n_channels = 4;       // including the precipitation channel
  int driver_channel = 1;   // 0 is always total_precipitation
  int driver_lag = 1;       // anchor-relative lag d; must be < seq_len
  std::vector<std::uint8_t> mask;  // H*W flags; empty means full grid
  double coeff = 1.0;
  double noise_std = 0.2;
  bool noise_relative = true;  // noise_std scales the planted-signal std
  double ar_coeff = 0.4;       // day-to-day persistence of the base fields
  int smooth_passes = 2;       // spatial smoothing strength
  bool driver_localized = false;  // flatten the driver field outside the mask
  int seq_len = 7;             // used only to validate driver_lag
  Date start_date{2001, 6, 1};
  std::uint64_t seed = 1;

  void validate() const {
    if (grid_rows < 1 || grid_cols < 1) throw std::invalid_argument("synthetic: bad grid");
    if (n_days < 10) throw std::invalid_argument("synthetic: need at least 10 days");
    if (n_channels < 2) throw std::invalid_argument("synthetic: need >= 2 channels");
    if (driver_channel < 1 || driver_channel >= n_channels)
      throw std::invalid_argument("synthetic: driver channel " + std::to_string(driver_channel) +
                                  " out of range [1," + std::to_string(n_channels - 1) + "]");
    if (driver_lag < 0 || driver_lag >= seq_len)
      throw std::invalid_argument("synthetic: driver lag " + std::to_string(driver_lag) +
                                  " must lie in [0," + std::to_string(seq_len - 1) + ")");
    if (!mask.empty()) {
      if (static_cast<int>(mask.size()) != grid_rows * grid_cols)
        throw std::invalid_argument("synthetic: mask size != grid size");
      bool any = false;
      for (auto m : mask) any = any || m;
      if (!any) throw std::invalid_argument("synthetic: mask is empty");
    }
    if (coeff < 0.0) throw std::invalid_argument("synthetic: coeff must be >= 0");
    if (noise_std < 0.0) throw std::invalid_argument("synthetic: noise_std must be >= 0");
    if (ar_coeff < 0.0 || ar_coeff >= 1.0)
      throw std::invalid_argument("synthetic: ar_coeff must be in [0,1)");
  }

  std::vector<std::uint8_t> resolved_mask() const {
    if (!mask.empty()) return mask;
    return std::vector<std::uint8_t>(static_cast<std::size_t>(grid_rows) * grid_cols, 1);
  }
};

/// Values the generator resolved while building a dataset; stored with the
/// bundle so oracle tests can reconstruct the planted rule.
struct PlantedSignal {
  int driver_channel = 0;
  int driver_lag = 0;
  std::vector<std::uint8_t> mask;
  double coeff = 0.0;
  double noise_std_abs = 0.0;  // resolved absolute noise std in log space
  double baseline = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  FeatureCube cube;
  PlantedSignal signal;
};

namespace detail {

// One 3x3 box-blur pass with edge clamping; repeated passes approximate a
// Gaussian filter.
inline void blur_field(std::vector<double>& f, int rows, int cols, int passes) {
  std::vector<double> tmp(f.size());
  for (int p = 0; p < passes; ++p) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        int n = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
            acc += f[static_cast<std::size_t>(rr) * cols + cc];
            ++n;
          }
        tmp[static_cast<std::size_t>(r) * cols + c] = acc / n;
      }
    f = tmp;
  }
}

}  // namespace detail

/// Build a synthetic dataset. Base channels (other than precipitation) are
/// spatially smoothed AR(1) noise, normalized to unit variance; the
/// precipitation channel is written so the planted rule holds exactly.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng root(spec.seed);

  const int rows = spec.grid_rows, cols = spec.grid_cols, days = spec.n_days;
  const int cells = rows * cols;
  const int f = spec.n_channels;

  SyntheticDataset out;
  out.cube.rows = rows;
  out.cube.cols = cols;
  out.cube.channels.push_back(kPrecipVariable);
  for (int ch = 1; ch < f; ++ch) out.cube.channels.push_back("var" + std::to_string(ch));
  for (int d = 0; d < days; ++d) out.cube.dates.push_back(spec.start_date.plus(d));
  out.cube.values.assign(static_cast<std::size_t>(days) * cells * f, 0.0);

  // smooth AR(1) fields for every non-precipitation channel
  for (int ch = 1; ch < f; ++ch) {
    Rng rng = root.fork("field" + std::to_string(ch));
    std::vector<double> state(cells), innov(cells);
    std::vector<double> series(static_cast<std::size_t>(days) * cells);
    const double phi = spec.ar_coeff;
    const double innov_scale = std::sqrt(1.0 - phi * phi);
    for (int d = 0; d < days; ++d) {
      for (double& v : innov) v = rng.normal();
      detail::blur_field(innov, rows, cols, spec.smooth_passes);
      for (int i = 0; i < cells; ++i)
        state[i] = d == 0 ? innov[i] : phi * state[i] + innov_scale * innov[i];
      std::copy(state.begin(), state.end(), series.begin() + static_cast<std::size_t>(d) * cells);
    }
    // normalize to unit variance so coeff has a stable meaning
    double mean = 0.0, var = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    for (double v : series) var += (v - mean) * (v - mean);
    var /= static_cast<double>(series.size());
    const double inv_std = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
    for (int d = 0; d < days; ++d)
      for (int i = 0; i < cells; ++i)
        out.cube.at(d, i / cols, i % cols, ch) =
            (series[static_cast<std::size_t>(d) * cells + i] - mean) * inv_std;
  }

  // planted signal per day, indexed by the day the precipitation falls on
  const std::vector<std::uint8_t> mask = spec.resolved_mask();
  int mask_count = 0;
  for (auto m : mask) mask_count += m;

  if (spec.driver_localized) {
    for (int d = 0; d < days; ++d)
      for (int i = 0; i < cells; ++i)
        if (!mask[static_cast<std::size_t>(i)])
          out.cube.at(d, i / cols, i % cols, spec.driver_channel) = 0.0;
  }

  auto masked_driver_mean = [&](int day) {
    double acc = 0.0;
    for (int i = 0; i < cells; ++i)
      if (mask[i]) acc += out.cube.at(day, i / cols, i % cols, spec.driver_channel);
    return acc / mask_count;
  };

  // signal term for precipitation on day D reads the driver at D-1-lag
  const int shift = spec.driver_lag + 1;
  std::vector<double> signal(days, 0.0);
  for (int d = shift; d < days; ++d) signal[d] = spec.coeff * masked_driver_mean(d - shift);

  double sig_mean = 0.0, sig_var = 0.0;
  for (int d = shift; d < days; ++d) sig_mean += signal[d];
  sig_mean /= std::max(1, days - shift);
  for (int d = shift; d < days; ++d) sig_var += (signal[d] - sig_mean) * (signal[d] - sig_mean);
  sig_var /= std::max(1, days - shift);
  const double sig_std = std::sqrt(sig_var);

  const double noise_abs =
      spec.noise_relative && sig_std > 0 ? spec.noise_std * sig_std : spec.noise_std;

  Rng noise_rng = root.fork("noise");
  std::vector<double> y_raw(days);
  for (int d = 0; d < days; ++d) y_raw[d] = signal[d] + noise_abs * noise_rng.normal();

  // shift so the smallest log-space target is exactly zero (no negative rain)
  double y_min = y_raw[0];
  for (double v : y_raw) y_min = std::min(y_min, v);
  const double baseline = -y_min;

  for (int d = 0; d < days; ++d) {
    const double mm = std::expm1(y_raw[d] + baseline);
    for (int i = 0; i < cells; ++i) out.cube.at(d, i / cols, i % cols, 0) = mm;
  }

  out.manifest.grid_rows = rows;
  out.manifest.grid_cols = cols;
  out.manifest.variables = out.cube.channels;
  out.manifest.date_start = out.cube.dates.front();
  out.manifest.date_end = out.cube.dates.back();
  out.manifest.city = "synthetic";
  out.manifest.provenance = "synthetic";

  out.signal.driver_channel = spec.driver_channel;
  out.signal.driver_lag = spec.driver_lag;
  out.signal.mask = mask;
  out.signal.coeff = spec.coeff;
  out.signal.noise_std_abs = noise_abs;
  out.signal.baseline = baseline;
  out.signal.seed = spec.seed;
  return out;
}

}  // namespace raincast::data
