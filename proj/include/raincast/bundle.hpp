#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/dataset.hpp"
#include "raincast/features.hpp"
#include "raincast/synthetic.hpp"
#include "raincast/tensor_file.hpp"

namespace raincast::data {

/// Feature-engineering and split settings applied between a raw cube and
/// model-ready samples.
struct PipelineOptions {
  std::vector<int> lags = {1, 2, 3};
  bool precip_deltas = true;
  int seq_len = 7;
  double train_frac = 0.70;
  double val_frac = 0.15;
  std::string precip_variable = kPrecipVariable;
};

/// Model-ready dataset: scaled sequence samples plus everything needed to
/// audit how they were produced.
struct ProcessedDataset {
  DatasetManifest manifest;
  std::vector<std::string> feature_names;
  ScalerParams scaler;
  std::vector<SequenceSample> samples;
  SplitSpec split;
  PipelineOptions options;
  std::optional<PlantedSignal> signal;
  std::vector<std::string> warnings;

  std::size_t train_begin() const { return 0; }
  std::size_t n() const { return samples.size(); }
  std::vector<const SequenceSample*> partition(int which) const {
    // 0 train, 1 val, 2 test
    std::size_t lo = which == 0 ? 0 : (which == 1 ? split.train_end : split.val_end);
    std::size_t hi = which == 0 ? split.train_end : (which == 1 ? split.val_end : samples.size());
    std::vector<const SequenceSample*> out;
    for (std::size_t i = lo; i < hi; ++i) out.push_back(&samples[i]);
    return out;
  }
};

/// Anchor days admissible for sequencing: past warm-up, with a contiguous
/// calendar window of T input days plus the target day.
inline std::vector<int> enumerate_anchors(const FeatureCube& cube, int seq_len) {
  std::vector<int> anchors;
  for (int t = cube.warmup + seq_len - 1; t + 1 < cube.days(); ++t)
    if (window_contiguous(cube.dates, t - seq_len + 1, t + 1)) anchors.push_back(t);
  return anchors;
}

/// Full pipeline: feature engineering, leakage-safe scaler fit, scaling,
/// sequencing, chronological split.
inline ProcessedDataset build_processed(const DatasetManifest& manifest, const FeatureCube& raw,
                                        const PipelineOptions& opt) {
  manifest.validate();
  ProcessedDataset out;
  out.manifest = manifest;
  out.options = opt;

  const int precip_ch = raw.channel_of(opt.precip_variable);
  std::vector<double> precip_mm(raw.days());
  for (int d = 0; d < raw.days(); ++d) {
    precip_mm[d] = raw.area_mean(d, precip_ch);
    if (precip_mm[d] < 0.0)
      throw std::invalid_argument("pipeline: negative precipitation on " + raw.dates[d].iso());
  }

  FeatureCube engineered = build_lag_features(raw, opt.lags);
  if (opt.precip_deltas) engineered = build_precip_deltas(engineered, opt.precip_variable);
  out.feature_names = engineered.channels;

  const std::vector<int> anchors = enumerate_anchors(engineered, opt.seq_len);
  const int n = static_cast<int>(anchors.size());
  if (n < 3)
    throw std::invalid_argument("pipeline: only " + std::to_string(n) +
                                " samples possible; need at least 3");
  out.split = chronological_split(n, opt.train_frac, opt.val_frac);

  // scaler sees only days that training samples can read as features
  const int last_train_anchor = anchors[static_cast<std::size_t>(out.split.train_end) - 1];
  out.scaler = robust_fit(engineered, engineered.warmup, last_train_anchor + 1);

  FeatureCube scaled = robust_transform(engineered, out.scaler);
  SequencingResult seq = assemble_sequences(scaled, precip_mm, opt.seq_len);
  out.warnings = seq.warnings;
  out.samples = std::move(seq.samples);
  if (static_cast<int>(out.samples.size()) != n)
    throw std::logic_error("pipeline: anchor enumeration mismatch");
  return out;
}

// ---------------------------------------------------------------------------
// Bundle serialization: manifest, feature index map, scaler and samples in
// one tensor container.
// ---------------------------------------------------------------------------

inline void save_bundle(const ProcessedDataset& ds, const std::string& path) {
  io::NamedTensors nt;
  nlohmann::json& meta = nt.meta;
  meta["kind"] = "raincast.dataset";
  meta["manifest"] = {{"grid_rows", ds.manifest.grid_rows},
                      {"grid_cols", ds.manifest.grid_cols},
                      {"variables", ds.manifest.variables},
                      {"date_start", ds.manifest.date_start.iso()},
                      {"date_end", ds.manifest.date_end.iso()},
                      {"city", ds.manifest.city},
                      {"provenance", ds.manifest.provenance}};
  meta["features"] = ds.feature_names;
  meta["pipeline"] = {{"lags", ds.options.lags},
                      {"precip_deltas", ds.options.precip_deltas},
                      {"seq_len", ds.options.seq_len},
                      {"train_frac", ds.options.train_frac},
                      {"val_frac", ds.options.val_frac},
                      {"precip_variable", ds.options.precip_variable}};
  meta["split"] = {{"train_end", ds.split.train_end},
                   {"val_end", ds.split.val_end},
                   {"n", ds.split.n}};
  if (ds.signal) {
    meta["signal"] = {{"driver_channel", ds.signal->driver_channel},
                      {"driver_lag", ds.signal->driver_lag},
                      {"coeff", ds.signal->coeff},
                      {"noise_std_abs", ds.signal->noise_std_abs},
                      {"baseline", ds.signal->baseline},
                      {"seed", ds.signal->seed}};
  }

  const int n = static_cast<int>(ds.samples.size());
  if (n == 0) throw std::invalid_argument("save_bundle: no samples");
  const Shape xs = ds.samples[0].x.shape;
  Tensor x({n, xs[0], xs[1], xs[2] * xs[3]});  // flatten W,F to stay within rank 5
  // store true extents in meta so load can restore them
  meta["sample_shape"] = xs;
  Tensor y({n}), dates({n}), anchors({n});
  const std::int64_t per = ds.samples[0].x.size();
  for (int i = 0; i < n; ++i) {
    std::copy(ds.samples[i].x.data.begin(), ds.samples[i].x.data.end(),
              x.data.begin() + static_cast<std::int64_t>(i) * per);
    y[i] = ds.samples[i].y;
    dates[i] = static_cast<double>(ds.samples[i].target_date.serial());
    anchors[i] = static_cast<double>(ds.samples[i].anchor_day);
  }
  nt.tensors.emplace_back("x", std::move(x));
  nt.tensors.emplace_back("y", std::move(y));
  nt.tensors.emplace_back("target_dates", std::move(dates));
  nt.tensors.emplace_back("anchor_days", std::move(anchors));
  nt.tensors.emplace_back("scaler_median",
                          Tensor({static_cast<int>(ds.scaler.median.size())}, ds.scaler.median));
  nt.tensors.emplace_back("scaler_iqr",
                          Tensor({static_cast<int>(ds.scaler.iqr.size())}, ds.scaler.iqr));
  if (ds.signal) {
    Tensor mask({ds.manifest.grid_rows, ds.manifest.grid_cols});
    for (std::size_t i = 0; i < ds.signal->mask.size(); ++i)
      mask[static_cast<std::int64_t>(i)] = ds.signal->mask[i];
    nt.tensors.emplace_back("signal_mask", std::move(mask));
  }
  io::save_tensors(nt, path);
}

inline ProcessedDataset load_bundle(const std::string& path) {
  io::NamedTensors nt = io::load_tensors(path);
  if (nt.meta.value("kind", "") != "raincast.dataset")
    throw std::runtime_error("'" + path + "' is not a dataset bundle");
  ProcessedDataset ds;
  const auto& m = nt.meta.at("manifest");
  ds.manifest.grid_rows = m.at("grid_rows").get<int>();
  ds.manifest.grid_cols = m.at("grid_cols").get<int>();
  ds.manifest.variables = m.at("variables").get<std::vector<std::string>>();
  ds.manifest.date_start = Date::parse(m.at("date_start").get<std::string>());
  ds.manifest.date_end = Date::parse(m.at("date_end").get<std::string>());
  ds.manifest.city = m.at("city").get<std::string>();
  ds.manifest.provenance = m.at("provenance").get<std::string>();
  ds.feature_names = nt.meta.at("features").get<std::vector<std::string>>();

  const auto& p = nt.meta.at("pipeline");
  ds.options.lags = p.at("lags").get<std::vector<int>>();
  ds.options.precip_deltas = p.at("precip_deltas").get<bool>();
  ds.options.seq_len = p.at("seq_len").get<int>();
  ds.options.train_frac = p.at("train_frac").get<double>();
  ds.options.val_frac = p.at("val_frac").get<double>();
  ds.options.precip_variable = p.at("precip_variable").get<std::string>();

  const auto& s = nt.meta.at("split");
  ds.split.train_end = s.at("train_end").get<int>();
  ds.split.val_end = s.at("val_end").get<int>();
  ds.split.n = s.at("n").get<int>();
  ds.split.fractions[0] = ds.options.train_frac;
  ds.split.fractions[1] = ds.options.val_frac;
  ds.split.fractions[2] = 1.0 - ds.options.train_frac - ds.options.val_frac;

  ds.scaler.channels = ds.feature_names;
  ds.scaler.median = nt.get("scaler_median").data;
  ds.scaler.iqr = nt.get("scaler_iqr").data;
  if (ds.scaler.median.size() != ds.feature_names.size())
    throw std::runtime_error("bundle: scaler/feature index map mismatch");

  const Shape xs = nt.meta.at("sample_shape").get<Shape>();
  if (static_cast<std::size_t>(xs[3]) != ds.feature_names.size())
    throw std::runtime_error("bundle: sample channel count does not match feature index map");
  const Tensor& x = nt.get("x");
  const Tensor& y = nt.get("y");
  const Tensor& dates = nt.get("target_dates");
  const Tensor& anchors = nt.get("anchor_days");
  const int n = x.shape[0];
  if (y.size() != n || dates.size() != n || anchors.size() != n)
    throw std::runtime_error("bundle: inconsistent sample tensors");
  const std::int64_t per = numel(xs);
  if (x.size() != per * n) throw std::runtime_error("bundle: sample payload size mismatch");
  ds.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SequenceSample& smp = ds.samples[static_cast<std::size_t>(i)];
    smp.x = Tensor(xs);
    std::copy_n(x.data.begin() + static_cast<std::int64_t>(i) * per, per, smp.x.data.begin());
    smp.y = y[i];
    smp.target_date = Date::from_serial(static_cast<long>(dates[i]));
    smp.anchor_day = static_cast<int>(anchors[i]);
  }

  if (nt.meta.contains("signal")) {
    PlantedSignal sig;
    const auto& sj = nt.meta.at("signal");
    sig.driver_channel = sj.at("driver_channel").get<int>();
    sig.driver_lag = sj.at("driver_lag").get<int>();
    sig.coeff = sj.at("coeff").get<double>();
    sig.noise_std_abs = sj.at("noise_std_abs").get<double>();
    sig.baseline = sj.at("baseline").get<double>();
    sig.seed = sj.at("seed").get<std::uint64_t>();
    const Tensor& mask = nt.get("signal_mask");
    sig.mask.resize(static_cast<std::size_t>(mask.size()));
    for (std::int64_t i = 0; i < mask.size(); ++i)
      sig.mask[static_cast<std::size_t>(i)] = mask[i] != 0.0;
    ds.signal = std::move(sig);
  }
  return ds;
}

}  // namespace raincast::data
