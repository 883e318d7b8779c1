#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "raincast/bundle.hpp"
#include "raincast/checkpoint.hpp"
#include "raincast/config.hpp"
#include "raincast/hyperopt.hpp"
#include "raincast/synthetic.hpp"
#include "raincast/training.hpp"
#include "raincast/xai.hpp"

namespace raincast::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Shared pieces.
// ---------------------------------------------------------------------------

inline data::PipelineOptions pipeline_options(const RunConfig& cfg) {
  data::PipelineOptions opt;
  opt.lags = cfg.get_int_list("features.lags");
  opt.precip_deltas = cfg.get_bool("features.deltas");
  opt.seq_len = cfg.get_int("features.seq_len");
  opt.train_frac = cfg.get_double("split.train_frac");
  opt.val_frac = cfg.get_double("split.val_frac");
  return opt;
}

inline nn::ModelConfig model_config(const RunConfig& cfg, const data::ProcessedDataset& ds) {
  nn::ModelConfig mc;
  mc.conv_filters = cfg.get_int("model.conv_filters");
  mc.convlstm_filters = cfg.get_int("model.convlstm_filters");
  mc.kernel_size = cfg.get_int("model.kernel_size");
  mc.dropout = cfg.get_double("model.dropout");
  mc.seq_len = ds.options.seq_len;
  mc.rows = ds.manifest.grid_rows;
  mc.cols = ds.manifest.grid_cols;
  mc.channels = static_cast<int>(ds.feature_names.size());
  mc.validate();
  return mc;
}

inline train::TrainConfig train_config(const RunConfig& cfg) {
  train::TrainConfig tc;
  tc.epochs = cfg.get_int("train.epochs");
  tc.early_stop_patience = cfg.get_int("train.early_stop_patience");
  tc.plateau_factor = cfg.get_double("train.plateau_factor");
  tc.plateau_patience = cfg.get_int("train.plateau_patience");
  tc.min_delta = cfg.get_double("train.min_delta");
  tc.batch_size = cfg.get_int("train.batch_size");
  tc.learning_rate = cfg.get_double("train.learning_rate");
  tc.head_bias_warm_start = cfg.get_bool("train.bias_warm_start");
  tc.threads = RunConfig::thread_cap();
  tc.seed = Rng(cfg.get_u64("seed")).fork("train").seed();
  tc.validate();
  return tc;
}

inline train::LossConfig loss_config(const RunConfig& cfg, const data::ProcessedDataset& ds) {
  train::LossConfig loss;
  loss.alpha = cfg.get_double("loss.alpha");
  loss.tau_percentile = cfg.get_double("loss.tau_percentile");
  if (loss.alpha <= 1.0)
    throw std::invalid_argument("loss.alpha must be > 1 (extreme events need extra weight)");
  if (loss.tau_percentile <= 0.0 || loss.tau_percentile >= 100.0)
    throw std::invalid_argument("loss.tau_percentile must be in (0,100)");
  std::vector<double> train_y;
  for (const auto* s : ds.partition(0)) train_y.push_back(s->y);
  loss.tau = train::compute_tau(train_y, loss.tau_percentile);
  return loss;
}

inline std::vector<const data::SequenceSample*> partition_samples(
    const data::ProcessedDataset& ds, const std::string& name) {
  if (name == "train") return ds.partition(0);
  if (name == "val") return ds.partition(1);
  if (name == "test") return ds.partition(2);
  throw std::invalid_argument("unknown partition '" + name + "' (train|val|test)");
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline nlohmann::json metrics_json(const train::Metrics& m, const std::string& partition,
                                   double tau_log, double baseline_rmse) {
  nlohmann::json j;
  j["partition"] = partition;
  j["rmse_mm"] = m.rmse;
  if (m.extreme_rmse)
    j["extreme_rmse_mm"] = *m.extreme_rmse;
  else
    j["extreme_rmse_mm"] = nullptr;
  j["n_samples"] = m.n_samples;
  j["n_extreme"] = m.n_extreme;
  j["n_clamped"] = m.n_clamped;
  j["tau_log"] = tau_log;
  j["tau_mm"] = std::expm1(tau_log);
  j["baseline_rmse_mm"] = baseline_rmse;
  return j;
}

inline void require_feature_match(const nn::Checkpoint& ck, const data::ProcessedDataset& ds) {
  if (ck.features != ds.feature_names)
    throw std::runtime_error(
        "checkpoint/dataset mismatch: the model was trained on a different feature set");
  if (ck.config.rows != ds.manifest.grid_rows || ck.config.cols != ds.manifest.grid_cols ||
      ck.config.seq_len != ds.options.seq_len)
    throw std::runtime_error("checkpoint/dataset mismatch: grid or sequence dims differ");
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

inline int cmd_ingest(const RunConfig& cfg, const std::string& manifest_path,
                      const std::string& csv_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  data::DatasetManifest manifest = data::load_manifest(manifest_path);
  data::FeatureCube raw = data::ingest_csv_file(manifest, csv_path);
  data::ProcessedDataset ds = data::build_processed(manifest, raw, pipeline_options(cfg));
  data::save_bundle(ds, (fs::path(out_dir) / "dataset.bin").string());
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "ingested " << raw.days() << " days on a " << manifest.grid_rows << "x"
            << manifest.grid_cols << " grid; " << ds.feature_names.size() << " features, "
            << ds.samples.size() << " samples (train " << ds.split.train_end << ", val "
            << ds.split.val_end - ds.split.train_end << ", test "
            << ds.samples.size() - ds.split.val_end << ")\n";
  return 0;
}

inline data::SyntheticSpec synth_spec(const RunConfig& cfg) {
  data::SyntheticSpec spec;
  spec.grid_rows = cfg.get_int("synth.grid_rows");
  spec.grid_cols = cfg.get_int("synth.grid_cols");
  spec.n_days = cfg.get_int("synth.days");
  spec.n_channels = cfg.get_int("synth.channels");
  spec.driver_channel = cfg.get_int("synth.driver_channel");
  spec.driver_lag = cfg.get_int("synth.driver_lag");
  spec.coeff = cfg.get_double("synth.coeff");
  spec.noise_std = cfg.get_double("synth.noise_std");
  spec.noise_relative = cfg.get_bool("synth.noise_relative");
  spec.ar_coeff = cfg.get_double("synth.ar_coeff");
  spec.smooth_passes = cfg.get_int("synth.smooth_passes");
  spec.seq_len = cfg.get_int("features.seq_len");
  spec.start_date = Date::parse(cfg.get("synth.start_date"));
  spec.seed = Rng(cfg.get_u64("seed")).fork("synth").seed();

  const std::string mask = cfg.get("synth.mask");
  if (mask == "full") {
    spec.driver_localized = false;
  } else if (mask.rfind("rect:", 0) == 0) {
    int r0, r1, c0, c1;
    if (std::sscanf(mask.c_str(), "rect:%d:%d:%d:%d", &r0, &r1, &c0, &c1) != 4)
      throw std::invalid_argument("synth.mask: expected 'full' or 'rect:r0:r1:c0:c1'");
    spec.mask.assign(static_cast<std::size_t>(spec.grid_rows) * spec.grid_cols, 0);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        if (r < 0 || r >= spec.grid_rows || c < 0 || c >= spec.grid_cols)
          throw std::invalid_argument("synth.mask: rectangle outside grid");
        spec.mask[static_cast<std::size_t>(r) * spec.grid_cols + c] = 1;
      }
    spec.driver_localized = true;
  } else {
    throw std::invalid_argument("synth.mask: expected 'full' or 'rect:r0:r1:c0:c1'");
  }
  return spec;
}

inline int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  data::SyntheticSpec spec = synth_spec(cfg);
  data::SyntheticDataset sd = data::generate_synthetic(spec);
  data::ProcessedDataset ds = data::build_processed(sd.manifest, sd.cube, pipeline_options(cfg));
  ds.signal = sd.signal;
  data::save_bundle(ds, (fs::path(out_dir) / "dataset.bin").string());
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
  std::cout << "synthesized " << spec.n_days << " days on a " << spec.grid_rows << "x"
            << spec.grid_cols << " grid (driver channel " << spec.driver_channel << ", lag "
            << spec.driver_lag << "); " << ds.feature_names.size() << " features, "
            << ds.samples.size() << " samples\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& bundle_path,
                     const std::string& out_dir, bool run_cv = false) {
  fs::create_directories(out_dir);
  data::ProcessedDataset ds = data::load_bundle(bundle_path);
  nn::ModelConfig mc = model_config(cfg, ds);
  train::TrainConfig tc = train_config(cfg);
  train::LossConfig loss = loss_config(cfg, ds);

  nn::ModelParams init = nn::init_weights(mc, Rng(tc.seed).fork("init"));
  train::FitResult fr = train::fit(mc, std::move(init), ds.partition(0), ds.partition(1), tc, loss);

  nn::Checkpoint ck;
  ck.config = mc;
  ck.params = fr.params;
  ck.tau = loss.tau;
  ck.alpha = loss.alpha;
  ck.features = ds.feature_names;
  ck.best_epoch = fr.best_epoch;
  ck.seed = cfg.get_u64("seed");
  nn::save_checkpoint(ck, (fs::path(out_dir) / "checkpoint.bin").string());

  std::string history;
  for (const auto& e : fr.history) {
    nlohmann::json line = {{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"learning_rate", e.learning_rate}};
    history += line.dump() + "\n";
  }
  write_text(fs::path(out_dir) / "history.jsonl", history);

  const auto test = ds.partition(2);
  train::Metrics m = train::evaluate(mc, fr.params, test, loss.tau, tc.threads);
  const double baseline = train::mean_predictor_rmse(ds.partition(0), test);
  write_text(fs::path(out_dir) / "metrics.json",
             metrics_json(m, "test", loss.tau, baseline).dump(2) + "\n");

  if (run_cv) {
    train::CvResult cv = train::ts_cross_validate(
        [&] {
          std::vector<const data::SequenceSample*> all;
          for (const auto& s : ds.samples) all.push_back(&s);
          return all;
        }(),
        cfg.get_int("train.cv_folds"), mc, tc, loss.alpha, loss.tau_percentile);
    nlohmann::json cvj;
    cvj["mean_rmse_mm"] = cv.mean_rmse;
    cvj["folds"] = nlohmann::json::array();
    for (const auto& f : cv.folds) {
      nlohmann::json fj = {{"fold", f.fold},
                           {"train_end", f.train_end},
                           {"test_end", f.test_end},
                           {"best_epoch", f.best_epoch},
                           {"tau_log", f.tau},
                           {"rmse_mm", f.test_metrics.rmse},
                           {"n_samples", f.test_metrics.n_samples}};
      if (f.test_metrics.extreme_rmse)
        fj["extreme_rmse_mm"] = *f.test_metrics.extreme_rmse;
      else
        fj["extreme_rmse_mm"] = nullptr;
      cvj["folds"].push_back(fj);
    }
    write_text(fs::path(out_dir) / "cv.json", cvj.dump(2) + "\n");
  }

  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
  std::cout << "trained " << fr.history.size() << " epochs (best " << fr.best_epoch
            << ", val loss " << fr.best_val_loss << "); test rmse " << m.rmse
            << " mm/day vs mean-predictor baseline " << baseline << " mm/day\n";
  return 0;
}

inline int cmd_evaluate(const RunConfig& cfg, const std::string& bundle_path,
                        const std::string& checkpoint_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  data::ProcessedDataset ds = data::load_bundle(bundle_path);
  nn::Checkpoint ck = nn::load_checkpoint(checkpoint_path);
  require_feature_match(ck, ds);
  const std::string partition = cfg.get("eval.partition");
  const auto samples = partition_samples(ds, partition);
  const int threads = RunConfig::thread_cap();
  train::Metrics m = train::evaluate(ck.config, ck.params, samples, ck.tau, threads);
  const double baseline = train::mean_predictor_rmse(ds.partition(0), samples);
  write_text(fs::path(out_dir) / "metrics.json",
             metrics_json(m, partition, ck.tau, baseline).dump(2) + "\n");
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
  std::cout << partition << " rmse " << m.rmse << " mm/day over " << m.n_samples << " samples";
  if (m.extreme_rmse) std::cout << "; extreme rmse " << *m.extreme_rmse << " mm/day";
  std::cout << "\n";
  return 0;
}

inline int cmd_tune(const RunConfig& cfg, const std::string& bundle_path,
                    const std::string& out_dir) {
  fs::create_directories(out_dir);
  data::ProcessedDataset ds = data::load_bundle(bundle_path);

  tune::SearchSpace space;
  space.conv_filters = cfg.get_int_list("tune.conv_filters");
  space.convlstm_filters = cfg.get_int_list("tune.convlstm_filters");
  space.kernel_sizes = cfg.get_int_list("tune.kernel_sizes");
  space.learning_rates = cfg.get_double_list("tune.learning_rates");
  space.dropout_min = cfg.get_double("tune.dropout_min");
  space.dropout_max = cfg.get_double("tune.dropout_max");
  space.validate();

  tune::TuneOptions opt;
  opt.n_trials = cfg.get_int("tune.trials");
  opt.n_startup = cfg.get_int("tune.startup_trials");
  opt.gamma = cfg.get_double("tune.gamma");
  opt.seed = Rng(cfg.get_u64("seed")).fork("tuner").seed();
  opt.log_wall_time = cfg.get_bool("tune.log_walltime");

  nn::ModelConfig dims;
  dims.seq_len = ds.options.seq_len;
  dims.rows = ds.manifest.grid_rows;
  dims.cols = ds.manifest.grid_cols;
  dims.channels = static_cast<int>(ds.feature_names.size());
  train::TrainConfig base_tc = train_config(cfg);
  const double alpha = cfg.get_double("loss.alpha");
  const double tau_pct = cfg.get_double("loss.tau_percentile");

  auto trial_json = [&](const tune::Trial& t) {
    nlohmann::json j = {{"trial", t.index},
                        {"conv_filters", t.config.conv_filters},
                        {"convlstm_filters", t.config.convlstm_filters},
                        {"kernel_size", t.config.kernel_size},
                        {"dropout", t.config.dropout},
                        {"learning_rate", t.config.learning_rate},
                        {"objective", t.status == "ok" ? nlohmann::json(t.objective)
                                                       : nlohmann::json(nullptr)},
                        {"status", t.status}};
    if (opt.log_wall_time) j["wall_time_s"] = t.wall_time_s;
    return j;
  };

  auto run_one = [&](const std::vector<const data::SequenceSample*>& tr,
                     const std::vector<const data::SequenceSample*>& va, tune::TuneOptions o) {
    try {
      return tune::tune_model(tr, va, space, o, dims, base_tc, alpha, tau_pct);
    } catch (const tune::AllTrialsDiverged& e) {
      // persist the full trial log before surfacing the failure
      std::string log;
      for (const auto& t : e.trials()) log += trial_json(t).dump() + "\n";
      write_text(fs::path(out_dir) / "trials.jsonl", log);
      throw;
    }
  };

  if (!cfg.get_bool("tune.per_fold")) {
    tune::TuneResult res = run_one(ds.partition(0), ds.partition(1), opt);
    std::string log;
    for (const auto& t : res.trials) log += trial_json(t).dump() + "\n";
    write_text(fs::path(out_dir) / "trials.jsonl", log);
    write_text(fs::path(out_dir) / "best_trial.json", trial_json(res.best()).dump(2) + "\n");

    // best config echoed in run-config syntax, ready for `train --config`
    std::string best;
    best += "model.conv_filters=" + std::to_string(res.best().config.conv_filters) + "\n";
    best += "model.convlstm_filters=" + std::to_string(res.best().config.convlstm_filters) + "\n";
    best += "model.kernel_size=" + std::to_string(res.best().config.kernel_size) + "\n";
    {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", res.best().config.dropout);
      best += std::string("model.dropout=") + buf + "\n";
      std::snprintf(buf, sizeof buf, "%.17g", res.best().config.learning_rate);
      best += std::string("train.learning_rate=") + buf + "\n";
    }
    write_text(fs::path(out_dir) / "best_config.cfg", best);
    cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
    std::cout << "tuned " << res.trials.size() << " trials; best objective "
              << res.best().objective << " (trial " << res.best().index << ")\n";
    return 0;
  }

  // per-fold tuning: expanding windows, one search per fold, plus the modal
  // configuration across fold winners
  std::vector<const data::SequenceSample*> all;
  for (const auto& s : ds.samples) all.push_back(&s);
  const int k = cfg.get_int("train.cv_folds");
  const int chunk = static_cast<int>(all.size()) / (k + 1);
  if (k < 2 || chunk < 15) throw std::invalid_argument("tune.per_fold: too few samples");
  nlohmann::json folds = nlohmann::json::array();
  std::vector<tune::CandidateConfig> winners;
  std::string log;
  for (int j = 1; j <= k; ++j) {
    const int train_end = j * chunk;
    const int val_begin = train_end - std::max(1, static_cast<int>(0.15 * train_end));
    std::vector<const data::SequenceSample*> tr(all.begin(), all.begin() + val_begin);
    std::vector<const data::SequenceSample*> va(all.begin() + val_begin,
                                                all.begin() + train_end);
    tune::TuneOptions fold_opt = opt;
    fold_opt.seed = Rng(opt.seed).fork("fold" + std::to_string(j)).seed();
    tune::TuneResult res = run_one(tr, va, fold_opt);
    for (const auto& t : res.trials) {
      nlohmann::json line = trial_json(t);
      line["fold"] = j;
      log += line.dump() + "\n";
    }
    winners.push_back(res.best().config);
    nlohmann::json fj = trial_json(res.best());
    fj["fold"] = j;
    folds.push_back(fj);
  }
  tune::CandidateConfig modal = tune::modal_config(winners);
  nlohmann::json summary;
  summary["folds"] = folds;
  summary["modal"] = {{"conv_filters", modal.conv_filters},
                      {"convlstm_filters", modal.convlstm_filters},
                      {"kernel_size", modal.kernel_size},
                      {"dropout", modal.dropout},
                      {"learning_rate", modal.learning_rate}};
  write_text(fs::path(out_dir) / "trials.jsonl", log);
  write_text(fs::path(out_dir) / "tune_folds.json", summary.dump(2) + "\n");
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
  std::cout << "per-fold tuning complete over " << k << " folds\n";
  return 0;
}

inline int cmd_explain(const RunConfig& cfg, const std::string& bundle_path,
                       const std::string& checkpoint_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  data::ProcessedDataset ds = data::load_bundle(bundle_path);
  nn::Checkpoint ck = nn::load_checkpoint(checkpoint_path);
  require_feature_match(ck, ds);

  const int threads = RunConfig::thread_cap();
  const auto samples = partition_samples(ds, cfg.get("xai.partition"));
  const auto train_samples = ds.partition(0);
  xai::PredictFn predictor = xai::make_predictor(ck.config, ck.params);

  std::vector<std::string> methods;
  {
    std::stringstream ss(cfg.get("xai.methods"));
    std::string m;
    while (std::getline(ss, m, ',')) {
      m.erase(0, m.find_first_not_of(" \t"));
      m.erase(m.find_last_not_of(" \t") + 1);
      if (!m.empty()) methods.push_back(m);
    }
  }
  auto wants = [&](const std::string& name) {
    return std::find(methods.begin(), methods.end(), name) != methods.end();
  };
  for (const auto& m : methods)
    if (m != "permutation" && m != "occlusion" && m != "gradcam" && m != "counterfactual")
      throw std::invalid_argument("xai.methods: unknown method '" + m + "'");

  nlohmann::json summary;
  summary["partition"] = cfg.get("xai.partition");
  summary["n_samples"] = samples.size();
  summary["baseline_rmse_mm"] = xai::rmse_mm(predictor, samples, threads);

  if (wants("permutation")) {
    Rng perm_rng = Rng(cfg.get_u64("seed")).fork("permutation");
    xai::FeatureImportanceReport fi = xai::permutation_importance(
        predictor, samples, ds.feature_names, cfg.get_int("xai.repeats"), perm_rng, threads);
    std::ostringstream csv;
    xai::write_feature_importance_csv(fi, csv);
    write_text(fs::path(out_dir) / "feature_importance.csv", csv.str());
    summary["permutation"] = {{"repeats", fi.repeats}, {"baseline_rmse_mm", fi.baseline_rmse}};
  }
  if (wants("occlusion")) {
    Tensor fill = xai::mean_step_slice(train_samples);
    xai::OcclusionReport oc = xai::temporal_occlusion(predictor, samples, fill, threads);
    std::ostringstream csv;
    xai::write_occlusion_csv(oc, csv);
    write_text(fs::path(out_dir) / "occlusion.csv", csv.str());
    summary["occlusion"] = {{"fill", "training-mean slice"},
                            {"baseline_rmse_mm", oc.baseline_rmse}};
  }
  if (wants("gradcam")) {
    xai::GradCamMap map = xai::grad_cam(ck.config, ck.params, samples,
                                        cfg.get_double("xai.selection_quantile"), threads);
    std::ostringstream txt, pgm;
    xai::write_gradcam_txt(map, txt);
    xai::write_gradcam_pgm(map, pgm);
    write_text(fs::path(out_dir) / "gradcam.txt", txt.str());
    write_text(fs::path(out_dir) / "gradcam.pgm", pgm.str());
    summary["gradcam"] = {{"selection", map.selection},
                          {"n_selected", map.n_selected},
                          {"all_zero", map.all_zero},
                          {"rows", map.rows},
                          {"cols", map.cols}};
  }
  if (wants("counterfactual")) {
    xai::CounterfactualReport cf = xai::counterfactual_perturb(
        predictor, samples, ds.feature_names, cfg.get_double("xai.delta"), threads);
    std::ostringstream csv;
    xai::write_counterfactual_csv(cf, csv);
    write_text(fs::path(out_dir) / "counterfactual.csv", csv.str());
    summary["counterfactual"] = {{"delta", cf.delta}};
  }

  write_text(fs::path(out_dir) / "xai_summary.json", summary.dump(2) + "\n");
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
  std::cout << "explained " << samples.size() << " samples with " << methods.size()
            << " methods\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Plot-ready report CSVs from a completed explain run.
// ---------------------------------------------------------------------------

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: missing '" + path.string() + "'");
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (first) {
      t.header = fields;
      first = false;
    } else {
      t.rows.push_back(fields);
    }
  }
  return t;
}

inline void write_csv(const CsvTable& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
}

}  // namespace detail

inline int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "xai_summary.json"))
    throw std::runtime_error("report: '" + run_dir + "' has no xai_summary.json (run explain)");

  // bar-chart tables sorted by effect, descending
  if (fs::exists(dir / "feature_importance.csv")) {
    detail::CsvTable t = detail::read_csv(dir / "feature_importance.csv");
    std::stable_sort(t.rows.begin(), t.rows.end(),
                     [](const auto& a, const auto& b) {
                       return std::stod(a[1]) > std::stod(b[1]);
                     });
    detail::write_csv(t, dir / "report_feature_importance.csv");
  }
  if (fs::exists(dir / "counterfactual.csv")) {
    detail::CsvTable t = detail::read_csv(dir / "counterfactual.csv");
    std::stable_sort(t.rows.begin(), t.rows.end(),
                     [](const auto& a, const auto& b) {
                       return std::stod(a[1]) > std::stod(b[1]);
                     });
    detail::write_csv(t, dir / "report_counterfactual.csv");
  }
  if (fs::exists(dir / "occlusion.csv")) {
    // already time_0..time_{T-1}; re-emit in step order
    detail::CsvTable t = detail::read_csv(dir / "occlusion.csv");
    detail::write_csv(t, dir / "report_occlusion.csv");
  }
  if (fs::exists(dir / "gradcam.txt")) {
    std::ifstream in(dir / "gradcam.txt");
    detail::CsvTable t;
    t.header = {"row", "col", "value"};
    std::string line;
    int r = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string v;
      int c = 0;
      while (ss >> v) t.rows.push_back({std::to_string(r), std::to_string(c++), v});
      ++r;
    }
    detail::write_csv(t, dir / "report_gradcam.csv");
  }
  std::cout << "report tables written to " << run_dir << "\n";
  return 0;
}

}  // namespace raincast::cli
