#pragma once

#include <CLI11.hpp>

#include "raincast/cli.hpp"

namespace raincast::cli {

/// Argument parsing and dispatch, shared by the binary and the test suite.
/// Returns a process exit code; errors print to stderr and yield 1.
inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"raincast: interpretable spatiotemporal precipitation forecasting"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  RunConfig cfg;
  std::string config_path, out_dir = "run";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "key=value config file")->envname("RAINCAST_CONFIG");
  app.add_option("--seed", seed, "root seed (overrides config)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", overrides, "config override key=value (repeatable)");

  std::string manifest_path, csv_path, bundle_path, checkpoint_path, run_dir;
  bool train_cv = false;

  CLI::App* ingest = app.add_subcommand("ingest", "build a dataset bundle from manifest + CSV");
  ingest->add_option("manifest", manifest_path, "manifest key-value file")->required();
  ingest->add_option("csv", csv_path, "long-format data CSV")->required();

  CLI::App* synth = app.add_subcommand("synth", "generate a planted-signal synthetic bundle");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a bundle");
  train_cmd->add_option("bundle", bundle_path, "dataset bundle")->required();
  train_cmd->add_flag("--cv", train_cv, "also run expanding-window cross-validation");

  CLI::App* tune_cmd = app.add_subcommand("tune", "hyperparameter search on a bundle");
  tune_cmd->add_option("bundle", bundle_path, "dataset bundle")->required();

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a bundle");
  eval_cmd->add_option("bundle", bundle_path, "dataset bundle")->required();
  eval_cmd->add_option("checkpoint", checkpoint_path, "model checkpoint")->required();

  CLI::App* explain_cmd = app.add_subcommand("explain", "run the interpretability suite");
  explain_cmd->add_option("bundle", bundle_path, "dataset bundle")->required();
  explain_cmd->add_option("checkpoint", checkpoint_path, "model checkpoint")->required();

  CLI::App* report_cmd = app.add_subcommand("report", "emit plot-ready CSVs from a run dir");
  report_cmd->add_option("run_dir", run_dir, "directory produced by explain")->required();

  std::vector<const char*> argv;
  std::string prog = "raincast";
  argv.push_back(prog.c_str());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : overrides) cfg.set_kv(kv);
    if (seed) cfg.set("seed", std::to_string(*seed));

    if (*ingest) return cmd_ingest(cfg, manifest_path, csv_path, out_dir);
    if (*synth) return cmd_synth(cfg, out_dir);
    if (*train_cmd) return cmd_train(cfg, bundle_path, out_dir, train_cv);
    if (*tune_cmd) return cmd_tune(cfg, bundle_path, out_dir);
    if (*eval_cmd) return cmd_evaluate(cfg, bundle_path, checkpoint_path, out_dir);
    if (*explain_cmd) return cmd_explain(cfg, bundle_path, checkpoint_path, out_dir);
    if (*report_cmd) return cmd_report(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace raincast::cli
