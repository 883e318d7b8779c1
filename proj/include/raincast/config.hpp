#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace raincast::cli {

/// Flat key=value run configuration. Every key is registered with a
/// default; unknown keys are rejected. The fully-resolved table (defaults
/// plus overrides) is written next to every command's outputs so a stored
/// config alone reproduces the run.
class RunConfig {
public:
  RunConfig() { defaults(); }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key=value");
      std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      trim(key);
      trim(value);
      set(key, value);
    }
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("unknown config key '" + key + "'");
    it->second = value;
  }

  /// "key=value" as passed to --set.
  void set_kv(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("unknown config key '" + key + "'");
    return it->second;
  }

  int get_int(const std::string& key) const {
    try {
      std::size_t pos;
      const int v = std::stoi(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config key '" + key + "': '" + get(key) + "' is not an integer");
    }
  }

  std::uint64_t get_u64(const std::string& key) const {
    try {
      std::size_t pos;
      const unsigned long long v = std::stoull(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config key '" + key + "': '" + get(key) + "' is not an integer");
    }
  }

  double get_double(const std::string& key) const {
    try {
      std::size_t pos;
      const double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config key '" + key + "': '" + get(key) + "' is not a number");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a boolean");
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      trim(item);
      if (item.empty()) continue;
      out.push_back(std::stoi(item));
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      trim(item);
      if (item.empty()) continue;
      out.push_back(std::stod(item));
    }
    return out;
  }

  /// Deterministic resolved-config text: every key, sorted, with its
  /// effective value.
  std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  void write_resolved(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << resolved();
  }

  /// Thread cap comes from the environment, not the config file.
  static int thread_cap() {
    const char* env = std::getenv("RAINCAST_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
  }

private:
  static void trim(std::string& s) {
    s.erase(0, s.find_first_not_of(" \t\r\n"));
    s.erase(s.find_last_not_of(" \t\r\n") + 1);
  }

  void defaults() {
    values_ = {
        {"seed", "1"},

        {"synth.grid_rows", "8"},
        {"synth.grid_cols", "8"},
        {"synth.days", "400"},
        {"synth.channels", "4"},
        {"synth.driver_channel", "1"},
        {"synth.driver_lag", "1"},
        {"synth.mask", "full"},
        {"synth.coeff", "1.0"},
        {"synth.noise_std", "0.2"},
        {"synth.noise_relative", "true"},
        {"synth.ar_coeff", "0.4"},
        {"synth.smooth_passes", "2"},
        {"synth.start_date", "2001-06-01"},

        {"features.lags", "1,2,3"},
        {"features.deltas", "true"},
        {"features.seq_len", "7"},
        {"split.train_frac", "0.70"},
        {"split.val_frac", "0.15"},

        {"model.conv_filters", "32"},
        {"model.convlstm_filters", "16"},
        {"model.kernel_size", "3"},
        {"model.dropout", "0.0"},

        {"train.epochs", "30"},
        {"train.early_stop_patience", "3"},
        {"train.plateau_factor", "0.5"},
        {"train.plateau_patience", "2"},
        {"train.min_delta", "1e-6"},
        {"train.batch_size", "16"},
        {"train.learning_rate", "1e-3"},
        {"train.bias_warm_start", "true"},
        {"train.cv_folds", "3"},

        {"loss.alpha", "5.0"},
        {"loss.tau_percentile", "90.0"},

        {"tune.trials", "20"},
        {"tune.startup_trials", "8"},
        {"tune.gamma", "0.3"},
        {"tune.per_fold", "false"},
        {"tune.log_walltime", "false"},
        {"tune.conv_filters", "32,64,128"},
        {"tune.convlstm_filters", "16,32,64"},
        {"tune.kernel_sizes", "3,5"},
        {"tune.learning_rates", "1e-3,1e-4"},
        {"tune.dropout_min", "0.0"},
        {"tune.dropout_max", "0.5"},

        {"xai.repeats", "5"},
        {"xai.delta", "0.1"},
        {"xai.selection_quantile", "0.90"},
        {"xai.partition", "test"},
        {"xai.methods", "permutation,occlusion,gradcam,counterfactual"},

        {"eval.partition", "test"},
    };
  }

  std::map<std::string, std::string> values_;
};

}  // namespace raincast::cli
