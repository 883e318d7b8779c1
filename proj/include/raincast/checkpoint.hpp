#pragma once

#include <string>
#include <vector>

#include "raincast/layers.hpp"
#include "raincast/tensor_file.hpp"

namespace raincast::nn {

/// Trained model artifact: architecture, parameters, the resolved loss
/// threshold and the feature roster it was trained against.
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  double tau = 0.0;    // log1p space
  double alpha = 1.0;
  std::vector<std::string> features;
  int best_epoch = 0;
  std::uint64_t seed = 0;
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  io::NamedTensors nt;
  nt.meta["kind"] = "raincast.checkpoint";
  nt.meta["model"] = {{"conv_filters", ck.config.conv_filters},
                      {"convlstm_filters", ck.config.convlstm_filters},
                      {"kernel_size", ck.config.kernel_size},
                      {"dropout", ck.config.dropout},
                      {"seq_len", ck.config.seq_len},
                      {"rows", ck.config.rows},
                      {"cols", ck.config.cols},
                      {"channels", ck.config.channels}};
  nt.meta["tau"] = ck.tau;
  nt.meta["alpha"] = ck.alpha;
  nt.meta["features"] = ck.features;
  nt.meta["best_epoch"] = ck.best_epoch;
  nt.meta["seed"] = ck.seed;
  ck.params.for_each(
      [&](const char* name, const Tensor& t) { nt.tensors.emplace_back(name, t); });
  io::save_tensors(nt, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  io::NamedTensors nt = io::load_tensors(path);
  if (nt.meta.value("kind", "") != "raincast.checkpoint")
    throw std::runtime_error("'" + path + "' is not a model checkpoint");
  Checkpoint ck;
  const auto& m = nt.meta.at("model");
  ck.config.conv_filters = m.at("conv_filters").get<int>();
  ck.config.convlstm_filters = m.at("convlstm_filters").get<int>();
  ck.config.kernel_size = m.at("kernel_size").get<int>();
  ck.config.dropout = m.at("dropout").get<double>();
  ck.config.seq_len = m.at("seq_len").get<int>();
  ck.config.rows = m.at("rows").get<int>();
  ck.config.cols = m.at("cols").get<int>();
  ck.config.channels = m.at("channels").get<int>();
  ck.tau = nt.meta.at("tau").get<double>();
  ck.alpha = nt.meta.at("alpha").get<double>();
  ck.features = nt.meta.at("features").get<std::vector<std::string>>();
  ck.best_epoch = nt.meta.at("best_epoch").get<int>();
  ck.seed = nt.meta.at("seed").get<std::uint64_t>();

  ck.params = zero_params(ck.config);
  ck.params.for_each([&](const char* name, Tensor& t) {
    const Tensor& stored = nt.get(name);
    if (stored.shape != t.shape)
      throw std::runtime_error(std::string("checkpoint: shape mismatch for ") + name);
    t = stored;
  });
  return ck;
}

}  // namespace raincast::nn
