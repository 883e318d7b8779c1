#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/autodiff.hpp"
#include "raincast/rng.hpp"
#include "raincast/tensor.hpp"

namespace raincast::nn {

/// Architecture hyperparameters plus the input geometry they apply to.
/// Filter counts, kernel size and dropout must stay inside the tuning
/// bounds (conv 32-128, recurrent 16-64, kernel 3 or 5, dropout 0-0.5).
struct ModelConfig {
  int conv_filters = 32;
  int convlstm_filters = 16;
  int kernel_size = 3;
  double dropout = 0.0;
  int seq_len = 7;
  int rows = 0;
  int cols = 0;
  int channels = 0;

  void validate() const {
    if (conv_filters < 32 || conv_filters > 128)
      throw std::invalid_argument("model: conv_filters " + std::to_string(conv_filters) +
                                  " outside [32,128]");
    if (convlstm_filters < 16 || convlstm_filters > 64)
      throw std::invalid_argument("model: convlstm_filters " + std::to_string(convlstm_filters) +
                                  " outside [16,64]");
    if (kernel_size != 3 && kernel_size != 5)
      throw std::invalid_argument("model: kernel_size must be 3 or 5");
    if (dropout < 0.0 || dropout > 0.5)
      throw std::invalid_argument("model: dropout " + std::to_string(dropout) +
                                  " outside [0,0.5]");
    if (seq_len < 1 || rows < 1 || cols < 1 || channels < 1)
      throw std::invalid_argument("model: input dims not set");
  }
};

/// Shared-weight spatial feature extractor, applied identically at every
/// time step of a sequence.
struct ConvFeatureLayer {
  Tensor kernel;  // [k,k,F,conv_filters]
  Tensor bias;    // [conv_filters]
};

/// Recurrent cell parameters: one input and one hidden kernel per gate
/// (input i, forget f, output o, candidate c) plus per-gate biases.
struct ConvLstmCell {
  Tensor w_xi, w_hi, b_i;
  Tensor w_xf, w_hf, b_f;
  Tensor w_xo, w_ho, b_o;
  Tensor w_xc, w_hc, b_c;
};

/// Maps the pooled hidden vector to one scalar.
struct DenseHead {
  Tensor weights;  // [convlstm_filters]
  Tensor bias;     // scalar
};

struct ModelParams {
  ConvFeatureLayer feature;
  ConvLstmCell cell;
  DenseHead head;

  /// Visit every parameter tensor in a fixed, documented order. This order
  /// defines checkpoint layout, optimizer state pairing and gradient-check
  /// sweeps.
  template <typename F>
  void for_each(F&& f) {
    f("conv.kernel", feature.kernel);
    f("conv.bias", feature.bias);
    f("lstm.w_xi", cell.w_xi);
    f("lstm.w_hi", cell.w_hi);
    f("lstm.b_i", cell.b_i);
    f("lstm.w_xf", cell.w_xf);
    f("lstm.w_hf", cell.w_hf);
    f("lstm.b_f", cell.b_f);
    f("lstm.w_xo", cell.w_xo);
    f("lstm.w_ho", cell.w_ho);
    f("lstm.b_o", cell.b_o);
    f("lstm.w_xc", cell.w_xc);
    f("lstm.w_hc", cell.w_hc);
    f("lstm.b_c", cell.b_c);
    f("dense.w", head.weights);
    f("dense.b", head.bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }
};

namespace detail {
inline Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}
}  // namespace detail

/// Glorot-uniform kernels, zero biases, forget-gate bias set to 1 so the
/// cell starts out remembering. Reproducible per seed.
inline ModelParams init_weights(const ModelConfig& cfg, Rng rng) {
  const int k = cfg.kernel_size;
  const int f = cfg.channels, co = cfg.conv_filters, ch = cfg.convlstm_filters;
  auto conv_init = [&](int cin, int cout) {
    return detail::glorot_uniform({k, k, cin, cout}, k * k * cin, k * k * cout, rng);
  };
  ModelParams p;
  p.feature.kernel = conv_init(f, co);
  p.feature.bias = Tensor({co});
  p.cell.w_xi = conv_init(co, ch);
  p.cell.w_hi = conv_init(ch, ch);
  p.cell.b_i = Tensor({ch});
  p.cell.w_xf = conv_init(co, ch);
  p.cell.w_hf = conv_init(ch, ch);
  p.cell.b_f = Tensor::full({ch}, 1.0);
  p.cell.w_xo = conv_init(co, ch);
  p.cell.w_ho = conv_init(ch, ch);
  p.cell.b_o = Tensor({ch});
  p.cell.w_xc = conv_init(co, ch);
  p.cell.w_hc = conv_init(ch, ch);
  p.cell.b_c = Tensor({ch});
  p.head.weights = detail::glorot_uniform({ch}, ch, 1, rng);
  p.head.bias = Tensor::scalar(0.0);
  return p;
}

inline ModelParams zero_params(const ModelConfig& cfg) {
  ModelParams p = init_weights(cfg, Rng(0));
  p.for_each([](const char*, Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
  return p;
}

/// Inverted dropout. Training mode masks elements with probability `rate`
/// and rescales survivors by 1/(1-rate); eval mode is the identity.
inline Tensor apply_dropout(const Tensor& h, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate > 0.5)
    throw std::invalid_argument("dropout: rate " + std::to_string(rate) + " outside [0,0.5]");
  if (!training || rate == 0.0) return h;
  Tensor out = h;
  const double keep = 1.0 - rate;
  for (double& v : out.data) v = rng.uniform() < rate ? 0.0 : v / keep;
  return out;
}

/// Mask tensor for tape-side dropout: entries are 0 or 1/(1-rate), so a
/// single elementwise multiply applies inverted dropout.
inline Tensor make_dropout_mask(int n, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 0.5)
    throw std::invalid_argument("dropout: rate " + std::to_string(rate) + " outside [0,0.5]");
  Tensor mask = Tensor::full({n}, 1.0);
  if (rate == 0.0) return mask;
  const double keep = 1.0 - rate;
  for (double& v : mask.data) v = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  return mask;
}

/// Parameter leaves staged on one tape. Reused across all time steps so the
/// backward pass accumulates shared-weight gradients automatically.
struct TapeParams {
  int conv_kernel, conv_bias;
  int w_xi, w_hi, b_i;
  int w_xf, w_hf, b_f;
  int w_xo, w_ho, b_o;
  int w_xc, w_hc, b_c;
  int dense_w, dense_b;
};

inline TapeParams stage_params(ad::Tape& t, const ModelParams& p) {
  TapeParams tp;
  tp.conv_kernel = t.leaf(p.feature.kernel);
  tp.conv_bias = t.leaf(p.feature.bias);
  tp.w_xi = t.leaf(p.cell.w_xi);
  tp.w_hi = t.leaf(p.cell.w_hi);
  tp.b_i = t.leaf(p.cell.b_i);
  tp.w_xf = t.leaf(p.cell.w_xf);
  tp.w_hf = t.leaf(p.cell.w_hf);
  tp.b_f = t.leaf(p.cell.b_f);
  tp.w_xo = t.leaf(p.cell.w_xo);
  tp.w_ho = t.leaf(p.cell.w_ho);
  tp.b_o = t.leaf(p.cell.b_o);
  tp.w_xc = t.leaf(p.cell.w_xc);
  tp.w_hc = t.leaf(p.cell.w_hc);
  tp.b_c = t.leaf(p.cell.b_c);
  tp.dense_w = t.leaf(p.head.weights);
  tp.dense_b = t.leaf(p.head.bias);
  return tp;
}

/// Gradient of the loss for each parameter, read back from a tape in the
/// same order as ModelParams::for_each.
inline std::vector<const Tensor*> param_grads(const ad::Tape& t, const TapeParams& tp) {
  return {&t.grad(tp.conv_kernel), &t.grad(tp.conv_bias), &t.grad(tp.w_xi), &t.grad(tp.w_hi),
          &t.grad(tp.b_i),         &t.grad(tp.w_xf),      &t.grad(tp.w_hf), &t.grad(tp.b_f),
          &t.grad(tp.w_xo),        &t.grad(tp.w_ho),      &t.grad(tp.b_o),  &t.grad(tp.w_xc),
          &t.grad(tp.w_hc),        &t.grad(tp.b_c),       &t.grad(tp.dense_w),
          &t.grad(tp.dense_b)};
}

/// ReLU(conv(x)) feature extraction for one time step.
inline int conv_feature_forward(ad::Tape& t, int x_t, const TapeParams& tp) {
  return t.relu(t.conv2d(x_t, tp.conv_kernel, tp.conv_bias));
}

struct StepHandles {
  int i, f, o;  // gate activations
  int c, h;     // new cell and hidden state
};

/// One recurrent update:
///   i_t = sigma(W_xi * F_t + W_hi * H_{t-1} + b_i)
///   f_t = sigma(W_xf * F_t + W_hf * H_{t-1} + b_f)
///   o_t = sigma(W_xo * F_t + W_ho * H_{t-1} + b_o)
///   C_t = f_t . C_{t-1} + i_t . tanh(W_xc * F_t + W_hc * H_{t-1} + b_c)
///   H_t = o_t . tanh(C_t)
inline StepHandles convlstm_step(ad::Tape& t, int f_t, int h_prev, int c_prev,
                                 const TapeParams& tp) {
  StepHandles s;
  s.i = t.sigmoid(t.add(t.conv2d(f_t, tp.w_xi, tp.b_i), t.conv2d(h_prev, tp.w_hi)));
  s.f = t.sigmoid(t.add(t.conv2d(f_t, tp.w_xf, tp.b_f), t.conv2d(h_prev, tp.w_hf)));
  s.o = t.sigmoid(t.add(t.conv2d(f_t, tp.w_xo, tp.b_o), t.conv2d(h_prev, tp.w_ho)));
  int cand = t.tanh(t.add(t.conv2d(f_t, tp.w_xc, tp.b_c), t.conv2d(h_prev, tp.w_hc)));
  s.c = t.add(t.mul(s.f, c_prev), t.mul(s.i, cand));
  s.h = t.mul(s.o, t.tanh(s.c));
  return s;
}

struct ForwardHandles {
  int prediction;             // scalar, log1p space
  int last_hidden;            // H_T, [H,W,Ch]
  int last_cell;              // C_T
  int pooled;                 // G(H_T), [Ch]
  std::vector<int> features;  // per-step F_t ids
};

/// Extract one time-step slice [H,W,F] from an input cube [T,H,W,F].
inline Tensor slice_step(const Tensor& x, int step) {
  const int t = x.shape[0], h = x.shape[1], w = x.shape[2], f = x.shape[3];
  if (step < 0 || step >= t) throw std::out_of_range("slice_step: bad step");
  Tensor out({h, w, f});
  const std::int64_t n = static_cast<std::int64_t>(h) * w * f;
  std::copy_n(x.data.begin() + static_cast<std::int64_t>(step) * n, n, out.data.begin());
  return out;
}

/// Full forward pass from explicit initial state. The caller owns the state
/// leaves, which makes chained evaluation (and its bit-identity with a
/// single call) testable.
inline ForwardHandles model_forward_from_state(ad::Tape& t, const Tensor& x,
                                               const TapeParams& tp, int h0, int c0,
                                               const Tensor* dropout_mask = nullptr) {
  if (x.rank() != 4)
    throw std::invalid_argument("model_forward: input must be [T,H,W,F], got " +
                                shape_str(x.shape));
  ForwardHandles out;
  int h = h0, c = c0;
  const int steps = x.shape[0];
  for (int step = 0; step < steps; ++step) {
    int f_t = conv_feature_forward(t, t.leaf(slice_step(x, step)), tp);
    out.features.push_back(f_t);
    StepHandles s = convlstm_step(t, f_t, h, c, tp);
    h = s.h;
    c = s.c;
  }
  out.last_hidden = h;
  out.last_cell = c;
  int pooled = t.global_avg_pool(h);
  if (dropout_mask) pooled = t.mul(pooled, t.leaf(*dropout_mask));
  out.pooled = pooled;
  out.prediction = t.add(t.sum(t.mul(pooled, tp.dense_w)), tp.dense_b);
  return out;
}

/// Standard entry point: zero initial state, shared weights across steps,
/// pooled hidden state through the dense head. Prediction is in log1p
/// space; callers map back to mm/day.
inline ForwardHandles model_forward(ad::Tape& t, const Tensor& x, const ModelConfig& cfg,
                                    const TapeParams& tp, const Tensor* dropout_mask = nullptr) {
  if (x.shape != Shape{cfg.seq_len, cfg.rows, cfg.cols, cfg.channels})
    throw std::invalid_argument("model_forward: input " + shape_str(x.shape) +
                                " does not match configured dims " +
                                shape_str({cfg.seq_len, cfg.rows, cfg.cols, cfg.channels}));
  Tensor zero({cfg.rows, cfg.cols, cfg.convlstm_filters});
  int h0 = t.leaf(zero);
  int c0 = t.leaf(zero);
  return model_forward_from_state(t, x, tp, h0, c0, dropout_mask);
}

/// Inference-only evaluation. Pure: identical inputs give identical output.
inline double predict(const ModelConfig& cfg, const ModelParams& p, const Tensor& x) {
  ad::Tape t;
  TapeParams tp = stage_params(t, p);
  return t.val(model_forward(t, x, cfg, tp).prediction)[0];
}

}  // namespace raincast::nn
