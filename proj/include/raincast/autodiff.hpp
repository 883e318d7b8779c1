#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/tensor.hpp"

namespace raincast::ad {

enum class Op {
  leaf,
  add,
  sub,
  mul,
  scale,
  sigmoid,
  tanh_fn,
  relu,
  conv2d,
  global_avg_pool,
  sum_all,
};

/// One recorded operation. Parents precede children in tape order; the
/// gradient accumulator starts at zero and is add-accumulated on backward.
struct TapeNode {
  Op op = Op::leaf;
  int a = -1, b = -1, c = -1;  // parent ids
  double alpha = 0.0;          // constant for scale
  Tensor value;
  Tensor grad;
};

/// Reverse-mode autodiff over an explicit operation tape. Ops evaluate
/// eagerly on record; backward() walks the tape once in reverse. A tape is
/// single-threaded; reuse between steps goes through clear().
class Tape {
public:
  int leaf(Tensor v) { return push(Op::leaf, -1, -1, -1, std::move(v)); }

  int add(int a, int b) {
    return push(Op::add, a, b, -1,
                broadcast_binary(val(a), val(b), [](double x, double y) { return x + y; }));
  }

  int sub(int a, int b) {
    return push(Op::sub, a, b, -1,
                broadcast_binary(val(a), val(b), [](double x, double y) { return x - y; }));
  }

  int mul(int a, int b) {
    return push(Op::mul, a, b, -1,
                broadcast_binary(val(a), val(b), [](double x, double y) { return x * y; }));
  }

  int scale(int a, double k) {
    Tensor out = val(a);
    for (double& v : out.data) v *= k;
    int id = push(Op::scale, a, -1, -1, std::move(out));
    nodes_[id].alpha = k;
    return id;
  }

  int sigmoid(int a) {
    Tensor out = val(a);
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(Op::sigmoid, a, -1, -1, std::move(out));
  }

  int tanh(int a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::tanh(v);
    return push(Op::tanh_fn, a, -1, -1, std::move(out));
  }

  int relu(int a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(Op::relu, a, -1, -1, std::move(out));
  }

  /// Spatial convolution, cross-correlation convention (no kernel flip).
  /// input [H,W,Cin], kernel [k,k,Cin,Cout], optional bias [Cout].
  /// Stride 1, zero "same" padding: output is [H,W,Cout]. k must be odd.
  int conv2d(int input, int kernel, int bias = -1) {
    const Tensor& x = val(input);
    const Tensor& w = val(kernel);
    if (x.rank() != 3 || w.rank() != 4)
      throw std::invalid_argument("conv2d: need input [H,W,Cin] and kernel [k,k,Cin,Cout], got " +
                                  shape_str(x.shape) + " and " + shape_str(w.shape));
    const int k = w.shape[0];
    if (w.shape[1] != k) throw std::invalid_argument("conv2d: kernel must be square");
    if (k % 2 == 0) throw std::invalid_argument("conv2d: even kernel size " + std::to_string(k));
    if (w.shape[2] != x.shape[2])
      throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape) +
                                  " vs kernel " + shape_str(w.shape));
    const int cout = w.shape[3];
    if (bias >= 0) {
      const Tensor& b = val(bias);
      if (b.shape != Shape{cout})
        throw std::invalid_argument("conv2d: bias shape " + shape_str(b.shape) + " != [" +
                                    std::to_string(cout) + "]");
    }
    Tensor out({x.shape[0], x.shape[1], cout});
    conv_forward(x, w, bias >= 0 ? &val(bias) : nullptr, out);
    return push(Op::conv2d, input, kernel, bias, std::move(out));
  }

  /// Per-channel mean over the spatial axes: [H,W,C] -> [C].
  int global_avg_pool(int a) {
    const Tensor& x = val(a);
    if (x.rank() != 3) throw std::invalid_argument("global_avg_pool: need [H,W,C]");
    const int hw = x.shape[0] * x.shape[1], c = x.shape[2];
    Tensor out({c});
    for (int i = 0; i < hw; ++i)
      for (int j = 0; j < c; ++j) out[j] += x[static_cast<std::int64_t>(i) * c + j];
    for (int j = 0; j < c; ++j) out[j] /= hw;
    return push(Op::global_avg_pool, a, -1, -1, std::move(out));
  }

  /// Sum of all elements -> scalar.
  int sum(int a) {
    const Tensor& x = val(a);
    double s = 0.0;
    for (double v : x.data) s += v;
    return push(Op::sum_all, a, -1, -1, Tensor::scalar(s));
  }

  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Reverse sweep from a scalar loss. Every node reachable from the loss
  /// receives its exact gradient; leaves keep theirs for the caller to read.
  void backward(int loss) {
    Tensor& lv = nodes_[static_cast<std::size_t>(loss)].value;
    if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    for (TapeNode& n : nodes_) {
      n.grad = Tensor(n.value.shape);
    }
    nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
    for (int id = loss; id >= 0; --id) backward_node(id);
  }

  void clear() { nodes_.clear(); }

private:
  int push(Op op, int a, int b, int c, Tensor v) {
    TapeNode n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int id, const Tensor& g) {
    Tensor& dst = nodes_[static_cast<std::size_t>(id)].grad;
    if (dst.shape == g.shape) {
      for (std::int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    } else {
      Tensor r = reduce_to_shape(g, dst.shape);
      for (std::int64_t i = 0; i < r.size(); ++i) dst[i] += r[i];
    }
  }

  void backward_node(int id) {
    TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::sub: {
        accumulate(n.a, g);
        Tensor neg = g;
        for (double& v : neg.data) v = -v;
        accumulate(n.b, neg);
        break;
      }
      case Op::mul: {
        accumulate(n.a, broadcast_binary(g, val(n.b), [](double x, double y) { return x * y; }));
        accumulate(n.b, broadcast_binary(g, val(n.a), [](double x, double y) { return x * y; }));
        break;
      }
      case Op::scale: {
        Tensor s = g;
        for (double& v : s.data) v *= n.alpha;
        accumulate(n.a, s);
        break;
      }
      case Op::sigmoid: {
        Tensor d = g;
        for (std::int64_t i = 0; i < d.size(); ++i) {
          const double s = n.value[i];
          d[i] *= s * (1.0 - s);
        }
        accumulate(n.a, d);
        break;
      }
      case Op::tanh_fn: {
        Tensor d = g;
        for (std::int64_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(n.a, d);
        break;
      }
      case Op::relu: {
        const Tensor& x = val(n.a);
        Tensor d = g;
        for (std::int64_t i = 0; i < d.size(); ++i)
          if (x[i] <= 0.0) d[i] = 0.0;
        accumulate(n.a, d);
        break;
      }
      case Op::conv2d: {
        conv_backward(id);
        break;
      }
      case Op::global_avg_pool: {
        const Tensor& x = val(n.a);
        const int hw = x.shape[0] * x.shape[1], c = x.shape[2];
        Tensor d(x.shape);
        for (int i = 0; i < hw; ++i)
          for (int j = 0; j < c; ++j) d[static_cast<std::int64_t>(i) * c + j] = g[j] / hw;
        accumulate(n.a, d);
        break;
      }
      case Op::sum_all: {
        Tensor d = Tensor::full(val(n.a).shape, g[0]);
        accumulate(n.a, d);
        break;
      }
    }
  }

  static void conv_forward(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out) {
    const int h = x.shape[0], wd = x.shape[1], cin = x.shape[2];
    const int k = w.shape[0], cout = w.shape[3];
    const int pad = k / 2;
    const double* xd = x.data.data();
    const double* wd_ = w.data.data();
    double* od = out.data.data();
    for (int r = 0; r < h; ++r) {
      for (int cc = 0; cc < wd; ++cc) {
        double* orow = od + (static_cast<std::int64_t>(r) * wd + cc) * cout;
        if (bias) {
          const double* bd = bias->data.data();
          for (int co = 0; co < cout; ++co) orow[co] = bd[co];
        }
        for (int kr = 0; kr < k; ++kr) {
          const int ir = r + kr - pad;
          if (ir < 0 || ir >= h) continue;
          for (int kc = 0; kc < k; ++kc) {
            const int ic = cc + kc - pad;
            if (ic < 0 || ic >= wd) continue;
            const double* xrow = xd + (static_cast<std::int64_t>(ir) * wd + ic) * cin;
            const double* wrow = wd_ + (static_cast<std::int64_t>(kr) * k + kc) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double xv = xrow[ci];
              const double* wk = wrow + static_cast<std::int64_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) orow[co] += xv * wk[co];
            }
          }
        }
      }
    }
  }

  void conv_backward(int id) {
    TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& x = val(n.a);
    const Tensor& w = val(n.b);
    const Tensor& g = n.grad;
    const int h = x.shape[0], wd = x.shape[1], cin = x.shape[2];
    const int k = w.shape[0], cout = w.shape[3];
    const int pad = k / 2;

    Tensor gx(x.shape);
    Tensor gw(w.shape);
    const double* xd = x.data.data();
    const double* wdat = w.data.data();
    const double* gd = g.data.data();
    double* gxd = gx.data.data();
    double* gwd = gw.data.data();
    for (int r = 0; r < h; ++r) {
      for (int cc = 0; cc < wd; ++cc) {
        const double* grow = gd + (static_cast<std::int64_t>(r) * wd + cc) * cout;
        for (int kr = 0; kr < k; ++kr) {
          const int ir = r + kr - pad;
          if (ir < 0 || ir >= h) continue;
          for (int kc = 0; kc < k; ++kc) {
            const int ic = cc + kc - pad;
            if (ic < 0 || ic >= wd) continue;
            const std::int64_t xoff = (static_cast<std::int64_t>(ir) * wd + ic) * cin;
            const std::int64_t woff = (static_cast<std::int64_t>(kr) * k + kc) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double* wk = wdat + woff + static_cast<std::int64_t>(ci) * cout;
              double* gwk = gwd + woff + static_cast<std::int64_t>(ci) * cout;
              const double xv = xd[xoff + ci];
              double acc = 0.0;
              for (int co = 0; co < cout; ++co) {
                acc += wk[co] * grow[co];
                gwk[co] += xv * grow[co];
              }
              gxd[xoff + ci] += acc;
            }
          }
        }
      }
    }
    accumulate(n.a, gx);
    accumulate(n.b, gw);
    if (n.c >= 0) {
      Tensor gb({cout});
      for (int i = 0; i < h * wd; ++i)
        for (int co = 0; co < cout; ++co) gb[co] += gd[static_cast<std::int64_t>(i) * cout + co];
      accumulate(n.c, gb);
    }
  }

  std::vector<TapeNode> nodes_;
};

}  // namespace raincast::ad
