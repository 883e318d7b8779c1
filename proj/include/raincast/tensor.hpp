#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace raincast {

/// Extents of a dense tensor, outermost first. At most 5 axes.
using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor of 64-bit floats. Unit-free; units are carried by
/// callers. Rank 0 is a scalar with one element.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)) {
    check_shape(shape);
    data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
  }

  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("tensor: " + std::to_string(data.size()) +
                                  " values do not fill shape " + shape_str(shape));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return data.size() == 1 && shape.empty(); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  /// Multi-index access; index count must equal rank.
  template <typename... Ix>
  double& at(Ix... ix) {
    return data[static_cast<std::size_t>(flat_index({static_cast<int>(ix)...}))];
  }
  template <typename... Ix>
  double at(Ix... ix) const {
    return data[static_cast<std::size_t>(flat_index({static_cast<int>(ix)...}))];
  }

  std::int64_t flat_index(std::initializer_list<int> ix) const {
    if (static_cast<int>(ix.size()) != rank())
      throw std::invalid_argument("tensor: index rank mismatch for shape " + shape_str(shape));
    std::int64_t flat = 0;
    int axis = 0;
    for (int i : ix) {
      flat = flat * shape[axis] + i;
      ++axis;
    }
    return flat;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

private:
  static void check_shape(const Shape& s) {
    if (s.size() > 5) throw std::invalid_argument("tensor: rank > 5 not supported");
    for (int d : s)
      if (d <= 0) throw std::invalid_argument("tensor: nonpositive extent in " + shape_str(s));
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

// Broadcasting follows the trailing-alignment rule: shapes are right-aligned,
// missing leading axes count as extent 1, and each aligned pair must match or
// be 1 on one side.
inline bool broadcast_shape(const Shape& a, const Shape& b, Shape& out) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  out.assign(r, 1);
  for (int i = 0; i < r; ++i) {
    const int da = i < ra ? a[ra - 1 - i] : 1;
    const int db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) return false;
    out[r - 1 - i] = std::max(da, db);
  }
  return true;
}

namespace detail {

// Row-major strides, with 0 on axes that are broadcast (extent 1 vs > 1).
inline void broadcast_strides(const Shape& src, const Shape& dst, std::int64_t* strides) {
  const int rs = static_cast<int>(src.size()), rd = static_cast<int>(dst.size());
  std::int64_t stride = 1;
  std::vector<std::int64_t> natural(rs);
  for (int i = rs - 1; i >= 0; --i) {
    natural[i] = stride;
    stride *= src[i];
  }
  for (int i = 0; i < rd; ++i) {
    const int si = i - (rd - rs);
    if (si < 0 || src[si] == 1)
      strides[i] = 0;
    else
      strides[i] = natural[si];
  }
}

}  // namespace detail

/// Apply binary op elementwise with broadcasting. fn(double,double)->double.
template <typename Fn>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, Fn&& fn) {
  if (same_shape(a, b)) {
    Tensor out(a.shape);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    return out;
  }
  Shape os;
  if (!broadcast_shape(a.shape, b.shape, os))
    throw std::invalid_argument("shape mismatch: " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  Tensor out(os);
  const int r = static_cast<int>(os.size());
  std::int64_t sa[6] = {0}, sb[6] = {0};
  detail::broadcast_strides(a.shape, os, sa);
  detail::broadcast_strides(b.shape, os, sb);
  std::vector<int> ix(r, 0);
  for (std::int64_t flat = 0; flat < out.size(); ++flat) {
    std::int64_t ia = 0, ib = 0;
    for (int i = 0; i < r; ++i) {
      ia += ix[i] * sa[i];
      ib += ix[i] * sb[i];
    }
    out[flat] = fn(a[ia], b[ib]);
    for (int i = r - 1; i >= 0; --i) {
      if (++ix[i] < os[i]) break;
      ix[i] = 0;
    }
  }
  return out;
}

/// Sum-reduce `g` (shaped like the broadcast output) back to `target` shape.
inline Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape == target) return g;
  Tensor out(target);
  const int r = g.rank();
  std::int64_t st[6] = {0};
  detail::broadcast_strides(target, g.shape, st);
  std::vector<int> ix(r, 0);
  for (std::int64_t flat = 0; flat < g.size(); ++flat) {
    std::int64_t it = 0;
    for (int i = 0; i < r; ++i) it += ix[i] * st[i];
    out[it] += g[flat];
    for (int i = r - 1; i >= 0; --i) {
      if (++ix[i] < g.shape[i]) break;
      ix[i] = 0;
    }
  }
  return out;
}

}  // namespace raincast
