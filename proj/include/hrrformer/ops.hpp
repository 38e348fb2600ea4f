#pragma once

// Differentiable tensor operations. Every function returns a fresh tensor and,
// when recording, registers the analytic backward rule for its inputs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hrrformer/error.hpp"
#include "hrrformer/fft.hpp"
#include "hrrformer/rng.hpp"
#include "hrrformer/tensor.hpp"

namespace hrrformer {

namespace debug {
// Mutation switch for self-test sanity checks: when set, the circular
// convolution backward rule uses convolution instead of correlation.
inline std::atomic<bool>& corrupt_conv_backward() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace debug

namespace detail {

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Element strides of `in` laid against `out`; broadcast axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t d = in.size() - 1 - i;
    const std::size_t o = out.size() - 1 - i;
    strides[o] = in[d] == 1 ? 0 : stride;
    stride *= in[d];
  }
  return strides;
}

// Calls fn(out_offset, a_offset, b_offset) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& fn) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1], ib = sb[rank - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Splits a shape around one axis into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class T, class F, class GA, class GB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, GA ga, GB gb) {
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  Buffer<T> values(numel(out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = f(pa[i], pb[i]);
  } else {
    for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      values[o] = f(pa[i], pb[j]);
    });
  }
  return make_result<T>(op, out, std::move(values), {&a, &b},
                        [a = a.detach(), b = b.detach(), out, sa, sb, ga, gb](
                            const Buffer<T>& g, const std::vector<bool>& needs) {
                          std::vector<Buffer<T>> grads(2);
                          if (needs[0]) grads[0].assign(a.size(), T(0));
                          if (needs[1]) grads[1].assign(b.size(), T(0));
                          const T* pa = a.data().data();
                          const T* pb = b.data().data();
                          for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
                            if (needs[0]) grads[0][i] += ga(pa[i], pb[j], g[o]);
                            if (needs[1]) grads[1][j] += gb(pa[i], pb[j], g[o]);
                          });
                          return grads;
                        });
}

template <class T, class F, class G>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, G dg) {
  Buffer<T> values(a.size());
  const T* pa = a.data().data();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = f(pa[i]);
  return make_result<T>(op, a.shape(), std::move(values), {&a},
                        [a = a.detach(), dg](const Buffer<T>& g, const std::vector<bool>&) {
                          std::vector<Buffer<T>> grads(1);
                          grads[0].resize(a.size());
                          const T* pa = a.data().data();
                          for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] = dg(pa[i], g[i]);
                          return grads;
                        });
}

}  // namespace detail

// --- elementwise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return detail::unary<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T, T g) { return g * factor; });
}

// a + c for a scalar constant c.
template <class T>
Tensor<T> shift(const Tensor<T>& a, T c) {
  return detail::unary<T>("shift", a, [c](T x) { return x + c; }, [](T, T g) { return g; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T g) { return x > T(0) ? g : T(0); });
}

// --- shape -----------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), a.buffer(), {&a},
                                [](const Buffer<T>& g, const std::vector<bool>&) {
                                  return std::vector<Buffer<T>>{g};
                                });
}

// General axis permutation: out.shape[i] == a.shape[perm[i]].
template <class T>
Tensor<T> transpose(const Tensor<T>& a, std::vector<std::size_t> perm) {
  const std::size_t rank = a.rank();
  if (perm.size() != rank) throw DimensionError("transpose permutation has wrong rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("transpose argument is not a permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * a.shape()[d];
  Shape out(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = a.shape()[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  // Maps output flat index to input flat index.
  auto gather = [out, strides](auto&& fn) {
    const std::vector<std::size_t> zero(out.size(), 0);
    detail::for_each_broadcast(out, strides, zero,
                               [&](std::size_t o, std::size_t i, std::size_t) { fn(o, i); });
  };
  Buffer<T> values(a.size());
  const T* pa = a.data().data();
  gather([&](std::size_t o, std::size_t i) { values[o] = pa[i]; });
  return detail::make_result<T>("transpose", out, std::move(values), {&a},
                                [gather, n = a.size()](const Buffer<T>& g, const std::vector<bool>&) {
                                  std::vector<Buffer<T>> grads(1);
                                  grads[0].resize(n);
                                  gather([&](std::size_t o, std::size_t i) { grads[0][i] = g[o]; });
                                  return grads;
                                });
}

// --- reductions ------------------------------------------------------------

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& a, int axis, bool keepdim = false) {
  const std::size_t ax = resolve_axis(axis, a.rank());
  const auto s = detail::split_at(a.shape(), ax);
  Shape out = a.shape();
  if (keepdim) {
    out[ax] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  Buffer<T> values(s.outer * s.inner, T(0));
  const T* pa = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const T* row = pa + (o * s.extent + k) * s.inner;
      T* dst = values.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  return detail::make_result<T>("reduce_sum", std::move(out), std::move(values), {&a},
                                [s](const Buffer<T>& g, const std::vector<bool>&) {
                                  std::vector<Buffer<T>> grads(1);
                                  grads[0].resize(s.outer * s.extent * s.inner);
                                  for (std::size_t o = 0; o < s.outer; ++o) {
                                    for (std::size_t k = 0; k < s.extent; ++k) {
                                      T* dst = grads[0].data() + (o * s.extent + k) * s.inner;
                                      const T* src = g.data() + o * s.inner;
                                      std::copy(src, src + s.inner, dst);
                                    }
                                  }
                                  return grads;
                                });
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& a, int axis, bool keepdim = false) {
  const std::size_t extent = a.dim(axis);
  if (extent == 0) throw DimensionError("reduce_mean over an empty axis");
  return scale(reduce_sum(a, axis, keepdim), T(1) / static_cast<T>(extent));
}

// Sum of every element, as a rank-0 tensor.
template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  return reduce_sum(reshape(a, Shape{a.size()}), 0);
}

// --- linear algebra --------------------------------------------------------

namespace detail {
// c[M,N] += a[M,K] * b[K,N]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
// c[M,K] += g[M,N] * b[K,N]^T, via a transposed copy of b so the inner
// loop is a contiguous axpy.
template <class T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(g, bt.data(), c, m, n, k);
}
// c[K,N] += a[M,K]^T * g[M,N]
template <class T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* grow = g + i * n;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}
}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 operands");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul inner extents differ: " + to_string(a.shape()) + " @ " +
                         to_string(b.shape()));
  }
  Buffer<T> values(m * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), values.data(), m, k, n);
  return detail::make_result<T>(
      "matmul", Shape{m, n}, std::move(values), {&a, &b},
      [a = a.detach(), b = b.detach(), m, k, n](const Buffer<T>& g, const std::vector<bool>& needs) {
        std::vector<Buffer<T>> grads(2);
        if (needs[0]) {
          grads[0].assign(m * k, T(0));
          detail::gemm_nt(g.data(), b.data().data(), grads[0].data(), m, k, n);
        }
        if (needs[1]) {
          grads[1].assign(k * n, T(0));
          detail::gemm_tn(a.data().data(), g.data(), grads[1].data(), m, k, n);
        }
        return grads;
      });
}

// x[..., K] @ w[K, N] -> [..., N]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() < 1 || w.rank() != 2) throw DimensionError("linear expects x[...,K] and w[K,N]");
  const std::size_t k = x.shape().back();
  Shape out = x.shape();
  out.back() = w.shape()[1];
  const Tensor<T> flat = reshape(x, Shape{x.size() / std::max<std::size_t>(k, 1), k});
  return reshape(matmul(flat, w), std::move(out));
}

// --- softmax and loss ------------------------------------------------------

// Max-subtracted exponential normalisation along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const std::size_t ax = resolve_axis(axis, a.rank());
  const auto s = detail::split_at(a.shape(), ax);
  Buffer<T> values(a.size());
  const T* pa = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, pa[base + k * s.inner]);
      T total = 0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(pa[base + k * s.inner] - mx);
        values[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) values[base + k * s.inner] /= total;
    }
  }
  Tensor<T> y(a.shape(), values);
  return detail::make_result<T>("softmax", a.shape(), std::move(values), {&a},
                                [y, s](const Buffer<T>& g, const std::vector<bool>&) {
                                  std::vector<Buffer<T>> grads(1);
                                  grads[0].resize(y.size());
                                  const T* py = y.data().data();
                                  for (std::size_t o = 0; o < s.outer; ++o) {
                                    for (std::size_t i = 0; i < s.inner; ++i) {
                                      const std::size_t base = o * s.extent * s.inner + i;
                                      T dot = 0;
                                      for (std::size_t k = 0; k < s.extent; ++k) {
                                        const std::size_t j = base + k * s.inner;
                                        dot += g[j] * py[j];
                                      }
                                      for (std::size_t k = 0; k < s.extent; ++k) {
                                        const std::size_t j = base + k * s.inner;
                                        grads[0][j] = py[j] * (g[j] - dot);
                                      }
                                    }
                                  }
                                  return grads;
                                });
}

// Mean over the batch of -log softmax(logits)[label].
template <class T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects logits[B,C]");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) throw DimensionError("label count does not match batch");
  if (batch == 0) throw DimensionError("cross_entropy on an empty batch");
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw IndexError("label " + std::to_string(label) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  Buffer<T> probs(logits.size());
  const T* pl = logits.data().data();
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = pl + b * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - mx);
      total += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= total;
    loss += std::log(total) + mx - row[labels[b]];
  }
  loss /= static_cast<T>(batch);
  std::vector<int> owned(labels.begin(), labels.end());
  return detail::make_result<T>(
      "cross_entropy", Shape{}, Buffer<T>{loss}, {&logits},
      [probs = std::move(probs), owned = std::move(owned), batch, classes](
          const Buffer<T>& g, const std::vector<bool>&) {
        std::vector<Buffer<T>> grads(1);
        grads[0] = probs;
        for (std::size_t b = 0; b < batch; ++b) grads[0][b * classes + owned[b]] -= T(1);
        const T factor = g[0] / static_cast<T>(batch);
        for (T& v : grads[0]) v *= factor;
        return grads;
      });
}

// --- embedding, normalisation, dropout ---------------------------------------

// Gathers rows of table[V,E]; result shape is ids_shape + [E].
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids, Shape ids_shape) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2");
  if (numel(ids_shape) != ids.size()) throw DimensionError("ids do not fill ids_shape");
  const std::size_t vocab = table.shape()[0], width = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  Buffer<T> values(ids.size() * width);
  const T* pt = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(pt + static_cast<std::size_t>(ids[i]) * width, width, values.data() + i * width);
  }
  ids_shape.push_back(width);
  std::vector<int> owned(ids.begin(), ids.end());
  return detail::make_result<T>("embedding_lookup", std::move(ids_shape), std::move(values), {&table},
                                [owned = std::move(owned), vocab, width](const Buffer<T>& g,
                                                                       const std::vector<bool>&) {
                                  std::vector<Buffer<T>> grads(1);
                                  grads[0].assign(vocab * width, T(0));
                                  for (std::size_t i = 0; i < owned.size(); ++i) {
                                    T* dst = grads[0].data() + static_cast<std::size_t>(owned[i]) * width;
                                    const T* src = g.data() + i * width;
                                    for (std::size_t e = 0; e < width; ++e) dst[e] += src[e];
                                  }
                                  return grads;
                                });
}

// Normalises over the last axis, then applies gain and bias of that width.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t width = x.shape().back();
  if (gain.size() != width || bias.size() != width) {
    throw DimensionError("layer_norm gain/bias width does not match input");
  }
  const std::size_t rows = x.size() / width;
  Buffer<T> values(x.size());
  Buffer<T> normed(x.size());
  std::vector<T> inv_std(rows);
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * width;
    T mean = 0;
    for (std::size_t i = 0; i < width; ++i) mean += row[i];
    mean /= static_cast<T>(width);
    T var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<T>(width);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < width; ++i) {
      const T n = (row[i] - mean) * inv_std[r];
      normed[r * width + i] = n;
      values[r * width + i] = n * pg[i] + pb[i];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(values), {&x, &gain, &bias},
      [normed = std::move(normed), inv_std = std::move(inv_std), gain = gain.detach(), rows, width](
          const Buffer<T>& g, const std::vector<bool>& needs) {
        std::vector<Buffer<T>> grads(3);
        const T* pg = gain.data().data();
        if (needs[0]) {
          grads[0].resize(rows * width);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dn = 0;
            for (std::size_t i = 0; i < width; ++i) {
              const T d = g[r * width + i] * pg[i];
              mean_d += d;
              mean_dn += d * normed[r * width + i];
            }
            mean_d /= static_cast<T>(width);
            mean_dn /= static_cast<T>(width);
            for (std::size_t i = 0; i < width; ++i) {
              const T d = g[r * width + i] * pg[i];
              grads[0][r * width + i] = inv_std[r] * (d - mean_d - normed[r * width + i] * mean_dn);
            }
          }
        }
        if (needs[1] || needs[2]) {
          grads[1].assign(width, T(0));
          grads[2].assign(width, T(0));
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < width; ++i) {
              grads[1][i] += g[r * width + i] * normed[r * width + i];
              grads[2][i] += g[r * width + i];
            }
          }
        }
        return grads;
      });
}

// Inverted dropout: zeroes each element with probability `rate` and scales
// survivors by 1/(1-rate). Rate 0 returns the input unchanged.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0,1)");
  if (rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Buffer<T> mask(x.size());
  for (T& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

// --- circular convolution --------------------------------------------------

// F^-1(F(x) . F(y)) over the trailing axis, broadcasting leading axes.
// Every output row costs three real FFTs, in the forward and in each
// backward direction that is needed.
template <class T>
Tensor<T> rfft_circular_conv(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.rank() == 0 || y.rank() == 0) throw DimensionError("circular conv needs rank >= 1");
  const std::size_t width = x.shape().back();
  if (y.shape().back() != width) {
    throw DimensionError("circular conv trailing extents differ: " + to_string(x.shape()) +
                         " vs " + to_string(y.shape()));
  }
  if (width == 0) throw DimensionError("circular conv on empty vectors");
  Shape lead_x(x.shape().begin(), x.shape().end() - 1);
  Shape lead_y(y.shape().begin(), y.shape().end() - 1);
  const Shape lead = detail::broadcast_shapes(lead_x, lead_y);
  const auto sx = detail::broadcast_strides(lead_x, lead);
  const auto sy = detail::broadcast_strides(lead_y, lead);
  Shape out = lead;
  out.push_back(width);

  Buffer<T> values(numel(out));
  const T* px = x.data().data();
  const T* py = y.data().data();
  detail::for_each_broadcast(lead, sx, sy, [&](std::size_t o, std::size_t i, std::size_t j) {
    fft::circular_pair<T>({px + i * width, width}, {py + j * width, width},
                          {values.data() + o * width, width}, fft::Pairing::kConvolve);
  });

  return detail::make_result<T>(
      "rfft_circular_conv", out, std::move(values), {&x, &y},
      [x = x.detach(), y = y.detach(), lead, sx, sy, width](const Buffer<T>& g,
                                                            const std::vector<bool>& needs) {
        std::vector<Buffer<T>> grads(2);
        if (needs[0]) grads[0].assign(x.size(), T(0));
        if (needs[1]) grads[1].assign(y.size(), T(0));
        const auto pairing = debug::corrupt_conv_backward() ? fft::Pairing::kConvolve
                                                            : fft::Pairing::kCorrelate;
        std::vector<T> tmp(width);
        const T* px = x.data().data();
        const T* py = y.data().data();
        detail::for_each_broadcast(lead, sx, sy, [&](std::size_t o, std::size_t i, std::size_t j) {
          const std::span<const T> grow{g.data() + o * width, width};
          if (needs[0]) {
            fft::circular_pair<T>(grow, {py + j * width, width}, tmp, pairing);
            for (std::size_t k = 0; k < width; ++k) grads[0][i * width + k] += tmp[k];
          }
          if (needs[1]) {
            fft::circular_pair<T>(grow, {px + i * width, width}, tmp, pairing);
            for (std::size_t k = 0; k < width; ++k) grads[1][j * width + k] += tmp[k];
          }
        });
        return grads;
      });
}

}  // namespace hrrformer
