#pragma once

// Multi-head self-attention built from HRR operations, plus a quadratic
// scaled dot-product baseline with the same projection wiring.
//
// Per (batch, head) the HRR layer superposes the bound key/value pairs into
// a single vector beta, unbinds beta with every query, scores each position
// by the cosine between its value and the retrieved vector, softmaxes those
// scores over positions, and returns each original value scaled by its
// weight. Cost is linear in sequence length.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hrrformer/error.hpp"
#include "hrrformer/hrr.hpp"
#include "hrrformer/ops.hpp"
#include "hrrformer/rng.hpp"
#include "hrrformer/tensor.hpp"

namespace hrrformer::attention {

// Additive logit bias applied to masked positions.
inline constexpr double kMaskBias = -1e9;

template <class T>
struct AttentionParams {
  Tensor<T> query, key, value, output;  // each [H, H], no bias

  // Gaussian entries with variance 1/H.
  static AttentionParams init(std::size_t dim, Rng& rng) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    auto draw = [&] {
      Buffer<T> w(dim * dim);
      for (T& e : w) e = static_cast<T>(rng.normal() * stddev);
      return Tensor<T>::parameter(Tensor<T>(Shape{dim, dim}, std::move(w)));
    };
    AttentionParams p;
    p.query = draw();
    p.key = draw();
    p.value = draw();
    p.output = draw();
    return p;
  }

  std::size_t dim() const { return query.shape().at(0); }
};

template <class T>
struct AttentionOutput {
  Tensor<T> out;      // [B, T, H]
  Tensor<T> weights;  // [B, h, T, 1] for HRR; [B, h, T, T] for dot (may be empty)
};

template <class T>
struct HeadOutput {
  Tensor<T> values;
  Tensor<T> weights;
};

// [B, T, H] -> [B, h, T, H/h]
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3) throw DimensionError("split_heads expects [B,T,H], got " + to_string(x.shape()));
  const std::size_t b = x.shape()[0], t = x.shape()[1], h = x.shape()[2];
  if (heads == 0 || h % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide feature size " + std::to_string(h));
  }
  return transpose(reshape(x, Shape{b, t, heads, h / heads}), {0, 2, 1, 3});
}

// [B, h, T, H'] -> [B, T, h*H']
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("merge_heads expects [B,h,T,H'], got " + to_string(x.shape()));
  const std::size_t b = x.shape()[0], heads = x.shape()[1], t = x.shape()[2], d = x.shape()[3];
  return reshape(transpose(x, {0, 2, 1, 3}), Shape{b, t, heads * d});
}

namespace detail {

template <class T>
void check_mask(const Tensor<T>& mask, std::size_t batch, std::size_t len) {
  if (mask.shape() != Shape{batch, 1, len, 1}) {
    throw ContractError("mask must have shape " + to_string(Shape{batch, 1, len, 1}) + ", got " +
                        to_string(mask.shape()));
  }
  for (const T m : mask.data()) {
    if (m != T(0) && m != T(1)) throw ContractError("mask entries must be 0 or 1");
  }
}

// (1 - mask) * kMaskBias, shaped like the mask.
template <class T>
Tensor<T> mask_bias(const Tensor<T>& mask) {
  Buffer<T> bias(mask.size());
  for (std::size_t i = 0; i < bias.size(); ++i) {
    bias[i] = (T(1) - mask[i]) * static_cast<T>(kMaskBias);
  }
  return Tensor<T>(mask.shape(), std::move(bias));
}

template <class T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("q, k, v must share a [B,h,T,H'] shape: " + to_string(q.shape()) + ", " +
                         to_string(k.shape()) + ", " + to_string(v.shape()));
  }
}

}  // namespace detail

// q, k, v: [B, h, T, H']; mask: [B, 1, T, 1] with 1 = valid, or null.
// Masked pairs are also left out of the superposition so that padding has no
// influence on unmasked positions.
template <class T>
HeadOutput<T> hrr_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const Tensor<T>* mask = nullptr, hrr::InverseOptions inverse = {}) {
  detail::check_qkv(q, k, v);
  const std::size_t batch = q.shape()[0], heads = q.shape()[1], len = q.shape()[2];
  if (mask) detail::check_mask(*mask, batch, len);

  Tensor<T> bound = hrr::bind(k, v);  // [B,h,T,H']
  if (mask) bound = mul(bound, *mask);
  const Tensor<T> beta = reduce_sum(bound, 2, /*keepdim=*/true);  // [B,h,1,H']
  const Tensor<T> retrieved = hrr::unbind(beta, q, inverse);      // [B,h,T,H']
  Tensor<T> scores = reshape(hrr::cosine_similarity(v, retrieved), Shape{batch, heads, len, 1});
  if (mask) scores = add(scores, detail::mask_bias(*mask));
  Tensor<T> weights = softmax(scores, 2);
  Tensor<T> values = mul(weights, v);
  return {std::move(values), std::move(weights)};
}

// softmax(q k^T / sqrt(H') + bias) v, quadratic in T. The T x T weights are
// returned only when keep_weights is set; each (batch, head) slice is
// computed in one scratch buffer otherwise (unless a gradient is recorded).
template <class T>
HeadOutput<T> dot_attention_baseline(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>* mask = nullptr, bool keep_weights = true) {
  detail::check_qkv(q, k, v);
  const std::size_t batch = q.shape()[0], heads = q.shape()[1], len = q.shape()[2], d = q.shape()[3];
  if (mask) detail::check_mask(*mask, batch, len);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool recording = autograd::is_recording() &&
                         (q.requires_grad() || k.requires_grad() || v.requires_grad());
  const bool store_all = keep_weights || recording;
  const std::size_t slices = batch * heads;
  const std::size_t square = len * len;

  Buffer<T> out(q.size(), T(0));
  Buffer<T> all_weights(store_all ? slices * square : 0);
  Buffer<T> scratch(store_all ? 0 : square);
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  for (std::size_t s = 0; s < slices; ++s) {
    T* w = store_all ? all_weights.data() + s * square : scratch.data();
    const T* qs = pq + s * len * d;
    const T* ks = pk + s * len * d;
    const T* vs = pv + s * len * d;
    const T* ms = mask ? mask->data().data() + (s / heads) * len : nullptr;
    for (std::size_t i = 0; i < len; ++i) {
      T* row = w + i * len;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        T acc = 0;
        for (std::size_t e = 0; e < d; ++e) acc += qs[i * d + e] * ks[j * d + e];
        acc *= scale;
        if (ms) acc += (T(1) - ms[j]) * static_cast<T>(kMaskBias);
        row[j] = acc;
        mx = std::max(mx, acc);
      }
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
      }
      const T inv = T(1) / total;
      T* dst = out.data() + s * len * d + i * d;
      for (std::size_t j = 0; j < len; ++j) {
        row[j] *= inv;
        const T wj = row[j];
        for (std::size_t e = 0; e < d; ++e) dst[e] += wj * vs[j * d + e];
      }
    }
  }

  Tensor<T> weights = store_all ? Tensor<T>(Shape{batch, heads, len, len}, std::move(all_weights)) : Tensor<T>();
  Tensor<T> values = hrrformer::detail::make_result<T>(
      "dot_attention", q.shape(), std::move(out), {&q, &k, &v},
      [q = q.detach(), k = k.detach(), v = v.detach(), weights, slices, len, d, scale](
          const Buffer<T>& g, const std::vector<bool>& needs) {
        std::vector<Buffer<T>> grads(3);
        for (std::size_t i = 0; i < 3; ++i) grads[i].assign(q.size(), T(0));
        std::vector<T> dw(len);
        const T* pq = q.data().data();
        const T* pk = k.data().data();
        const T* pv = v.data().data();
        for (std::size_t s = 0; s < slices; ++s) {
          const T* w = weights.data().data() + s * len * len;
          const std::size_t base = s * len * d;
          for (std::size_t i = 0; i < len; ++i) {
            const T* gi = g.data() + base + i * d;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j) {
              T acc = 0;
              for (std::size_t e = 0; e < d; ++e) acc += gi[e] * pv[base + j * d + e];
              dw[j] = acc;
              dot += acc * w[i * len + j];
              if (needs[2]) {
                for (std::size_t e = 0; e < d; ++e) grads[2][base + j * d + e] += w[i * len + j] * gi[e];
              }
            }
            for (std::size_t j = 0; j < len; ++j) {
              const T ds = w[i * len + j] * (dw[j] - dot) * scale;
              for (std::size_t e = 0; e < d; ++e) {
                grads[0][base + i * d + e] += ds * pk[base + j * d + e];
                grads[1][base + j * d + e] += ds * pq[base + i * d + e];
              }
            }
          }
        }
        return grads;
      });
  return {std::move(values), std::move(weights)};
}

enum class Mechanism { kHrr, kDot };

// mask: [B, T] with 1 = valid, or null.
template <class T>
AttentionOutput<T> multihead_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                                       std::size_t heads, const Tensor<T>* mask, Mechanism mechanism,
                                       hrr::InverseOptions inverse = {}, bool keep_weights = true) {
  if (x.rank() != 3) throw DimensionError("attention input must be [B,T,H], got " + to_string(x.shape()));
  const std::size_t batch = x.shape()[0], len = x.shape()[1];
  if (x.shape()[2] != params.dim()) throw DimensionError("attention input width does not match parameters");
  Tensor<T> head_mask;
  if (mask) {
    if (mask->shape() != Shape{batch, len}) {
      throw ContractError("mask must have shape " + to_string(Shape{batch, len}) + ", got " +
                          to_string(mask->shape()));
    }
    head_mask = reshape(mask->detach(), Shape{batch, 1, len, 1});
  }
  const Tensor<T>* m = mask ? &head_mask : nullptr;

  const Tensor<T> q = split_heads(linear(x, params.query), heads);
  const Tensor<T> k = split_heads(linear(x, params.key), heads);
  const Tensor<T> v = split_heads(linear(x, params.value), heads);
  HeadOutput<T> heads_out = mechanism == Mechanism::kHrr
                                ? hrr_attention(q, k, v, m, inverse)
                                : dot_attention_baseline(q, k, v, m, keep_weights);
  Tensor<T> out = linear(merge_heads(heads_out.values), params.output);
  return {std::move(out), std::move(heads_out.weights)};
}

template <class T>
AttentionOutput<T> multihead_hrr_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                                           std::size_t heads, const Tensor<T>* mask = nullptr,
                                           hrr::InverseOptions inverse = {}) {
  return multihead_attention(x, params, heads, mask, Mechanism::kHrr, inverse);
}

}  // namespace hrrformer::attention
