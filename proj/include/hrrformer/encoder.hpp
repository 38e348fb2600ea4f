#pragma once

// Sequence classifier: token + positional embeddings, post-norm blocks of
// HRR attention and a ReLU MLP, masked mean pooling over positions, and a
// two-layer dense head.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hrrformer/attention.hpp"
#include "hrrformer/error.hpp"
#include "hrrformer/ops.hpp"
#include "hrrformer/rng.hpp"
#include "hrrformer/tensor.hpp"

namespace hrrformer {

enum class Positional { kLearned, kFixed };

inline const char* to_string(Positional p) { return p == Positional::kLearned ? "learned" : "fixed"; }

inline Positional parse_positional(const std::string& s) {
  if (s == "learned") return Positional::kLearned;
  if (s == "fixed") return Positional::kFixed;
  throw ConfigError("positional must be 'learned' or 'fixed', got '" + s + "'");
}

struct EncoderConfig {
  std::size_t vocab_size = 257;
  std::size_t max_len = 64;
  std::size_t embed_dim = 64;
  std::size_t mlp_dim = 128;
  std::size_t heads = 4;
  std::size_t layers = 1;
  std::size_t classes = 2;
  Positional positional = Positional::kLearned;
  double dropout_rate = 0.1;
  attention::Mechanism mechanism = attention::Mechanism::kHrr;

  void validate() const {
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (max_len == 0) throw ConfigError("max_len must be positive");
    if (mlp_dim == 0) throw ConfigError("mlp_dim must be positive");
    if (layers == 0) throw ConfigError("layers must be positive");
    if (classes < 2) throw ConfigError("classes must be at least 2");
    if (heads == 0 || embed_dim % heads != 0) {
      throw ConfigError("heads (" + std::to_string(heads) + ") must divide embed_dim (" +
                        std::to_string(embed_dim) + ")");
    }
    const std::size_t head_dim = embed_dim / heads;
    if (head_dim < 2 || !is_power_of_two(head_dim)) {
      throw ConfigError("embed_dim / heads must be a power of two >= 2, got " + std::to_string(head_dim));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
  }
};

// Rows are positions; columns alternate sin, cos with wavelength
// 10000^(2i/H) for the pair index i.
template <class T>
Tensor<T> fixed_positional_encoding(std::size_t len, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("fixed positional encoding needs an even width, got " + std::to_string(dim));
  Buffer<T> v(len * dim);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * i / static_cast<double>(dim));
      v[t * dim + 2 * i] = static_cast<T>(std::sin(angle));
      v[t * dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>(Shape{len, dim}, std::move(v));
}

template <class T>
struct BlockParams {
  attention::AttentionParams<T> attn;
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor<T> ln2_gain, ln2_bias;
};

template <class T>
struct ModelParams {
  Tensor<T> embedding;   // [vocab, H]
  Tensor<T> positional;  // [T, H] when learned, empty otherwise
  std::vector<BlockParams<T>> blocks;
  Tensor<T> head_w1, head_b1, head_w2, head_b2;

  // Gaussian weights with variance 1/fan_in (embedding rows count as a
  // dense layer over a one-hot input, so fan_in is 1); zero biases; unit
  // layer-norm gains.
  static ModelParams init(const EncoderConfig& c, Rng& rng) {
    c.validate();
    auto gaussian = [&](Shape shape, std::size_t fan_in) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Buffer<T> w(numel(shape));
      for (T& e : w) e = static_cast<T>(rng.normal() * sd);
      return Tensor<T>::parameter(Tensor<T>(std::move(shape), std::move(w)));
    };
    auto constant = [](std::size_t n, T value) { return Tensor<T>::parameter(Tensor<T>::full({n}, value)); };
    const std::size_t h = c.embed_dim;

    ModelParams p;
    p.embedding = gaussian({c.vocab_size, h}, 1);
    if (c.positional == Positional::kLearned) p.positional = gaussian({c.max_len, h}, 1);
    for (std::size_t l = 0; l < c.layers; ++l) {
      BlockParams<T> b;
      b.attn = attention::AttentionParams<T>::init(h, rng);
      b.ln1_gain = constant(h, T(1));
      b.ln1_bias = constant(h, T(0));
      b.mlp_w1 = gaussian({h, c.mlp_dim}, h);
      b.mlp_b1 = constant(c.mlp_dim, T(0));
      b.mlp_w2 = gaussian({c.mlp_dim, h}, c.mlp_dim);
      b.mlp_b2 = constant(h, T(0));
      b.ln2_gain = constant(h, T(1));
      b.ln2_bias = constant(h, T(0));
      p.blocks.push_back(std::move(b));
    }
    p.head_w1 = gaussian({h, c.mlp_dim}, h);
    p.head_b1 = constant(c.mlp_dim, T(0));
    p.head_w2 = gaussian({c.mlp_dim, c.classes}, c.mlp_dim);
    p.head_b2 = constant(c.classes, T(0));
    return p;
  }

  // Stable (name, tensor) listing used by checkpoints and the optimizer.
  std::vector<std::pair<std::string, Tensor<T>*>> named() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("embedding", &embedding);
    if (positional.size() > 0) out.emplace_back("positional", &positional);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      BlockParams<T>& b = blocks[l];
      out.emplace_back(pre + "attn.query", &b.attn.query);
      out.emplace_back(pre + "attn.key", &b.attn.key);
      out.emplace_back(pre + "attn.value", &b.attn.value);
      out.emplace_back(pre + "attn.output", &b.attn.output);
      out.emplace_back(pre + "ln1.gain", &b.ln1_gain);
      out.emplace_back(pre + "ln1.bias", &b.ln1_bias);
      out.emplace_back(pre + "mlp.w1", &b.mlp_w1);
      out.emplace_back(pre + "mlp.b1", &b.mlp_b1);
      out.emplace_back(pre + "mlp.w2", &b.mlp_w2);
      out.emplace_back(pre + "mlp.b2", &b.mlp_b2);
      out.emplace_back(pre + "ln2.gain", &b.ln2_gain);
      out.emplace_back(pre + "ln2.bias", &b.ln2_bias);
    }
    out.emplace_back("head.w1", &head_w1);
    out.emplace_back("head.b1", &head_b1);
    out.emplace_back("head.w2", &head_w2);
    out.emplace_back("head.b2", &head_b2);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor<T>*>> named() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->size();
    return n;
  }
};

// Token ids in row-major [batch, len] plus a binary mask of the same shape
// (1 = real token). A null mask means every position is valid.
struct TokenBatchView {
  std::span<const int> tokens;
  std::span<const int> mask;  // may be empty
  std::size_t batch = 0;
  std::size_t len = 0;
};

struct ForwardOptions {
  bool train_mode = false;
  Rng* dropout_rng = nullptr;  // required when train_mode and dropout_rate > 0
  std::optional<hrr::InverseMode> inverse;  // defaults to clamp in train mode, strict otherwise
  bool keep_weights = false;
};

template <class T>
struct ForwardResult {
  Tensor<T> logits;                      // [B, C]
  std::vector<Tensor<T>> layer_weights;  // per layer; [B, h, T, 1] for HRR
};

template <class T>
ForwardResult<T> encoder_forward(const TokenBatchView& in, const ModelParams<T>& p, const EncoderConfig& c,
                                 const ForwardOptions& opt = {}) {
  const std::size_t b = in.batch, len = in.len, h = c.embed_dim;
  if (in.tokens.size() != b * len) throw DimensionError("token buffer does not match [batch, len]");
  if (!in.mask.empty() && in.mask.size() != b * len) throw DimensionError("mask does not match [batch, len]");
  if (len == 0 || len > c.max_len) {
    throw DimensionError("sequence length " + std::to_string(len) + " outside [1, " + std::to_string(c.max_len) + "]");
  }
  const bool drop = opt.train_mode && c.dropout_rate > 0.0;
  if (drop && !opt.dropout_rng) throw ContractError("train_mode with dropout needs a dropout generator");
  hrr::InverseOptions inverse;
  inverse.mode = opt.inverse.value_or(opt.train_mode ? hrr::InverseMode::kClamp : hrr::InverseMode::kStrict);

  Buffer<T> mask_values(b * len, T(1));
  if (!in.mask.empty()) {
    for (std::size_t i = 0; i < mask_values.size(); ++i) {
      if (in.mask[i] != 0 && in.mask[i] != 1) throw ContractError("mask entries must be 0 or 1");
      mask_values[i] = static_cast<T>(in.mask[i]);
    }
  }
  const Tensor<T> mask(Shape{b, len}, std::move(mask_values));

  Tensor<T> x = embedding_lookup(p.embedding, in.tokens, Shape{b, len});
  if (c.positional == Positional::kLearned) {
    std::vector<int> positions(len);
    for (std::size_t t = 0; t < len; ++t) positions[t] = static_cast<int>(t);
    x = add(x, embedding_lookup(p.positional, std::span<const int>(positions), Shape{len}));
  } else {
    x = add(x, fixed_positional_encoding<T>(len, h));
  }

  ForwardResult<T> result;
  for (const BlockParams<T>& blk : p.blocks) {
    auto att = attention::multihead_attention(x, blk.attn, c.heads, &mask, c.mechanism, inverse, opt.keep_weights);
    Tensor<T> a = drop ? dropout(att.out, c.dropout_rate, *opt.dropout_rng) : att.out;
    x = layer_norm(add(x, a), blk.ln1_gain, blk.ln1_bias);
    Tensor<T> hidden = relu(add(linear(x, blk.mlp_w1), blk.mlp_b1));
    if (drop) hidden = dropout(hidden, c.dropout_rate, *opt.dropout_rng);
    x = layer_norm(add(x, add(linear(hidden, blk.mlp_w2), blk.mlp_b2)), blk.ln2_gain, blk.ln2_bias);
    if (opt.keep_weights) result.layer_weights.push_back(att.weights.detach());
  }

  // Masked mean over positions.
  Buffer<T> inv_count(b);
  for (std::size_t i = 0; i < b; ++i) {
    T n = 0;
    for (std::size_t t = 0; t < len; ++t) n += mask[i * len + t];
    inv_count[i] = n > T(0) ? T(1) / n : T(0);
  }
  const Tensor<T> pooled =
      mul(reduce_sum(mul(x, reshape(mask, Shape{b, len, 1})), 1), Tensor<T>(Shape{b, 1}, std::move(inv_count)));

  const Tensor<T> hidden = relu(add(linear(pooled, p.head_w1), p.head_b1));
  result.logits = add(linear(hidden, p.head_w2), p.head_b2);
  return result;
}

}  // namespace hrrformer
