#pragma once

// Adam with bias correction, the exponential learning-rate schedule, and a
// single supervised training step for the encoder.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hrrformer/encoder.hpp"
#include "hrrformer/error.hpp"
#include "hrrformer/ops.hpp"
#include "hrrformer/tasks.hpp"
#include "hrrformer/tensor.hpp"

namespace hrrformer {

// lr(e) = max(lr_final, lr_init * decay^e)
inline double exponential_lr(std::size_t epoch, double lr_init = 1e-3, double lr_final = 1e-5, double decay = 0.95) {
  return std::max(lr_final, lr_init * std::pow(decay, static_cast<double>(epoch)));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(const ModelParams<T>& params, AdamConfig config = {}) : config_(config) {
    for (const auto& [name, t] : params.named()) {
      first_.emplace_back(t->size(), 0.0);
      second_.emplace_back(t->size(), 0.0);
    }
  }

  std::size_t steps() const noexcept { return steps_; }

  // Applies one update in place; parameters that the loss did not reach get
  // a zero gradient.
  void step(ModelParams<T>& params, const Gradients<T>& grads, double lr) {
    auto named = params.named();
    if (named.size() != first_.size()) throw ContractError("optimizer state does not match parameter list");
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < named.size(); ++i) {
      Tensor<T>& p = *named[i].second;
      const Tensor<T> g = grads[p];
      Buffer<T> next(p.data().begin(), p.data().end());
      std::vector<double>& m = first_[i];
      std::vector<double>& v = second_[i];
      for (std::size_t e = 0; e < next.size(); ++e) {
        const double ge = static_cast<double>(g[e]);
        m[e] = config_.beta1 * m[e] + (1 - config_.beta1) * ge;
        v[e] = config_.beta2 * v[e] + (1 - config_.beta2) * ge * ge;
        const double update = lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + config_.epsilon);
        next[e] = static_cast<T>(static_cast<double>(next[e]) - update);
      }
      p = Tensor<T>::parameter(Tensor<T>(p.shape(), std::move(next)));
    }
  }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> first_, second_;
  std::size_t steps_ = 0;
};

struct StepResult {
  double loss = 0;
  std::size_t correct = 0;
};

inline std::size_t count_correct(std::span<const double> logits, std::span<const int> labels, std::size_t classes) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.subspan(i * classes, classes);
    correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i];
  }
  return correct;
}

template <class T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  const std::vector<T> v = logits.to_vector();
  const std::vector<double> d(v.begin(), v.end());
  return count_correct(std::span<const double>(d), labels, logits.shape().at(1));
}

// Forward, cross-entropy, backward and one Adam update. Non-finite values
// anywhere in the step surface as DivergenceError carrying step_index.
template <class T>
StepResult train_step(ModelParams<T>& params, const tasks::TaskBatch& batch, const EncoderConfig& config,
                      Adam<T>& optimizer, double lr, Rng& dropout_rng, std::size_t step_index) {
  try {
    ForwardOptions opt;
    opt.train_mode = true;
    opt.dropout_rng = &dropout_rng;
    const TokenBatchView view{batch.tokens, batch.mask, batch.batch, batch.len};
    const Tensor<T> logits = encoder_forward(view, params, config, opt).logits;
    const Tensor<T> loss = cross_entropy_with_logits(logits, std::span<const int>(batch.labels));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw DivergenceError(step_index, "loss is not finite");
    const Gradients<T> grads = grad(loss);
    optimizer.step(params, grads, lr);
    for (const auto& [name, t] : params.named()) {
      for (const T e : t->data()) {
        if (!std::isfinite(e)) throw DivergenceError(step_index, "parameter " + name + " is not finite");
      }
    }
    return {value, count_correct(logits, batch.labels)};
  } catch (const NonFiniteError& e) {
    throw DivergenceError(step_index, e.what());
  }
}

// Accuracy and mean loss without recording a graph.
template <class T>
StepResult evaluate(const ModelParams<T>& params, const tasks::Dataset& data, const EncoderConfig& config,
                    std::size_t batch_size, std::optional<hrr::InverseMode> inverse = std::nullopt) {
  autograd::NoGradGuard no_grad;
  StepResult total;
  auto it = tasks::batch_iter(data, batch_size, 0, 0, /*shuffle=*/false);
  while (auto b = it.next()) {
    ForwardOptions opt;
    opt.inverse = inverse;
    const TokenBatchView view{b->tokens, b->mask, b->batch, b->len};
    const Tensor<T> logits = encoder_forward(view, params, config, opt).logits;
    total.loss += static_cast<double>(cross_entropy_with_logits(logits, std::span<const int>(b->labels)).item()) *
                  static_cast<double>(b->batch);
    total.correct += count_correct(logits, b->labels);
  }
  if (data.size() > 0) total.loss /= static_cast<double>(data.size());
  return total;
}

}  // namespace hrrformer
