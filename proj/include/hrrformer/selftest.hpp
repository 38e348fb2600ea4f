#pragma once

// Built-in algebra, gradient and invariance checks run by `hrrformer
// selftest`. Always double precision.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "hrrformer/attention.hpp"
#include "hrrformer/encoder.hpp"
#include "hrrformer/hrr.hpp"
#include "hrrformer/ops.hpp"

namespace hrrformer::selftest {

using Td = Tensor<double>;

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0;
  double threshold = 0;
  std::string note;
};

namespace detail {

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double s = std::sqrt(std::max(na, nb));
  return s < 1e-300 ? std::sqrt(d) : std::sqrt(d) / s;
}

inline Td gaussian(Shape shape, Rng& rng, double sd) {
  Buffer<double> v(numel(shape));
  for (double& e : v) e = rng.normal() * sd;
  return Td(std::move(shape), std::move(v));
}

using Fn = std::function<Td(const std::vector<Td>&)>;

// Worst per-input relative error between reverse-mode and central
// finite-difference gradients.
inline double fd_check(const Fn& fn, const std::vector<Td>& inputs, double step = 1e-6) {
  std::vector<Td> params;
  for (const auto& t : inputs) params.push_back(Td::parameter(t));
  const Gradients<double> g = grad(fn(params));
  double worst = 0;
  autograd::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = g[params[i]].to_vector();
    std::vector<double> numeric(inputs[i].size());
    std::vector<double> base = inputs[i].to_vector();
    for (std::size_t e = 0; e < base.size(); ++e) {
      auto probe = [&](double delta) {
        std::vector<Td> shifted = inputs;
        std::vector<double> v = base;
        v[e] += delta;
        shifted[i] = Td(inputs[i].shape(), std::span<const double>(v));
        return fn(shifted).item();
      };
      numeric[e] = (probe(step) - probe(-step)) / (2 * step);
    }
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

inline Td probe_weights(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Buffer<double> v(numel(shape));
  for (double& e : v) e = rng.uniform() * 2 - 1;
  return Td(std::move(shape), std::move(v));
}

}  // namespace detail

inline std::vector<CheckResult> run_all() {
  using namespace detail;
  std::vector<CheckResult> out;
  auto below = [&](std::string suite, std::string name, double measured, double threshold) {
    out.push_back({std::move(suite), std::move(name), measured < threshold, measured, threshold, ""});
  };
  auto guarded = [&](const std::string& suite, const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      out.push_back({suite, name, false, 0, 0, e.what()});
    }
  };

  guarded("algebra", "bind [1,2]*[3,4] = [11,10]", [&] {
    const auto b = hrr::bind(Td(Shape{2}, {1, 2}), Td(Shape{2}, {3, 4})).to_vector();
    below("algebra", "bind [1,2]*[3,4] = [11,10]", std::abs(b[0] - 11) + std::abs(b[1] - 10), 1e-12);
  });
  guarded("algebra", "inverse of e1 is e3 (H=4)", [&] {
    below("algebra", "inverse of e1 is e3 (H=4)",
          rel_err(hrr::exact_inverse(hrr::delta<double>(4, 1)).to_vector(), hrr::delta<double>(4, 3).to_vector()), 1e-12);
  });
  guarded("algebra", "unbind(bind(k,v),k) = v (H=256)", [&] {
    Rng rng(11);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const auto k = hrr::sample_symbol<double>(256, rng), v = hrr::sample_symbol<double>(256, rng);
      worst = std::max(worst, rel_err(hrr::unbind(hrr::bind(k, v), k).vec().to_vector(), v.vec().to_vector()));
    }
    below("algebra", "unbind(bind(k,v),k) = v (H=256)", worst, 1e-8);
  });
  guarded("algebra", "associativity", [&] {
    Rng rng(12);
    double worst = 0;
    for (int i = 0; i < 50; ++i) {
      const Td a = gaussian({128}, rng, 0.09), b = gaussian({128}, rng, 0.09), c = gaussian({128}, rng, 0.09);
      worst = std::max(worst, rel_err(hrr::bind(hrr::bind(a, b), c).to_vector(), hrr::bind(a, hrr::bind(b, c)).to_vector()));
    }
    below("algebra", "associativity", worst, 1e-9);
  });
  guarded("algebra", "unbind distributes over superposition", [&] {
    Rng rng(13);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const Td k = gaussian({6, 64}, rng, 0.125), v = gaussian({6, 64}, rng, 0.125), q = gaussian({64}, rng, 0.125);
      const Td bound = hrr::bind(k, v);
      worst = std::max(worst, rel_err(hrr::unbind(reduce_sum(bound, 0), q).to_vector(),
                                      reduce_sum(hrr::unbind(bound, q), 0).to_vector()));
    }
    below("algebra", "unbind distributes over superposition", worst, 1e-10);
  });

  guarded("gradient", "circular convolution", [&] {
    Rng rng(21);
    const Td probe = probe_weights({3, 8}, 1);
    below("gradient", "circular convolution",
          fd_check([&](const std::vector<Td>& in) { return sum_all(mul(hrr::bind(in[0], in[1]), probe)); },
                   {gaussian({3, 8}, rng, 0.5), gaussian({3, 8}, rng, 0.5)}),
          1e-5);
  });
  guarded("gradient", "exact inverse", [&] {
    Rng rng(22);
    const Td probe = probe_weights({2, 8}, 2);
    below("gradient", "exact inverse",
          fd_check([&](const std::vector<Td>& in) { return sum_all(mul(hrr::exact_inverse(in[0]), probe)); },
                   {gaussian({2, 8}, rng, 0.35)}),
          1e-5);
  });
  guarded("gradient", "cosine(unbind(superposition, q), v)", [&] {
    Rng rng(23);
    std::vector<Td> in;
    for (int i = 0; i < 6; ++i) in.push_back(gaussian({8}, rng, 0.35));
    below("gradient", "cosine(unbind(superposition, q), v)",
          fd_check([](const std::vector<Td>& x) {
                     const Td beta = add(hrr::bind(x[0], x[1]), hrr::bind(x[2], x[3]));
                     return hrr::cosine_similarity(hrr::unbind(beta, x[4]), x[5]);
                   },
                   in),
          1e-5);
  });
  guarded("gradient", "multihead HRR attention projections", [&] {
    Rng rng(24);
    const Td x = gaussian({2, 4, 8}, rng, 1.0);
    const Td probe = probe_weights({2, 4, 8}, 3);
    const auto p = attention::AttentionParams<double>::init(8, rng);
    below("gradient", "multihead HRR attention projections",
          fd_check([&](const std::vector<Td>& in) {
                     const attention::AttentionParams<double> q{in[0], in[1], in[2], in[3]};
                     return sum_all(mul(attention::multihead_hrr_attention(x, q, 2).out, probe));
                   },
                   {p.query.detach(), p.key.detach(), p.value.detach(), p.output.detach()}),
          1e-4);
  });

  guarded("invariance", "softmax constant shift", [&] {
    Rng rng(31);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const Td logits = gaussian({1, 1, 16, 1}, rng, 1.0);
      const double c = (rng.uniform() - 0.5) * 100;
      const auto a = softmax(logits, 2).to_vector(), b = softmax(shift(logits, c), 2).to_vector();
      for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
    }
    below("invariance", "softmax constant shift", worst, 1e-12);
  });
  guarded("invariance", "permutation equivariance", [&] {
    Rng rng(32);
    const auto p = attention::AttentionParams<double>::init(16, rng);
    const Td x = gaussian({1, 8, 16}, rng, 1.0);
    const auto perm = random_permutation(8, rng);
    std::vector<double> xv = x.to_vector(), px(xv.size());
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t e = 0; e < 16; ++e) px[t * 16 + e] = xv[perm[t] * 16 + e];
    const auto base = attention::multihead_hrr_attention(x, p, 4).out.to_vector();
    const auto moved = attention::multihead_hrr_attention(Td(x.shape(), std::span<const double>(px)), p, 4).out.to_vector();
    double worst = 0;
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t e = 0; e < 16; ++e) worst = std::max(worst, std::abs(moved[t * 16 + e] - base[perm[t] * 16 + e]));
    below("invariance", "permutation equivariance", worst, 1e-9);
  });
  guarded("invariance", "padding leaves logits unchanged", [&] {
    EncoderConfig c;
    c.vocab_size = 12;
    c.max_len = 16;
    c.embed_dim = 16;
    c.mlp_dim = 16;
    c.heads = 2;
    c.classes = 3;
    Rng rng(33);
    const auto p = ModelParams<double>::init(c, rng);
    const std::vector<int> short_tokens{3, 1, 4, 1, 5, 9, 2, 6}, short_mask(8, 1);
    std::vector<int> long_tokens = short_tokens, long_mask = short_mask;
    long_tokens.resize(16, 0);
    long_mask.resize(16, 0);
    const auto a = encoder_forward<double>({short_tokens, short_mask, 1, 8}, p, c).logits.to_vector();
    const auto b = encoder_forward<double>({long_tokens, long_mask, 1, 16}, p, c).logits.to_vector();
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    below("invariance", "padding leaves logits unchanged", worst, 1e-5);
  });
  return out;
}

// Prints one row per check; returns the number of failures.
inline int print_table(const std::vector<CheckResult>& results, std::ostream& os) {
  int failures = 0;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-11s %-42s %-6s %12s %10s\n", "suite", "check", "result", "measured", "limit");
  os << buf;
  for (const auto& r : results) {
    failures += !r.passed;
    std::snprintf(buf, sizeof buf, "%-11s %-42s %-6s %12.3e %10.1e", r.suite.c_str(), r.name.c_str(),
                  r.passed ? "PASS" : "FAIL", r.measured, r.threshold);
    os << buf;
    if (!r.note.empty()) os << "  (" << r.note << ")";
    os << '\n';
  }
  os << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << '\n';
  return failures;
}

}  // namespace hrrformer::selftest
