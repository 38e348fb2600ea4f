#pragma once

// Holographic Reduced Representations: symbols are H-dimensional real
// vectors, binding is circular convolution, unbinding binds with the exact
// (spectral reciprocal) inverse, and similarity is the cosine.

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "hrrformer/error.hpp"
#include "hrrformer/fft.hpp"
#include "hrrformer/ops.hpp"
#include "hrrformer/rng.hpp"
#include "hrrformer/tensor.hpp"

namespace hrrformer::hrr {

// Smallest spectral magnitude exact_inverse accepts.
inline constexpr double kInverseEpsilon = 1e-8;

// Strict raises SingularInverseError on a small bin; Clamp lifts the bin to
// epsilon with its phase kept (used while training).
enum class InverseMode { kStrict, kClamp };

struct InverseOptions {
  InverseMode mode = InverseMode::kStrict;
  double epsilon = kInverseEpsilon;
};

template <class T>
class HrrSymbol {
 public:
  explicit HrrSymbol(Tensor<T> vec) : vec_(std::move(vec)) {
    if (vec_.rank() != 1) throw DimensionError("HRR symbol must be a vector, got " + to_string(vec_.shape()));
    if (vec_.size() < 2 || !is_power_of_two(vec_.size())) {
      throw ConfigError("HRR dimension must be a power of two >= 2, got " + std::to_string(vec_.size()));
    }
  }

  const Tensor<T>& vec() const noexcept { return vec_; }
  std::size_t dim() const noexcept { return vec_.size(); }

 private:
  Tensor<T> vec_;
};

template <class T>
struct Superposition {
  Tensor<T> vec;
  std::size_t count = 0;
};

// e_k: the delta at index k. e_0 is the binding identity; binding with e_k
// rotates by k.
template <class T>
Tensor<T> delta(std::size_t dim, std::size_t k = 0) {
  Buffer<T> v(dim, T(0));
  v.at(k) = T(1);
  return Tensor<T>(Shape{dim}, std::move(v));
}

// Elements i.i.d. N(0, 1/H), Box-Muller over the seeded generator.
template <class T>
HrrSymbol<T> sample_symbol(std::size_t dim, Rng& rng) {
  if (dim < 2 || !is_power_of_two(dim)) {
    throw ConfigError("HRR dimension must be a power of two >= 2, got " + std::to_string(dim));
  }
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  Buffer<T> v(dim);
  for (T& e : v) e = static_cast<T>(rng.normal() * stddev);
  return HrrSymbol<T>(Tensor<T>(Shape{dim}, std::move(v)));
}

// --- tensor-level operations (trailing axis is the HRR axis) ---------------

template <class T>
Tensor<T> bind(const Tensor<T>& x, const Tensor<T>& y) {
  return rfft_circular_conv(x, y);
}

// F^-1(1 / F(y)) row by row. Two FFTs per row forward, two per row backward.
template <class T>
Tensor<T> exact_inverse(const Tensor<T>& y, InverseOptions options = {}) {
  using Complex = std::complex<T>;
  if (y.rank() == 0) throw DimensionError("exact_inverse needs rank >= 1");
  const std::size_t width = y.shape().back();
  const auto& plan = fft::plan<T>(width);
  const std::size_t bins = plan.bins();
  const std::size_t rows = y.size() / width;
  const bool keep_spectra = autograd::is_recording() && y.requires_grad();

  Buffer<T> values(y.size());
  Buffer<Complex> reciprocal(keep_spectra ? rows * bins : 0);
  std::vector<Complex> spectrum(bins);
  const T* py = y.data().data();
  const T eps = static_cast<T>(options.epsilon);
  for (std::size_t r = 0; r < rows; ++r) {
    plan.forward({py + r * width, width}, spectrum);
    for (std::size_t k = 0; k < bins; ++k) {
      const T mag = std::abs(spectrum[k]);
      if (mag < eps) {
        if (options.mode == InverseMode::kStrict) throw SingularInverseError(k, mag, options.epsilon);
        spectrum[k] = mag > T(0) ? spectrum[k] * (eps / mag) : Complex(eps, 0);
      }
      spectrum[k] = fft::creciprocal(spectrum[k]);
      if (keep_spectra) reciprocal[r * bins + k] = spectrum[k];
    }
    plan.inverse(spectrum, {values.data() + r * width, width});
  }

  // d(y+)/dy is convolution with -F^-1(1/Y^2); its adjoint is correlation,
  // i.e. multiplication by -conj(1/Y^2) in the frequency domain.
  return hrrformer::detail::make_result<T>(
      "exact_inverse", y.shape(), std::move(values), {&y},
      [reciprocal = std::move(reciprocal), rows, width, bins](const Buffer<T>& g,
                                                              const std::vector<bool>&) {
        const auto& plan = fft::plan<T>(width);
        std::vector<Buffer<T>> grads(1);
        grads[0].resize(rows * width);
        std::vector<Complex> spectrum(bins);
        for (std::size_t r = 0; r < rows; ++r) {
          plan.forward({g.data() + r * width, width}, spectrum);
          for (std::size_t k = 0; k < bins; ++k) {
            const Complex inv = reciprocal[r * bins + k];
            spectrum[k] = -fft::cmul(spectrum[k], std::conj(fft::cmul(inv, inv)));
          }
          plan.inverse(spectrum, {grads[0].data() + r * width, width});
        }
        return grads;
      });
}

// q+ (*) beta. beta broadcasts against q over leading axes.
template <class T>
Tensor<T> unbind(const Tensor<T>& beta, const Tensor<T>& q, InverseOptions options = {}) {
  return bind(exact_inverse(q, options), beta);
}

// u.v / (|u||v|) over the trailing axis; 0 where either norm is below 1e-12.
// Leading axes broadcast. The trailing axis is dropped from the result.
template <class T>
Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v) {
  if (u.rank() == 0 || v.rank() == 0) throw DimensionError("cosine_similarity needs rank >= 1");
  const std::size_t width = u.shape().back();
  if (v.shape().back() != width) {
    throw DimensionError("cosine_similarity trailing extents differ: " + to_string(u.shape()) +
                         " vs " + to_string(v.shape()));
  }
  Shape lead_u(u.shape().begin(), u.shape().end() - 1);
  Shape lead_v(v.shape().begin(), v.shape().end() - 1);
  const Shape lead = hrrformer::detail::broadcast_shapes(lead_u, lead_v);
  const auto su = hrrformer::detail::broadcast_strides(lead_u, lead);
  const auto sv = hrrformer::detail::broadcast_strides(lead_v, lead);
  constexpr double kTiny = 1e-12;

  Buffer<T> values(numel(lead));
  const T* pu = u.data().data();
  const T* pv = v.data().data();
  hrrformer::detail::for_each_broadcast(lead, su, sv, [&](std::size_t o, std::size_t i, std::size_t j) {
    T dot = 0, nu = 0, nv = 0;
    for (std::size_t k = 0; k < width; ++k) {
      const T a = pu[i * width + k], b = pv[j * width + k];
      dot += a * b;
      nu += a * a;
      nv += b * b;
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    values[o] = (nu < kTiny || nv < kTiny) ? T(0) : dot / (nu * nv);
  });

  Tensor<T> sims(lead, values);
  return hrrformer::detail::make_result<T>(
      "cosine_similarity", lead, std::move(values), {&u, &v},
      [u = u.detach(), v = v.detach(), sims, lead, su, sv, width](const Buffer<T>& g,
                                                                   const std::vector<bool>& needs) {
        std::vector<Buffer<T>> grads(2);
        if (needs[0]) grads[0].assign(u.size(), T(0));
        if (needs[1]) grads[1].assign(v.size(), T(0));
        const T* pu = u.data().data();
        const T* pv = v.data().data();
        hrrformer::detail::for_each_broadcast(lead, su, sv, [&](std::size_t o, std::size_t i, std::size_t j) {
          const T* a = pu + i * width;
          const T* b = pv + j * width;
          T nu = 0, nv = 0;
          for (std::size_t k = 0; k < width; ++k) {
            nu += a[k] * a[k];
            nv += b[k] * b[k];
          }
          nu = std::sqrt(nu);
          nv = std::sqrt(nv);
          if (nu < kTiny || nv < kTiny) return;
          const T c = sims[o];
          const T inv = g[o] / (nu * nv);
          for (std::size_t k = 0; k < width; ++k) {
            if (needs[0]) grads[0][i * width + k] += inv * b[k] - g[o] * c * a[k] / (nu * nu);
            if (needs[1]) grads[1][j * width + k] += inv * a[k] - g[o] * c * b[k] / (nv * nv);
          }
        });
        return grads;
      });
}

// --- symbol-level API --------------------------------------------------------

namespace detail {
template <class T>
void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DimensionError("HRR dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}
}  // namespace detail

template <class T>
HrrSymbol<T> bind(const HrrSymbol<T>& x, const HrrSymbol<T>& y) {
  detail::require_same_dim<T>(x.dim(), y.dim());
  return HrrSymbol<T>(bind(x.vec(), y.vec()));
}

template <class T>
HrrSymbol<T> exact_inverse(const HrrSymbol<T>& y, InverseOptions options = {}) {
  return HrrSymbol<T>(exact_inverse(y.vec(), options));
}

template <class T>
HrrSymbol<T> unbind(const HrrSymbol<T>& beta, const HrrSymbol<T>& q, InverseOptions options = {}) {
  detail::require_same_dim<T>(beta.dim(), q.dim());
  return HrrSymbol<T>(unbind(beta.vec(), q.vec(), options));
}

template <class T>
HrrSymbol<T> unbind(const Superposition<T>& beta, const HrrSymbol<T>& q, InverseOptions options = {}) {
  detail::require_same_dim<T>(beta.vec.size(), q.dim());
  return HrrSymbol<T>(unbind(beta.vec, q.vec(), options));
}

// Sum of bind(key, value) over the pairs.
template <class T>
Superposition<T> superpose(std::span<const std::pair<HrrSymbol<T>, HrrSymbol<T>>> pairs) {
  if (pairs.empty()) throw ContractError("superpose needs at least one pair");
  const std::size_t dim = pairs.front().first.dim();
  Tensor<T> total;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    detail::require_same_dim<T>(pairs[i].first.dim(), dim);
    detail::require_same_dim<T>(pairs[i].second.dim(), dim);
    Tensor<T> bound = bind(pairs[i].first.vec(), pairs[i].second.vec());
    total = i == 0 ? bound : add(total, bound);
  }
  return Superposition<T>{total, pairs.size()};
}

template <class T>
Superposition<T> superpose(const std::vector<std::pair<HrrSymbol<T>, HrrSymbol<T>>>& pairs) {
  return superpose<T>(std::span<const std::pair<HrrSymbol<T>, HrrSymbol<T>>>(pairs));
}

template <class T>
T cosine_similarity(const HrrSymbol<T>& u, const HrrSymbol<T>& v) {
  return cosine_similarity(u.vec(), v.vec()).item();
}

}  // namespace hrrformer::hrr
