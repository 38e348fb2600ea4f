#pragma once

// Iterative radix-2 FFT for real signals. A length-n real transform is done
// as a length-n/2 complex transform on packed even/odd samples followed by a
// split step, so only the n/2+1 non-redundant bins are produced.

#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

#include "hrrformer/error.hpp"

namespace hrrformer {

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

namespace fft {

namespace detail {
inline std::atomic<std::uint64_t>& call_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
}  // namespace detail

// Number of real FFTs (forward or inverse) executed by this process.
inline std::uint64_t call_count() noexcept {
  return detail::call_counter().load(std::memory_order_relaxed);
}
inline void reset_call_count() noexcept { detail::call_counter().store(0, std::memory_order_relaxed); }

// Plain complex product; std::complex's operator* carries inf/nan recovery
// that dominates small transforms.
template <class T>
inline std::complex<T> cmul(std::complex<T> a, std::complex<T> b) noexcept {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

template <class T>
inline std::complex<T> creciprocal(std::complex<T> a) noexcept {
  const T n = a.real() * a.real() + a.imag() * a.imag();
  return {a.real() / n, -a.imag() / n};
}

template <class T>
class RealFft {
 public:
  using Complex = std::complex<T>;

  explicit RealFft(std::size_t n) : n_(n), half_(n / 2) {
    if (!is_power_of_two(n)) {
      throw ConfigError("FFT length must be a power of two, got " + std::to_string(n));
    }
    if (n_ < 2) return;
    const std::size_t m = half_;
    bitrev_.resize(m);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < m) ++bits;
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
    twiddle_.resize(m / 2 + 1);
    for (std::size_t k = 0; k < twiddle_.size(); ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(m);
      twiddle_[k] = Complex(static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle)));
    }
    split_.resize(m + 1);
    for (std::size_t k = 0; k <= m; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_);
      split_[k] = Complex(static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle)));
    }
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  // out must hold bins() values.
  void forward(std::span<const T> in, std::span<Complex> out) const {
    detail::call_counter().fetch_add(1, std::memory_order_relaxed);
    if (n_ == 1) {
      out[0] = Complex(in[0], 0);
      return;
    }
    const std::size_t m = half_;
    thread_local std::vector<Complex> z;
    z.resize(m);
    for (std::size_t j = 0; j < m; ++j) z[bitrev_[j]] = Complex(in[2 * j], in[2 * j + 1]);
    transform(z, false);
    const Complex minus_i(0, -1);
    for (std::size_t k = 0; k <= m; ++k) {
      const Complex zk = z[k == m ? 0 : k];
      const Complex zc = std::conj(z[(m - k) % m]);
      const Complex even = (zk + zc) * T(0.5);
      const Complex odd = cmul(zk - zc, minus_i) * T(0.5);
      out[k] = even + cmul(split_[k], odd);
    }
  }

  // Inverse of forward(); in holds bins() values of a Hermitian spectrum.
  void inverse(std::span<const Complex> in, std::span<T> out) const {
    detail::call_counter().fetch_add(1, std::memory_order_relaxed);
    if (n_ == 1) {
      out[0] = in[0].real();
      return;
    }
    const std::size_t m = half_;
    thread_local std::vector<Complex> z;
    z.resize(m);
    const Complex plus_i(0, 1);
    for (std::size_t k = 0; k < m; ++k) {
      const Complex xk = in[k];
      const Complex xc = std::conj(in[m - k]);
      const Complex even = (xk + xc) * T(0.5);
      const Complex odd = cmul(xk - xc, std::conj(split_[k])) * T(0.5);
      z[bitrev_[k]] = even + cmul(plus_i, odd);
    }
    transform(z, true);
    const T scale = T(1) / static_cast<T>(m);
    for (std::size_t j = 0; j < m; ++j) {
      out[2 * j] = z[j].real() * scale;
      out[2 * j + 1] = z[j].imag() * scale;
    }
  }

 private:
  // In-place complex FFT on bit-reversed input; unscaled in both directions.
  void transform(std::vector<Complex>& a, bool inverse) const {
    const std::size_t m = a.size();
    for (std::size_t len = 2; len <= m; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = m / len;
      for (std::size_t i = 0; i < m; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          Complex w = twiddle_at(j * step);
          if (inverse) w = std::conj(w);
          const Complex u = a[i + j];
          const Complex v = cmul(a[i + j + half], w);
          a[i + j] = u + v;
          a[i + j + half] = u - v;
        }
      }
    }
  }

  // exp(-2 pi i k / m) for k < m, using the quarter-table symmetry.
  Complex twiddle_at(std::size_t k) const {
    const std::size_t m = half_;
    if (k <= m / 2) return twiddle_[k];
    const Complex w = twiddle_[m - k];
    return std::conj(w);
  }

  std::size_t n_;
  std::size_t half_;
  std::vector<std::size_t> bitrev_;
  std::vector<Complex> twiddle_;
  std::vector<Complex> split_;
};

// Per-thread plan cache.
template <class T>
const RealFft<T>& plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<RealFft<T>>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<RealFft<T>>(n)).first;
  return *it->second;
}

enum class Pairing { kConvolve, kCorrelate };

// out = x (*) y (convolution) or out[k] = sum_n x[n] y[(n - k) mod H]
// (correlation). Three FFT calls. out may alias x or y.
template <class T>
void circular_pair(std::span<const T> x, std::span<const T> y, std::span<T> out, Pairing pairing) {
  const auto& p = plan<T>(x.size());
  thread_local std::vector<std::complex<T>> fx, fy;
  fx.resize(p.bins());
  fy.resize(p.bins());
  p.forward(x, fx);
  p.forward(y, fy);
  if (pairing == Pairing::kConvolve) {
    for (std::size_t k = 0; k < fx.size(); ++k) fx[k] = cmul(fx[k], fy[k]);
  } else {
    for (std::size_t k = 0; k < fx.size(); ++k) fx[k] = cmul(fx[k], std::conj(fy[k]));
  }
  p.inverse(fx, out);
}

}  // namespace fft
}  // namespace hrrformer
