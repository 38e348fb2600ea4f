#pragma once

// Sequence-length scaling sweep for one attention layer: median wall time,
// peak live tensor bytes and FFT-call counts per length, plus a log-log
// slope fit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "hrrformer/attention.hpp"
#include "hrrformer/error.hpp"
#include "hrrformer/fft.hpp"
#include "hrrformer/memory.hpp"

namespace hrrformer::bench {

inline constexpr const char* kCsvHeader = "model,T,H,heads,batch,status,wall_seconds,peak_bytes,fft_calls";

struct BenchRecord {
  std::string model;  // hrr | dot
  std::size_t T = 0;
  std::size_t H = 0;
  std::size_t heads = 0;
  std::size_t batch = 0;
  std::string status = "ok";  // ok | OOM | OOT
  double wall_seconds = 0;
  std::size_t peak_bytes = 0;
  std::uint64_t fft_calls = 0;
};

struct BenchOptions {
  std::string model = "hrr";
  std::size_t t_min = 512;
  std::size_t t_max = 8192;
  std::size_t H = 64;
  std::size_t heads = 8;
  std::size_t reps = 5;
  std::size_t batch = 1;
  bool backward = false;
  // Batch of max(2^(16 - log2 T), 1), shrinking as T grows.
  bool halve_batch = false;
  std::size_t max_bytes = 0;   // 0 = unlimited; exceeding it records OOM
  double time_limit = 0;       // seconds per rep; 0 = unlimited; exceeding it records OOT
  std::uint64_t seed = 0;
};

inline std::size_t preset_batch(std::size_t len) {
  std::size_t log2t = 0;
  while ((std::size_t{1} << (log2t + 1)) <= len) ++log2t;
  return log2t >= 16 ? 1 : std::size_t{1} << (16 - log2t);
}

inline std::string format_csv_row(const BenchRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%zu,%s,%.6f,%zu,%llu", r.model.c_str(), r.T, r.H, r.heads, r.batch,
                r.status.c_str(), r.wall_seconds, r.peak_bytes, static_cast<unsigned long long>(r.fft_calls));
  return buf;
}

namespace detail {

template <class T>
void run_layer(const Tensor<T>& x, const attention::AttentionParams<T>& p, std::size_t heads,
               attention::Mechanism mechanism, bool backward) {
  if (backward) {
    const auto out = attention::multihead_attention(x, p, heads, static_cast<const Tensor<T>*>(nullptr), mechanism, {}, /*keep_weights=*/false);
    (void)grad(sum_all(out.out));
  } else {
    autograd::NoGradGuard no_grad;
    (void)attention::multihead_attention(x, p, heads, static_cast<const Tensor<T>*>(nullptr), mechanism, {}, /*keep_weights=*/false);
  }
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// One record per power-of-two T in [t_min, t_max]. Records stream to
// `sink` as they finish when given.
template <class T>
std::vector<BenchRecord> run_sweep(const BenchOptions& opt, std::ostream* sink = nullptr) {
  if (opt.model != "hrr" && opt.model != "dot") throw ConfigError("model must be hrr or dot, got '" + opt.model + "'");
  if (!is_power_of_two(opt.t_min) || !is_power_of_two(opt.t_max) || opt.t_min > opt.t_max) {
    throw ConfigError("t-min and t-max must be powers of two with t-min <= t-max");
  }
  if (opt.reps < 1) throw ConfigError("reps must be at least 1");
  if (opt.heads == 0 || opt.H % opt.heads != 0 || !is_power_of_two(opt.H / opt.heads) || opt.H / opt.heads < 2) {
    throw ConfigError("H / heads must be a power of two >= 2");
  }
  const auto mechanism = opt.model == "hrr" ? attention::Mechanism::kHrr : attention::Mechanism::kDot;
  auto& tracker = MemoryTracker::instance();
  std::vector<BenchRecord> records;
  bool timed_out = false;

  for (std::size_t len = opt.t_min; len <= opt.t_max; len *= 2) {
    BenchRecord rec;
    rec.model = opt.model;
    rec.T = len;
    rec.H = opt.H;
    rec.heads = opt.heads;
    rec.batch = opt.halve_batch ? preset_batch(len) : opt.batch;
    if (timed_out) {
      rec.status = "OOT";
    } else {
      MemoryLimitGuard limit(opt.max_bytes);
      const auto started = std::chrono::steady_clock::now();
      try {
        Rng rng(opt.seed, len);
        const auto params = attention::AttentionParams<T>::init(opt.H, rng);
        Buffer<T> xv(rec.batch * len * opt.H);
        for (T& e : xv) e = static_cast<T>(rng.normal());
        const Tensor<T> x(Shape{rec.batch, len, opt.H}, std::move(xv));

        detail::run_layer(x, params, opt.heads, mechanism, opt.backward);  // warmup
        std::vector<double> times;
        std::size_t peak = 0;
        for (std::size_t r = 0; r < opt.reps; ++r) {
          tracker.reset_peak();
          fft::reset_call_count();
          const auto t0 = std::chrono::steady_clock::now();
          detail::run_layer(x, params, opt.heads, mechanism, opt.backward);
          const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          times.push_back(dt);
          peak = std::max(peak, tracker.peak_bytes());
          rec.fft_calls = fft::call_count();
          if (opt.time_limit > 0 && dt > opt.time_limit) {
            rec.status = "OOT";
            timed_out = true;
            break;
          }
        }
        rec.wall_seconds = detail::median(times);
        rec.peak_bytes = peak;
      } catch (const std::bad_alloc&) {
        rec.status = "OOM";
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        rec.peak_bytes = tracker.peak_bytes();
        rec.fft_calls = 0;
      }
    }
    records.push_back(rec);
    if (sink) {
      *sink << format_csv_row(rec) << '\n';
      sink->flush();
    }
  }
  return records;
}

inline void write_csv(const std::vector<BenchRecord>& records, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& r : records) out << format_csv_row(r) << '\n';
}

inline std::vector<BenchRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IngestionError("bench CSV header does not match");
  std::vector<BenchRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw IngestionError("bench CSV line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
    try {
      BenchRecord r;
      r.model = f[0];
      r.T = std::stoull(f[1]);
      r.H = std::stoull(f[2]);
      r.heads = std::stoull(f[3]);
      r.batch = std::stoull(f[4]);
      r.status = f[5];
      r.wall_seconds = std::stod(f[6]);
      r.peak_bytes = std::stoull(f[7]);
      r.fft_calls = std::stoull(f[8]);
      out.push_back(r);
    } catch (const std::exception&) {
      throw IngestionError("bench CSV line " + std::to_string(line_no) + " is malformed");
    }
  }
  return out;
}

// Least-squares slope of ln(y) against ln(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("slope fit needs at least two points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw ContractError("slope fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw ContractError("slope fit needs distinct x values");
  return sxy / sxx;
}

// Time-vs-T slope over the successful rows of one model.
inline double fit_loglog_slope(const std::vector<BenchRecord>& records, const std::string& model) {
  std::vector<double> x, y;
  for (const auto& r : records) {
    if (r.model == model && r.status == "ok") {
      x.push_back(static_cast<double>(r.T));
      y.push_back(r.wall_seconds);
    }
  }
  return loglog_slope(x, y);
}

}  // namespace hrrformer::bench
