#pragma once

// Per-(layer, head) attention weight export: one CSV per head, plus an 8-bit
// PGM image when the sequence length is a perfect square.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hrrformer/checkpoint.hpp"
#include "hrrformer/encoder.hpp"
#include "hrrformer/tasks.hpp"

namespace hrrformer::viz {

struct Sample {
  std::vector<int> tokens;  // padded to the model length
  std::vector<int> mask;
};

// A .jsonl file contributes its first row; anything else is read as raw
// bytes shifted by one (0 is the pad id).
inline Sample load_sample(const std::filesystem::path& path, std::size_t len) {
  Sample s;
  if (path.extension() == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open sample " + path.string());
    const tasks::Dataset d = tasks::read_jsonl(in, len, 0, 0);
    if (d.size() == 0) throw IngestionError("sample file " + path.string() + " has no rows");
    s.tokens.assign(d.row(0).begin(), d.row(0).end());
    s.mask.assign(d.row_mask(0).begin(), d.row_mask(0).end());
    return s;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open sample " + path.string());
  s.tokens.assign(len, tasks::kPad);
  s.mask.assign(len, 0);
  char c;
  for (std::size_t t = 0; t < len && in.get(c); ++t) {
    s.tokens[t] = static_cast<int>(static_cast<unsigned char>(c)) + 1;
    s.mask[t] = 1;
  }
  return s;
}

// Min-max scaled to 0..255; a constant vector maps to zeros.
inline std::vector<unsigned char> to_gray(const std::vector<double>& w) {
  const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  const double span = *hi - *lo;
  std::vector<unsigned char> out(w.size(), 0);
  if (span <= 0) return out;
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<unsigned char>(std::lround(255.0 * (w[i] - *lo) / span));
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const std::vector<unsigned char>& pixels, std::size_t side) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << side << ' ' << side << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw Error("failed to write " + path.string());
}

inline std::size_t exact_sqrt(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

// Returns the files written.
template <class T>
std::vector<std::filesystem::path> export_weights(const LoadedModel<T>& model, const Sample& sample,
                                                  const std::filesystem::path& out_dir) {
  const EncoderConfig& c = model.config;
  if (c.mechanism != attention::Mechanism::kHrr) throw ContractError("viz needs an HRR attention checkpoint");
  if (sample.tokens.size() != c.max_len) throw DimensionError("sample length does not match checkpoint max_len");
  std::filesystem::create_directories(out_dir);
  autograd::NoGradGuard no_grad;
  ForwardOptions opt;
  opt.keep_weights = true;
  const TokenBatchView view{sample.tokens, sample.mask, 1, c.max_len};
  const ForwardResult<T> r = encoder_forward(view, model.params, c, opt);

  std::vector<std::filesystem::path> written;
  const std::size_t len = c.max_len, side = exact_sqrt(len);
  for (std::size_t l = 0; l < r.layer_weights.size(); ++l) {
    const std::vector<T> all = r.layer_weights[l].to_vector();  // [1, h, T, 1]
    for (std::size_t h = 0; h < c.heads; ++h) {
      std::vector<double> w(all.begin() + h * len, all.begin() + (h + 1) * len);
      const std::string stem = "weights_layer" + std::to_string(l) + "_head" + std::to_string(h);
      const auto csv_path = out_dir / (stem + ".csv");
      std::ofstream csv(csv_path);
      csv << "position,weight\n";
      char buf[64];
      for (std::size_t t = 0; t < len; ++t) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", t, w[t]);
        csv << buf;
      }
      written.push_back(csv_path);
      if (side != 0) {
        const auto pgm_path = out_dir / (stem + ".pgm");
        write_pgm(pgm_path, to_gray(w), side);
        written.push_back(pgm_path);
      }
    }
  }
  return written;
}

}  // namespace hrrformer::viz
