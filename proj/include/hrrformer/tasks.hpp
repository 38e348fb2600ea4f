#pragma once

// Synthetic sequence-classification datasets, a byte-file loader, seeded
// batching, and JSONL export.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hrrformer/error.hpp"
#include "hrrformer/rng.hpp"

namespace hrrformer::tasks {

inline constexpr int kPad = 0;

// Row-major [size, len] tokens and mask, one label per row.
struct Dataset {
  std::size_t len = 0;
  std::size_t vocab_size = 0;
  std::size_t classes = 0;
  std::vector<int> tokens;
  std::vector<int> mask;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const int> row(std::size_t i) const { return {tokens.data() + i * len, len}; }
  std::span<const int> row_mask(std::size_t i) const { return {mask.data() + i * len, len}; }
};

struct TaskBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> tokens;
  std::vector<int> mask;
  std::vector<int> labels;
};

// Sequence layout: k1 v1 k2 v2 ... kn vn q, then padding. Keys come from
// [1, vocab/2) and are unique per sequence; values come from [vocab/2, vocab).
// The label is the value paired with q, offset to start at 0.
inline Dataset gen_keyvalue_recall(std::size_t n, std::size_t len, std::size_t n_pairs, std::size_t vocab,
                                   std::uint64_t seed) {
  if (n_pairs == 0) throw ConfigError("key-value recall needs at least one pair");
  if (2 * n_pairs + 2 > len) {
    throw ConfigError("2*n_pairs + 2 = " + std::to_string(2 * n_pairs + 2) + " exceeds sequence length " +
                      std::to_string(len));
  }
  const std::size_t split = vocab / 2;
  if (split < 2 || n_pairs > split - 1) {
    throw ConfigError("vocab " + std::to_string(vocab) + " has too few keys for " + std::to_string(n_pairs) +
                      " unique pairs");
  }
  Dataset d;
  d.len = len;
  d.vocab_size = vocab;
  d.classes = vocab - split;
  d.tokens.assign(n * len, kPad);
  d.mask.assign(n * len, 0);
  d.labels.resize(n);

  Rng rng(seed);
  std::vector<int> key_pool(split - 1);
  for (std::size_t i = 0; i < key_pool.size(); ++i) key_pool[i] = static_cast<int>(i + 1);
  for (std::size_t s = 0; s < n; ++s) {
    int* tok = d.tokens.data() + s * len;
    int* msk = d.mask.data() + s * len;
    // Partial Fisher-Yates picks n_pairs distinct keys.
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const std::size_t j = i + rng.below(key_pool.size() - i);
      std::swap(key_pool[i], key_pool[j]);
    }
    std::vector<int> values(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      values[i] = static_cast<int>(split + rng.below(vocab - split));
      tok[2 * i] = key_pool[i];
      tok[2 * i + 1] = values[i];
    }
    const std::size_t target = rng.below(n_pairs);
    tok[2 * n_pairs] = key_pool[target];
    std::fill(msk, msk + 2 * n_pairs + 1, 1);
    d.labels[s] = values[target] - static_cast<int>(split);
  }
  return d;
}

// Most frequent token among the unmasked entries; ties go to the smaller id.
inline int majority_token(std::span<const int> tokens) {
  if (tokens.empty()) throw ContractError("majority of an empty sequence");
  const int hi = *std::max_element(tokens.begin(), tokens.end());
  std::vector<std::size_t> counts(static_cast<std::size_t>(hi) + 1, 0);
  for (int t : tokens) ++counts[static_cast<std::size_t>(t)];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// Tokens 1..classes with one planted class holding 30-50% of the positions
// and a unique maximum count. Labels are the majority token minus one.
inline Dataset gen_majority(std::size_t n, std::size_t len, std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("majority needs at least two classes");
  if (len < 3) throw ConfigError("majority needs sequences of length >= 3");
  Dataset d;
  d.len = len;
  d.vocab_size = classes + 1;
  d.classes = classes;
  d.tokens.assign(n * len, kPad);
  d.mask.assign(n * len, 1);
  d.labels.resize(n);

  Rng rng(seed);
  std::vector<std::size_t> counts(classes + 1);
  for (std::size_t s = 0; s < n; ++s) {
    int* tok = d.tokens.data() + s * len;
    const int winner = static_cast<int>(1 + rng.below(classes));
    const double share = 0.3 + 0.2 * rng.uniform();
    const std::size_t planted = std::max<std::size_t>(2, static_cast<std::size_t>(share * len));
    for (std::size_t t = 0; t < len; ++t) {
      if (t < planted) {
        tok[t] = winner;
      } else {
        int other = static_cast<int>(1 + rng.below(classes - 1));
        if (other >= winner) ++other;
        tok[t] = other;
      }
    }
    // Break any tie or overtaking by recolouring to the winner.
    for (;;) {
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t t = 0; t < len; ++t) ++counts[static_cast<std::size_t>(tok[t])];
      std::size_t rival = 0;
      for (std::size_t c = 1; c <= classes; ++c) {
        if (static_cast<int>(c) != winner && counts[c] > counts[rival]) rival = c;
      }
      if (counts[rival] < counts[static_cast<std::size_t>(winner)]) break;
      for (std::size_t t = len; t-- > 0;) {
        if (tok[t] == static_cast<int>(rival)) {
          tok[t] = winner;
          break;
        }
      }
    }
    std::vector<std::size_t> order = random_permutation(len, rng);
    std::vector<int> shuffled(len);
    for (std::size_t t = 0; t < len; ++t) shuffled[t] = tok[order[t]];
    std::copy(shuffled.begin(), shuffled.end(), tok);
    d.labels[s] = winner - 1;
  }
  return d;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace detail

// Reads dir/labels.csv (filename,label; an optional header row is skipped)
// and every listed file as raw bytes. Byte b becomes token b+1; rows are
// truncated or padded to len. Row order is shuffled by seed.
inline Dataset load_bytes_dataset(const std::filesystem::path& dir, std::size_t len, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (len == 0) throw ConfigError("byte dataset length must be positive");
  const fs::path manifest = dir / "labels.csv";
  std::ifstream in(manifest);
  if (!in) throw IngestionError("cannot open labels manifest " + manifest.string());

  struct Entry {
    std::string file;
    int label;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw IngestionError("labels.csv line " + std::to_string(line_no) + ": no comma");
    const std::string file = detail::trim(line.substr(0, comma));
    const std::string label_text = detail::trim(line.substr(comma + 1));
    int label = 0;
    const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc() || ptr != label_text.data() + label_text.size() || label < 0) {
      if (line_no == 1 && entries.empty()) continue;  // header
      throw IngestionError("bad label '" + label_text + "' for file " + file);
    }
    entries.push_back({file, label});
  }
  if (entries.empty()) throw IngestionError("labels manifest " + manifest.string() + " lists no files");

  Dataset d;
  d.len = len;
  d.vocab_size = 257;
  d.tokens.assign(entries.size() * len, kPad);
  d.mask.assign(entries.size() * len, 0);
  d.labels.resize(entries.size());
  Rng rng(seed);
  const std::vector<std::size_t> order = random_permutation(entries.size(), rng);
  int max_label = 0;
  for (std::size_t r = 0; r < entries.size(); ++r) {
    const Entry& e = entries[order[r]];
    std::ifstream f(dir / e.file, std::ios::binary);
    if (!f) throw IngestionError("missing file " + e.file);
    std::vector<char> bytes;
    bytes.reserve(len);
    char c;
    while (bytes.size() < len && f.get(c)) bytes.push_back(c);
    for (std::size_t t = 0; t < bytes.size(); ++t) {
      d.tokens[r * len + t] = static_cast<int>(static_cast<unsigned char>(bytes[t])) + 1;
      d.mask[r * len + t] = 1;
    }
    d.labels[r] = e.label;
    max_label = std::max(max_label, e.label);
  }
  d.classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return d;
}

inline TaskBatch gather(const Dataset& d, std::span<const std::size_t> rows) {
  TaskBatch b;
  b.batch = rows.size();
  b.len = d.len;
  b.tokens.reserve(rows.size() * d.len);
  b.mask.reserve(rows.size() * d.len);
  for (std::size_t r : rows) {
    if (r >= d.size()) throw IndexError("row " + std::to_string(r) + " outside dataset of " + std::to_string(d.size()));
    const auto t = d.row(r), m = d.row_mask(r);
    b.tokens.insert(b.tokens.end(), t.begin(), t.end());
    b.mask.insert(b.mask.end(), m.begin(), m.end());
    b.labels.push_back(d.labels[r]);
  }
  return b;
}

// Per-epoch row order: a permutation drawn from Rng(seed, epoch), or the
// identity when shuffle is off.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch, bool shuffle) {
  if (!shuffle) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    return order;
  }
  Rng rng(seed, epoch);
  return random_permutation(n, rng);
}

// Single-consumer batch stream over one epoch; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(const Dataset& d, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch, bool shuffle)
      : data_(&d), batch_(batch_size), order_(epoch_order(d.size(), seed, epoch, shuffle)) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }

  std::optional<TaskBatch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), pos_ + batch_);
    TaskBatch b = gather(*data_, std::span<const std::size_t>(order_.data() + pos_, end - pos_));
    pos_ = end;
    return b;
  }

  std::size_t batches() const noexcept { return (order_.size() + batch_ - 1) / batch_; }

 private:
  const Dataset* data_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline BatchIterator batch_iter(const Dataset& d, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch = 0,
                                bool shuffle = true) {
  return BatchIterator(d, batch_size, seed, epoch, shuffle);
}

// Unmasked tokens of each row as {"tokens":[...],"label":k}, one per line.
inline void write_jsonl(const Dataset& d, std::ostream& out) {
  for (std::size_t r = 0; r < d.size(); ++r) {
    std::vector<int> toks;
    const auto t = d.row(r), m = d.row_mask(r);
    for (std::size_t i = 0; i < d.len; ++i) {
      if (m[i]) toks.push_back(t[i]);
    }
    out << nlohmann::json{{"tokens", toks}, {"label", d.labels[r]}}.dump() << '\n';
  }
}

// Inverse of write_jsonl. Rows longer than len are truncated.
inline Dataset read_jsonl(std::istream& in, std::size_t len, std::size_t vocab_size, std::size_t classes) {
  Dataset d;
  d.len = len;
  d.vocab_size = vocab_size;
  d.classes = classes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<int> toks;
    int label = 0;
    try {
      const auto j = nlohmann::json::parse(line);
      toks = j.at("tokens").get<std::vector<int>>();
      label = j.value("label", 0);
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("JSONL line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::size_t used = std::min(len, toks.size());
    for (std::size_t i = 0; i < len; ++i) {
      d.tokens.push_back(i < used ? toks[i] : kPad);
      d.mask.push_back(i < used ? 1 : 0);
    }
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace hrrformer::tasks
