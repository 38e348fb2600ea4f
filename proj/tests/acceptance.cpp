// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hrrformer/hrrformer.hpp"
#include "test_support.hpp"

namespace {

using namespace hrrformer;
using Td = Tensor<double>;
namespace fs = std::filesystem;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hrrformer_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

Outcome algebra_exactness() {
  Rng rng(1001);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto k = hrr::sample_symbol<double>(256, rng), v = hrr::sample_symbol<double>(256, rng);
    worst = std::max(worst, testing::relative_error(hrr::unbind(hrr::bind(k, v), k).vec().to_vector(),
                                                    v.vec().to_vector()));
  }
  const auto inv = hrr::exact_inverse(hrr::delta<double>(4, 1)).to_vector();
  const double delta_err = testing::relative_error(inv, hrr::delta<double>(4, 3).to_vector());
  return {worst < 1e-8 && delta_err < 1e-12,
          fmt("worst relative error %.2e over 1000 trials (limit 1e-8); inverse(e1) vs e3 %.1e", worst, delta_err)};
}

Outcome plate_retrieval() {
  // Per trial: 10 bound pairs at H=512; the queried key's value must out-score
  // every one of 10 absent probe vectors.
  Rng rng(1002);
  int wins = 0;
  double present_sum = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<hrr::HrrSymbol<double>, hrr::HrrSymbol<double>>> pairs;
    for (int i = 0; i < 10; ++i) pairs.emplace_back(hrr::sample_symbol<double>(512, rng), hrr::sample_symbol<double>(512, rng));
    const auto beta = hrr::superpose(pairs);
    const std::size_t target = rng.below(10);
    const auto recovered = hrr::unbind(beta, pairs[target].first);
    const double present = hrr::cosine_similarity(recovered, pairs[target].second);
    present_sum += present;
    double best_absent = -1;
    for (int j = 0; j < 10; ++j) {
      best_absent = std::max(best_absent, hrr::cosine_similarity(recovered, hrr::sample_symbol<double>(512, rng)));
    }
    wins += present > best_absent;
  }
  return {wins >= 190, fmt("present value beats every absent probe in %.0f/200 trials (need 190); mean present cosine %.3f",
                           wins, present_sum / 200)};
}

Outcome distributivity() {
  Rng rng(1003);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t pairs = 1 + rng.below(16);
    const Td k = testing::gaussian_tensor({pairs, 256}, rng, 1.0 / 16), v = testing::gaussian_tensor({pairs, 256}, rng, 1.0 / 16);
    const Td q = testing::gaussian_tensor({256}, rng, 1.0 / 16);
    const Td bound = hrr::bind(k, v);
    const auto lhs = hrr::unbind(reduce_sum(bound, 0), q).to_vector();
    const auto rhs = reduce_sum(hrr::unbind(bound, q), 0).to_vector();
    worst = std::max(worst, testing::relative_error(lhs, rhs));
  }
  return {worst < 1e-10, fmt("worst relative error %.2e over 100 cases (limit 1e-10)", worst)};
}

Outcome softmax_denoising() {
  Rng rng(1004);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Td scores = testing::uniform_tensor({2, 4, 64, 1}, rng, -1.0, 1.0);
    const double c = 200.0 * (rng.uniform() - 0.5);
    const auto a = softmax(scores, 2).to_vector(), b = softmax(shift(scores, c), 2).to_vector();
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  return {worst < 1e-12, fmt("worst weight change %.2e over 100 shifted cases (limit 1e-12)", worst)};
}

double encoder_gradient_error() {
  EncoderConfig c;
  c.vocab_size = 10;
  c.max_len = 8;
  c.embed_dim = 8;
  c.mlp_dim = 16;
  c.heads = 2;
  c.layers = 1;
  c.classes = 3;
  c.dropout_rate = 0;
  Rng rng(1005);
  auto p = ModelParams<double>::init(c, rng);
  const std::vector<int> tokens{3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 0, 0};
  const std::vector<int> mask{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  const std::vector<int> labels{1, 2};
  const TokenBatchView view{tokens, mask, 2, 8};
  auto loss = [&] {
    ForwardOptions opt;
    opt.inverse = hrr::InverseMode::kStrict;
    return cross_entropy_with_logits(encoder_forward(view, p, c, opt).logits, std::span<const int>(labels));
  };
  const Gradients<double> g = grad(loss());
  double worst = 0;
  for (auto& [name, slot] : p.named()) {
    const Td saved = *slot;
    const std::vector<double> analytic = g[saved].to_vector();
    std::vector<double> numeric(saved.size());
    for (std::size_t e = 0; e < saved.size(); ++e) {
      auto probe = [&](double d) {
        std::vector<double> v = saved.to_vector();
        v[e] += d;
        *slot = Td(saved.shape(), std::span<const double>(v));
        autograd::NoGradGuard no_grad;
        return loss().item();
      };
      numeric[e] = (probe(1e-6) - probe(-1e-6)) / 2e-6;
    }
    *slot = saved;
    worst = std::max(worst, testing::relative_error(analytic, numeric));
  }
  return worst;
}

Outcome gradient_fidelity() {
  Rng rng(1006);
  auto probe_weights = [&](Shape s) { return testing::uniform_tensor(std::move(s), rng); };
  const Td w1 = probe_weights({3, 8}), w2 = probe_weights({2, 8}), w3 = probe_weights({4, 6}), w4 = probe_weights({3, 5});
  const Td w5 = probe_weights({2, 3, 8, 1});
  std::vector<std::pair<std::string, double>> ops;
  ops.emplace_back("bind", testing::gradient_check(
                               [&](const std::vector<Td>& x) { return sum_all(mul(hrr::bind(x[0], x[1]), w1)); },
                               {testing::gaussian_tensor({3, 8}, rng, 0.5), testing::gaussian_tensor({3, 8}, rng, 0.5)}));
  ops.emplace_back("exact_inverse", testing::gradient_check(
                                        [&](const std::vector<Td>& x) { return sum_all(mul(hrr::exact_inverse(x[0]), w2)); },
                                        {testing::gaussian_tensor({2, 8}, rng, 0.35)}));
  ops.emplace_back("unbind+cosine", testing::gradient_check(
                                        [](const std::vector<Td>& x) {
                                          return sum_all(hrr::cosine_similarity(hrr::unbind(x[0], x[1]), x[2]));
                                        },
                                        {testing::gaussian_tensor({3, 8}, rng, 0.35), testing::gaussian_tensor({3, 8}, rng, 0.35),
                                         testing::gaussian_tensor({3, 8}, rng, 0.35)}));
  ops.emplace_back("softmax", testing::gradient_check(
                                  [&](const std::vector<Td>& x) { return sum_all(mul(softmax(x[0], 2), w5)); },
                                  {testing::gaussian_tensor({2, 3, 8, 1}, rng, 1.0)}));
  ops.emplace_back("layer_norm", testing::gradient_check(
                                     [&](const std::vector<Td>& x) { return sum_all(mul(layer_norm(x[0], x[1], x[2]), w3)); },
                                     {testing::gaussian_tensor({4, 6}, rng, 1.0), testing::gaussian_tensor({6}, rng, 1.0),
                                      testing::gaussian_tensor({6}, rng, 1.0)}));
  ops.emplace_back("linear+relu", testing::gradient_check(
                                      [&](const std::vector<Td>& x) { return sum_all(mul(relu(linear(x[0], x[1])), w4)); },
                                      {testing::gaussian_tensor({3, 4}, rng, 1.0), testing::gaussian_tensor({4, 5}, rng, 1.0)}));
  {
    const std::vector<int> labels{0, 2, 1};
    ops.emplace_back("cross_entropy", testing::gradient_check(
                                          [&](const std::vector<Td>& x) {
                                            return cross_entropy_with_logits(x[0], std::span<const int>(labels));
                                          },
                                          {testing::gaussian_tensor({3, 4}, rng, 1.0)}));
  }
  {
    const Td x = testing::gaussian_tensor({2, 4, 8}, rng, 1.0);
    const Td mask(Shape{2, 4}, {1, 1, 1, 0, 1, 1, 0, 0});
    const Td w = probe_weights({2, 4, 8});
    const auto p = attention::AttentionParams<double>::init(8, rng);
    ops.emplace_back("hrr attention", testing::gradient_check(
                                          [&](const std::vector<Td>& in) {
                                            const attention::AttentionParams<double> q{in[0], in[1], in[2], in[3]};
                                            return sum_all(mul(attention::multihead_hrr_attention(x, q, 2, &mask).out, w));
                                          },
                                          {p.query.detach(), p.key.detach(), p.value.detach(), p.output.detach()}));
  }
  double worst_op = 0;
  std::string worst_name;
  for (const auto& [name, err] : ops) {
    if (err >= worst_op) {
      worst_op = err;
      worst_name = name;
    }
  }
  const double enc = encoder_gradient_error();
  return {worst_op < 1e-5 && enc < 1e-4,
          "worst op error " + fmt("%.2e", worst_op) + " (" + worst_name + ", limit 1e-5); full encoder loss " +
              fmt("%.2e (limit 1e-4)", enc)};
}

struct SweepPair {
  std::vector<bench::BenchRecord> hrr, dot;
};

const SweepPair& scaling_sweep() {
  static const SweepPair sweep = [] {
    SweepPair s;
    bench::BenchOptions opt;
    opt.t_min = 512;
    opt.t_max = 8192;
    opt.H = 64;
    opt.heads = 8;
    opt.reps = 5;
    opt.seed = 1007;
    opt.model = "hrr";
    s.hrr = bench::run_sweep<double>(opt);
    opt.model = "dot";
    s.dot = bench::run_sweep<double>(opt);
    std::printf("  bench sweep:\n  %s\n", bench::kCsvHeader);
    for (const auto* v : {&s.hrr, &s.dot}) {
      for (const auto& r : *v) std::printf("  %s\n", bench::format_csv_row(r).c_str());
    }
    return s;
  }();
  return sweep;
}

Outcome complexity() {
  const SweepPair& s = scaling_sweep();
  bool ok = true;
  for (const auto* v : {&s.hrr, &s.dot}) {
    for (const auto& r : *v) ok = ok && r.status == "ok";
  }
  if (!ok) return {false, "sweep has OOM/OOT rows"};
  const double hrr_slope = bench::fit_loglog_slope(s.hrr, "hrr"), dot_slope = bench::fit_loglog_slope(s.dot, "dot");
  bool linear_fft = true;
  for (const auto& r : s.hrr) linear_fft = linear_fft && r.fft_calls == s.hrr.front().fft_calls * (r.T / s.hrr.front().T);
  return {hrr_slope >= 0.9 && hrr_slope <= 1.3 && dot_slope >= 1.7 && dot_slope <= 2.3 && linear_fft,
          fmt("hrr slope %.3f (need [0.9,1.3]); dot slope %.3f (need [1.7,2.3]); hrr fft_calls exactly linear: ",
              hrr_slope, dot_slope) +
              (linear_fft ? "yes" : "no")};
}

Outcome memory_linearity() {
  const SweepPair& s = scaling_sweep();
  double hrr_lo = 1e9, hrr_hi = 0, dot_lo = 1e9;
  for (std::size_t i = 1; i < s.hrr.size(); ++i) {
    const double r = static_cast<double>(s.hrr[i].peak_bytes) / static_cast<double>(s.hrr[i - 1].peak_bytes);
    hrr_lo = std::min(hrr_lo, r);
    hrr_hi = std::max(hrr_hi, r);
  }
  for (std::size_t i = 1; i < s.dot.size(); ++i) {
    if (s.dot[i - 1].T < 2048) continue;
    dot_lo = std::min(dot_lo, static_cast<double>(s.dot[i].peak_bytes) / static_cast<double>(s.dot[i - 1].peak_bytes));
  }
  return {hrr_lo >= 1.8 && hrr_hi <= 2.2 && dot_lo >= 3.2,
          fmt("hrr peak ratio per doubling in [%.3f, %.3f] (need [1.8,2.2]); dot min ratio from T>=2048 %.3f (need >=3.2)",
              hrr_lo, hrr_hi, dot_lo)};
}

Outcome learning() {
  const fs::path configs = HRRFORMER_CONFIG_DIR;
  double accs[2] = {0, 0};
  const char* names[2] = {"kv_recall.json", "majority.json"};
  for (int i = 0; i < 2; ++i) {
    RunConfig c = load_run_config(configs / names[i]);
    c.out_dir = scratch(std::string("learning_") + std::to_string(i)).string();
    std::ostringstream log;
    const TrainSummary s = run_training<double>(c, &log);
    accs[i] = s.best_test_acc;
    std::printf("  %s: best test accuracy %.4f at epoch %zu, final %.4f\n", names[i], s.best_test_acc, s.best_epoch,
                s.final_test_acc);
  }
  return {accs[0] >= 0.90 && accs[1] >= 0.95,
          fmt("key-value recall %.4f (need 0.90); majority %.4f (need 0.95)", accs[0], accs[1])};
}

Outcome masking() {
  EncoderConfig c;
  c.vocab_size = 20;
  c.max_len = 64;
  c.embed_dim = 32;
  c.mlp_dim = 32;
  c.heads = 4;
  c.layers = 2;
  c.classes = 4;
  Rng rng(1009);
  const auto p = ModelParams<double>::init(c, rng);
  double worst_logit = 0, worst_weight = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t used = 1 + rng.below(32), extra = 1 + rng.below(32);
    std::vector<int> tokens(used + extra), mask(used + extra, 0);
    for (std::size_t t = 0; t < used + extra; ++t) tokens[t] = 1 + static_cast<int>(rng.below(19));
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(used), 1);
    const TokenBatchView shorter{std::span<const int>(tokens).first(used), std::span<const int>(mask).first(used), 1, used};
    ForwardOptions opt;
    opt.keep_weights = true;
    const auto a = encoder_forward(shorter, p, c).logits.to_vector();
    const auto full = encoder_forward(TokenBatchView{tokens, mask, 1, used + extra}, p, c, opt);
    const auto b = full.logits.to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) worst_logit = std::max(worst_logit, std::abs(a[i] - b[i]));
    for (const auto& w : full.layer_weights) {
      const auto wv = w.to_vector();  // [1, h, T, 1]
      const std::size_t len = used + extra;
      for (std::size_t h = 0; h < c.heads; ++h) {
        double hi = 0, masked = 0;
        for (std::size_t t = 0; t < len; ++t) {
          (t < used ? hi : masked) = std::max(t < used ? hi : masked, wv[h * len + t]);
        }
        worst_weight = std::max(worst_weight, masked / hi);
      }
    }
  }
  return {worst_logit <= 1e-5 && worst_weight < 1e-6,
          fmt("worst logit change %.2e (limit 1e-5); worst masked/max weight %.2e (limit 1e-6)", worst_logit, worst_weight)};
}

Outcome reproducibility() {
  auto run = [](const std::string& name) {
    RunConfig c = run_config_from_json(nlohmann::json{
        {"task", {{"name", "kv_recall"}, {"n_train", 256}, {"n_test", 64}, {"len", 16}, {"n_pairs", 3}, {"vocab", 16}}},
        {"model", {{"embed_dim", 16}, {"mlp_dim", 16}, {"heads", 2}, {"layers", 2}}},
        {"train", {{"epochs", 3}, {"batch_size", 32}, {"seed", 1010}}}});
    c.out_dir = scratch(name).string();
    run_training<double>(c, nullptr);
    return fs::path(c.out_dir);
  };
  const fs::path a = run("repro_a"), b = run("repro_b");
  std::vector<std::string> differing;
  for (const char* f : {"metrics.csv", "checkpoint_final.json", "checkpoint_final.bin",
                        "checkpoint_best.json", "checkpoint_best.bin"}) {
    if (slurp(a / f) != slurp(b / f) || slurp(a / f).empty()) differing.push_back(f);
  }
  std::string detail = "metrics.csv and both checkpoints ";
  detail += differing.empty() ? "byte-identical across two runs" : "differ: ";
  for (const auto& f : differing) detail += f + " ";
  return {differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"algebra exactness", algebra_exactness},
      {"superposition retrieval", plate_retrieval},
      {"unbind distributivity", distributivity},
      {"softmax shift invariance", softmax_denoising},
      {"gradient fidelity", gradient_fidelity},
      {"time complexity", complexity},
      {"memory linearity", memory_linearity},
      {"learning", learning},
      {"masking", masking},
      {"reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.passed;
    std::printf("criterion %2d %s  %-26s %s [%.1f s]\n", id, o.passed ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
