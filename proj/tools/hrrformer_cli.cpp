// hrrformer: train, bench, viz, selftest and slope subcommands.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hrrformer/hrrformer.hpp"

namespace fs = std::filesystem;
using namespace hrrformer;

namespace {

enum class Dtype { kF32, kF64 };

Dtype dtype_from_env() {
  const char* v = std::getenv("HRRFORMER_DTYPE");
  if (!v || std::string(v).empty() || std::string(v) == "f64") return Dtype::kF64;
  if (std::string(v) == "f32") return Dtype::kF32;
  throw ConfigError(std::string("HRRFORMER_DTYPE must be f32 or f64, got '") + v + "'");
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  RunConfig config = load_run_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (!a.out.empty()) config.out_dir = a.out;
  const TrainSummary s = dtype_from_env() == Dtype::kF32 ? run_training<float>(config) : run_training<double>(config);
  std::cout << "epochs " << s.epochs_run << " final_test_acc " << s.final_test_acc << " best_test_acc "
            << s.best_test_acc << " (epoch " << s.best_epoch << ")\n";
  return 0;
}

int cmd_bench(const bench::BenchOptions& opt, const std::string& out) {
  std::ofstream file;
  std::ostream* sink = &std::cout;
  if (!out.empty()) {
    fs::create_directories(out);
    file.open(fs::path(out) / "bench.csv");
    if (!file) throw Error("cannot write " + (fs::path(out) / "bench.csv").string());
    sink = &file;
  }
  *sink << bench::kCsvHeader << '\n';
  const auto records =
      dtype_from_env() == Dtype::kF32 ? bench::run_sweep<float>(opt, sink) : bench::run_sweep<double>(opt, sink);
  if (!out.empty()) {
    for (const auto& r : records) std::cout << bench::format_csv_row(r) << '\n';
  }
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.status == "ok";
  if (ok >= 2) std::cerr << "log-log time slope " << bench::fit_loglog_slope(records, opt.model) << '\n';
  return 0;
}

int cmd_slope(const std::string& csv) {
  std::ifstream in(csv);
  if (!in) throw IngestionError("cannot open " + csv);
  const auto records = bench::read_csv(in);
  for (const std::string model : {"hrr", "dot"}) {
    std::size_t ok = 0;
    for (const auto& r : records) ok += r.model == model && r.status == "ok";
    if (ok >= 2) std::cout << model << ' ' << bench::fit_loglog_slope(records, model) << '\n';
  }
  return 0;
}

template <class T>
int viz_as(const std::string& checkpoint, const std::string& input, const std::string& out) {
  const LoadedModel<T> model = load_checkpoint<T>(checkpoint);
  const viz::Sample sample = viz::load_sample(input, model.config.max_len);
  for (const auto& p : viz::export_weights(model, sample, out)) std::cout << p.string() << '\n';
  return 0;
}

int cmd_selftest() {
  return selftest::print_table(selftest::run_all(), std::cout) == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HRR linear-time attention: training, benchmarks and diagnostics"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train an encoder from a JSON run config");
  train->add_option("--config", train_args.config, "run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", train_args.seed, "override the config seed");
  train->add_option("--out", train_args.out, "override the output directory");

  bench::BenchOptions bopt;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "sequence-length scaling sweep of one attention layer");
  bench_cmd->set_help_flag("--help", "print this help message and exit");  // -h is taken by --h
  bench_cmd->add_option("--model", bopt.model, "hrr or dot")->check(CLI::IsMember({"hrr", "dot"}));
  bench_cmd->add_option("--t-min", bopt.t_min, "smallest sequence length (power of two)");
  bench_cmd->add_option("--t-max", bopt.t_max, "largest sequence length (power of two)");
  bench_cmd->add_option("--h", bopt.H, "embedding width");
  bench_cmd->add_option("--heads", bopt.heads, "attention heads");
  bench_cmd->add_option("--reps", bopt.reps, "timed repetitions after one warmup");
  bench_cmd->add_option("--batch", bopt.batch, "batch size");
  bench_cmd->add_flag("--backward", bopt.backward, "time forward plus backward");
  bench_cmd->add_flag("--batch-preset", bopt.halve_batch, "batch = max(2^(16 - log2 T), 1)");
  bench_cmd->add_option("--max-bytes", bopt.max_bytes, "live tensor byte limit; exceeding it records OOM");
  bench_cmd->add_option("--time-limit", bopt.time_limit, "seconds per rep; exceeding it records OOT");
  bench_cmd->add_option("--seed", bopt.seed, "input and weight seed");
  bench_cmd->add_option("--out", bench_out, "directory for bench.csv (stdout when omitted)");

  std::string checkpoint, input, viz_out;
  auto* viz_cmd = app.add_subcommand("viz", "export per-head attention weights for one sample");
  viz_cmd->add_option("--checkpoint", checkpoint, "checkpoint manifest (.json)")->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--input", input, "sample: .jsonl (first row) or raw bytes")->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--out", viz_out, "output directory")->required();

  auto* selftest_cmd = app.add_subcommand("selftest", "algebra, gradient and invariance checks");

  std::string slope_csv;
  auto* slope_cmd = app.add_subcommand("slope", "fit log-log time slopes from a bench CSV");
  slope_cmd->add_option("csv", slope_csv, "bench CSV")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_args);
    if (*bench_cmd) return cmd_bench(bopt, bench_out);
    if (*viz_cmd) {
      return dtype_from_env() == Dtype::kF32 ? viz_as<float>(checkpoint, input, viz_out)
                                             : viz_as<double>(checkpoint, input, viz_out);
    }
    if (*selftest_cmd) return cmd_selftest();
    if (*slope_cmd) return cmd_slope(slope_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
