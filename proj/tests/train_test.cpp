#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "hrrformer/checkpoint.hpp"
#include "hrrformer/train.hpp"

namespace hrrformer {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hrrformer_train_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EncoderConfig tiny_model() {
  EncoderConfig c;
  c.vocab_size = 9;
  c.max_len = 8;
  c.embed_dim = 8;
  c.mlp_dim = 16;
  c.heads = 2;
  c.layers = 2;
  c.classes = 3;
  return c;
}

RunConfig tiny_run(const fs::path& out) {
  return run_config_from_json(nlohmann::json{
      {"task", {{"name", "kv_recall"}, {"n_train", 64}, {"n_test", 32}, {"len", 12}, {"n_pairs", 2}, {"vocab", 8}}},
      {"model", {{"embed_dim", 8}, {"mlp_dim", 8}, {"heads", 2}, {"layers", 1}}},
      {"train", {{"epochs", 3}, {"batch_size", 16}, {"seed", 5}}},
      {"out_dir", out.string()}});
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("ckpt");
  const EncoderConfig c = tiny_model();
  Rng rng(1);
  const auto p = ModelParams<double>::init(c, rng);
  save_checkpoint(dir, "m", p, c);
  const auto loaded = load_checkpoint<double>(dir / "m.json");
  EXPECT_EQ(loaded.config.layers, 2u);
  EXPECT_EQ(loaded.config.classes, 3u);
  const auto a = p.named();
  const auto b = loaded.params.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second->shape(), b[i].second->shape());
    EXPECT_EQ(a[i].second->to_vector(), b[i].second->to_vector()) << a[i].first;
  }
  // Blob is little-endian doubles laid out in listing order.
  EXPECT_EQ(fs::file_size(dir / "m.bin"), p.parameter_count() * sizeof(double));

  const auto as_float = load_checkpoint<float>(dir / "m.json");
  const auto fa = as_float.params.embedding.to_vector();
  const auto da = p.embedding.to_vector();
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_EQ(fa[i], static_cast<float>(da[i]));

  save_checkpoint(dir, "f", as_float.params, c);
  const auto back = load_checkpoint<float>(dir / "f.json");
  EXPECT_EQ(back.params.head_w2.to_vector(), as_float.params.head_w2.to_vector());
}

TEST(Checkpoint, MismatchesAreReported) {
  const fs::path dir = scratch_dir("ckpt_bad");
  const EncoderConfig c = tiny_model();
  Rng rng(2);
  save_checkpoint(dir, "m", ModelParams<double>::init(c, rng), c);
  EXPECT_THROW(load_checkpoint<double>(dir / "missing.json"), IngestionError);

  auto manifest = nlohmann::json::parse(slurp(dir / "m.json"));
  manifest["config"]["mlp_dim"] = 32;
  std::ofstream(dir / "shape.json") << manifest.dump();
  EXPECT_THROW(load_checkpoint<double>(dir / "shape.json"), DimensionError);

  manifest = nlohmann::json::parse(slurp(dir / "m.json"));
  manifest["config"]["layers"] = 1;
  std::ofstream(dir / "count.json") << manifest.dump();
  EXPECT_THROW(load_checkpoint<double>(dir / "count.json"), DimensionError);

  fs::resize_file(dir / "m.bin", 16);
  EXPECT_THROW(load_checkpoint<double>(dir / "m.json"), IngestionError);
}

TEST(RunConfig, ParsesDerivesAndRejects) {
  const RunConfig c = tiny_run("/tmp/unused");
  EXPECT_EQ(c.model.vocab_size, 8u);
  EXPECT_EQ(c.model.classes, 4u);
  EXPECT_EQ(c.model.max_len, 12u);
  EXPECT_EQ(c.lr_init, 1e-3);
  EXPECT_EQ(c.decay, 0.95);

  // The resolved form written next to a run loads back to the same config.
  const RunConfig again = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(again), run_config_to_json(c));

  EXPECT_THROW(run_config_from_json({{"task", {{"name", "sorting"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"model", {{"heads", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"batch_size", 0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"task", {{"name", "bytes"}}}}), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(RunTraining, ZeroEpochsWritesInitialCheckpointsAndHeaderOnlyMetrics) {
  const fs::path dir = scratch_dir("zero");
  RunConfig c = tiny_run(dir);
  c.epochs = 0;
  const TrainSummary s = run_training<double>(c, nullptr);
  EXPECT_EQ(s.epochs_run, 0u);
  EXPECT_EQ(slurp(dir / "metrics.csv"), "epoch,train_loss,train_acc,test_acc,lr,seconds\n");
  for (const char* f : {"checkpoint_final.json", "checkpoint_final.bin", "checkpoint_best.json", "checkpoint_best.bin",
                        "config.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  Rng init(stream_seed(c.seed, 3));
  const auto expected = ModelParams<double>::init(c.model, init);
  EXPECT_EQ(load_checkpoint<double>(dir / "checkpoint_final.json").params.embedding.to_vector(),
            expected.embedding.to_vector());
}

TEST(RunTraining, RerunsAreByteIdentical) {
  const fs::path a = scratch_dir("rerun_a"), b = scratch_dir("rerun_b");
  const TrainSummary sa = run_training<double>(tiny_run(a), nullptr);
  run_training<double>(tiny_run(b), nullptr);
  EXPECT_EQ(sa.epochs_run, 3u);
  for (const char* f : {"metrics.csv", "checkpoint_final.bin", "checkpoint_best.bin", "checkpoint_final.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  std::istringstream metrics(slurp(a / "metrics.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(metrics, line);
  while (std::getline(metrics, line)) ++rows;
  EXPECT_EQ(rows, 3u);

  RunConfig other = tiny_run(scratch_dir("rerun_c"));
  other.seed = 6;
  run_training<double>(other, nullptr);
  EXPECT_NE(slurp(a / "metrics.csv"), slurp(fs::path(other.out_dir) / "metrics.csv"));
}

TEST(RunTraining, BytesTaskReadsManifestAndSplits) {
  const fs::path data = scratch_dir("bytes_data");
  fs::create_directories(data);
  std::ofstream manifest(data / "labels.csv");
  manifest << "filename,label\n";
  for (int i = 0; i < 20; ++i) {
    const std::string name = "f" + std::to_string(i) + ".bin";
    std::ofstream(data / name, std::ios::binary) << std::string(static_cast<std::size_t>(3 + i % 5), static_cast<char>('a' + i % 2));
    manifest << name << ',' << i % 2 << '\n';
  }
  manifest.close();
  const fs::path out = scratch_dir("bytes_run");
  RunConfig c = run_config_from_json(nlohmann::json{
      {"task", {{"name", "bytes"}, {"len", 8}, {"data_dir", data.string()}, {"test_fraction", 0.25}}},
      {"model", {{"embed_dim", 8}, {"mlp_dim", 8}, {"heads", 2}}},
      {"train", {{"epochs", 1}, {"batch_size", 5}}},
      {"out_dir", out.string()}});
  EXPECT_EQ(c.model.vocab_size, 257u);
  const TaskData d = make_task_data(c);
  EXPECT_EQ(d.test.size(), 5u);
  EXPECT_EQ(d.train.size(), 15u);
  run_training<double>(c, nullptr);
  EXPECT_EQ(load_checkpoint<double>(out / "checkpoint_final.json").config.classes, 2u);
}

}  // namespace
}  // namespace hrrformer
