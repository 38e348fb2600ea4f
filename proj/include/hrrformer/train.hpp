#pragma once

// Run configuration and the epoch loop behind `hrrformer train`.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "hrrformer/checkpoint.hpp"
#include "hrrformer/encoder.hpp"
#include "hrrformer/optim.hpp"
#include "hrrformer/tasks.hpp"

namespace hrrformer {

struct TaskConfig {
  std::string name = "kv_recall";  // kv_recall | majority | bytes
  std::size_t n_train = 10000;
  std::size_t n_test = 1000;
  std::size_t len = 64;
  std::size_t n_pairs = 8;   // kv_recall
  std::size_t vocab = 32;    // kv_recall
  std::size_t classes = 5;   // majority
  std::string data_dir;      // bytes
  double test_fraction = 0.2;  // bytes
};

struct RunConfig {
  TaskConfig task;
  EncoderConfig model;  // vocab_size, max_len and classes are derived from the task
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr_init = 1e-3;
  double lr_final = 1e-5;
  double decay = 0.95;
  std::uint64_t seed = 0;
  bool record_wall_time = false;
  std::string out_dir = "runs/default";
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  const auto& t = c.task;
  if (t.name != "kv_recall" && t.name != "majority" && t.name != "bytes") {
    throw ConfigError("task.name must be kv_recall, majority or bytes, got '" + t.name + "'");
  }
  if (t.name != "bytes" && (t.n_train == 0 || t.n_test == 0)) throw ConfigError("task.n_train and task.n_test must be positive");
  if (t.name == "bytes" && t.data_dir.empty()) throw ConfigError("task.data_dir is required for the bytes task");
  if (t.name == "bytes" && !(t.test_fraction > 0.0 && t.test_fraction < 1.0)) {
    throw ConfigError("task.test_fraction must lie in (0,1)");
  }
  if (t.name == "kv_recall" && (2 * t.n_pairs + 2 > t.len || t.n_pairs == 0 || t.n_pairs + 1 > t.vocab / 2)) {
    throw ConfigError("kv_recall needs 1 <= n_pairs < vocab/2 and 2*n_pairs + 2 <= len");
  }
  if (t.name == "majority" && t.classes < 2) throw ConfigError("majority needs task.classes >= 2");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.lr_init >= 0 && c.lr_final >= 0 && c.decay > 0 && c.decay <= 1)) {
    throw ConfigError("learning rates must be non-negative and decay in (0,1]");
  }
  c.model.validate();
}

// Fills the task-dependent encoder fields.
inline void derive_model_fields(RunConfig& c) {
  c.model.max_len = c.task.len;
  if (c.task.name == "kv_recall") {
    c.model.vocab_size = c.task.vocab;
    c.model.classes = c.task.vocab - c.task.vocab / 2;
  } else if (c.task.name == "majority") {
    c.model.vocab_size = c.task.classes + 1;
    c.model.classes = c.task.classes;
  } else {
    c.model.vocab_size = 257;
  }
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    detail::reject_unknown(j, {"task", "model", "train", "out_dir"}, "config");
    if (j.contains("task")) {
      const auto& t = j.at("task");
      detail::reject_unknown(t, {"name", "n_train", "n_test", "len", "n_pairs", "vocab", "classes", "data_dir",
                                 "test_fraction"},
                             "task");
      c.task.name = t.value("name", c.task.name);
      c.task.n_train = t.value("n_train", c.task.n_train);
      c.task.n_test = t.value("n_test", c.task.n_test);
      c.task.len = t.value("len", c.task.len);
      c.task.n_pairs = t.value("n_pairs", c.task.n_pairs);
      c.task.vocab = t.value("vocab", c.task.vocab);
      c.task.classes = t.value("classes", c.task.classes);
      c.task.data_dir = t.value("data_dir", c.task.data_dir);
      c.task.test_fraction = t.value("test_fraction", c.task.test_fraction);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      // vocab_size, max_len and classes are accepted so a resolved config.json
      // loads back; they are re-derived from the task.
      detail::reject_unknown(m, {"embed_dim", "mlp_dim", "heads", "layers", "positional", "dropout_rate", "mechanism",
                                 "vocab_size", "max_len", "classes"},
                             "model");
      c.model = encoder_config_from_json(m, c.model);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown(t, {"epochs", "batch_size", "lr_init", "lr_final", "decay", "seed", "record_wall_time"},
                             "train");
      c.epochs = t.value("epochs", c.epochs);
      c.batch_size = t.value("batch_size", c.batch_size);
      c.lr_init = t.value("lr_init", c.lr_init);
      c.lr_final = t.value("lr_final", c.lr_final);
      c.decay = t.value("decay", c.decay);
      c.seed = t.value("seed", c.seed);
      c.record_wall_time = t.value("record_wall_time", c.record_wall_time);
    }
    c.out_dir = j.value("out_dir", c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad run config: ") + e.what());
  }
  derive_model_fields(c);
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json model = encoder_config_to_json(c.model);
  return {{"task",
           {{"name", c.task.name},
            {"n_train", c.task.n_train},
            {"n_test", c.task.n_test},
            {"len", c.task.len},
            {"n_pairs", c.task.n_pairs},
            {"vocab", c.task.vocab},
            {"classes", c.task.classes},
            {"data_dir", c.task.data_dir},
            {"test_fraction", c.task.test_fraction}}},
          {"model", model},
          {"train",
           {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr_init", c.lr_init},
            {"lr_final", c.lr_final},
            {"decay", c.decay},
            {"seed", c.seed},
            {"record_wall_time", c.record_wall_time}}},
          {"out_dir", c.out_dir}};
}

struct TaskData {
  tasks::Dataset train, test;
};

// Seeds for data, initialisation, dropout and batching are separate streams
// of the run seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) { return Rng(seed, stream).next_u64(); }

inline TaskData make_task_data(const RunConfig& c) {
  const auto& t = c.task;
  TaskData d;
  if (t.name == "kv_recall") {
    d.train = tasks::gen_keyvalue_recall(t.n_train, t.len, t.n_pairs, t.vocab, stream_seed(c.seed, 1));
    d.test = tasks::gen_keyvalue_recall(t.n_test, t.len, t.n_pairs, t.vocab, stream_seed(c.seed, 2));
  } else if (t.name == "majority") {
    d.train = tasks::gen_majority(t.n_train, t.len, t.classes, stream_seed(c.seed, 1));
    d.test = tasks::gen_majority(t.n_test, t.len, t.classes, stream_seed(c.seed, 2));
  } else {
    const tasks::Dataset all = tasks::load_bytes_dataset(t.data_dir, t.len, stream_seed(c.seed, 1));
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(t.test_fraction * all.size()));
    if (n_test >= all.size()) throw ConfigError("bytes dataset too small to split");
    std::vector<std::size_t> test_rows, train_rows;
    for (std::size_t i = 0; i < all.size(); ++i) (i < n_test ? test_rows : train_rows).push_back(i);
    auto take = [&](const std::vector<std::size_t>& rows) {
      tasks::TaskBatch b = tasks::gather(all, rows);
      tasks::Dataset out;
      out.len = all.len;
      out.vocab_size = all.vocab_size;
      out.classes = all.classes;
      out.tokens = std::move(b.tokens);
      out.mask = std::move(b.mask);
      out.labels = std::move(b.labels);
      return out;
    };
    d.test = take(test_rows);
    d.train = take(train_rows);
  }
  return d;
}

struct TrainSummary {
  std::size_t epochs_run = 0;
  double final_test_acc = 0;
  double best_test_acc = 0;
  std::size_t best_epoch = 0;
};

inline std::string format_metrics_row(std::size_t epoch, double loss, double train_acc, double test_acc, double lr,
                                      double seconds) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.8f,%.6f,%.6f,%.8g,%.3f", epoch, loss, train_acc, test_acc, lr, seconds);
  return buf;
}

// Writes metrics.csv, config.json, checkpoint_final.{json,bin} and
// checkpoint_best.{json,bin} under out_dir (plus timing.csv when wall time
// is recorded). Deterministic in (config, seed) unless wall time is on.
template <class T>
TrainSummary run_training(RunConfig config, std::ostream* log = &std::cerr) {
  namespace fs = std::filesystem;
  if (config.task.name == "bytes") {
    // Class count comes from the manifest.
    const TaskData probe = make_task_data(config);
    config.model.classes = std::max(probe.train.classes, probe.test.classes);
  }
  validate(config);
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  {
    std::ofstream cfg(out / "config.json");
    cfg << run_config_to_json(config).dump(2) << '\n';
  }

  const TaskData data = make_task_data(config);
  Rng init_rng(stream_seed(config.seed, 3));
  Rng dropout_rng(stream_seed(config.seed, 4));
  const std::uint64_t batch_seed = stream_seed(config.seed, 5);
  ModelParams<T> params = ModelParams<T>::init(config.model, init_rng);
  Adam<T> optimizer(params);

  std::ofstream metrics(out / "metrics.csv");
  metrics << "epoch,train_loss,train_acc,test_acc,lr,seconds\n";
  std::ofstream timing;
  if (config.record_wall_time) {
    timing.open(out / "timing.csv");
    timing << "epoch,wall_seconds\n";
  }

  TrainSummary summary;
  if (config.epochs == 0) {
    save_checkpoint(out, "checkpoint_final", params, config.model);
    save_checkpoint(out, "checkpoint_best", params, config.model);
    return summary;
  }

  std::size_t step = 0;
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = exponential_lr(epoch, config.lr_init, config.lr_final, config.decay);
    double loss_sum = 0;
    std::size_t correct = 0;
    auto it = tasks::batch_iter(data.train, config.batch_size, batch_seed, epoch);
    while (auto batch = it.next()) {
      const StepResult r = train_step(params, *batch, config.model, optimizer, lr, dropout_rng, step++);
      loss_sum += r.loss * static_cast<double>(batch->batch);
      correct += r.correct;
    }
    const StepResult test = evaluate(params, data.test, config.model, 256, hrr::InverseMode::kClamp);
    const double n_train = static_cast<double>(data.train.size());
    const double train_acc = static_cast<double>(correct) / n_train;
    const double test_acc = static_cast<double>(test.correct) / static_cast<double>(data.test.size());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics << format_metrics_row(epoch, loss_sum / n_train, train_acc, test_acc, lr,
                                  config.record_wall_time ? seconds : 0.0)
            << '\n';
    metrics.flush();
    if (config.record_wall_time) timing << epoch << ',' << seconds << '\n';
    if (log) {
      *log << "epoch " << epoch << " loss " << loss_sum / n_train << " train_acc " << train_acc << " test_acc "
           << test_acc << " (" << seconds << " s)\n";
    }
    summary.epochs_run = epoch + 1;
    summary.final_test_acc = test_acc;
    if (!have_best || test_acc > summary.best_test_acc) {
      have_best = true;
      summary.best_test_acc = test_acc;
      summary.best_epoch = epoch;
      save_checkpoint(out, "checkpoint_best", params, config.model);
    }
  }
  save_checkpoint(out, "checkpoint_final", params, config.model);
  return summary;
}

}  // namespace hrrformer
