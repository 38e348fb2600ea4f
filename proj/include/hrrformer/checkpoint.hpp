#pragma once

// Model checkpoints: a JSON manifest (encoder config, tensor names, shapes,
// dtype, byte offsets) next to one raw little-endian blob.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hrrformer/encoder.hpp"
#include "hrrformer/error.hpp"

namespace hrrformer {

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"max_len", c.max_len},
          {"embed_dim", c.embed_dim},
          {"mlp_dim", c.mlp_dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"classes", c.classes},
          {"positional", to_string(c.positional)},
          {"dropout_rate", c.dropout_rate},
          {"mechanism", c.mechanism == attention::Mechanism::kHrr ? "hrr" : "dot"}};
}

// Missing keys keep the defaults in `base`; unknown keys are ignored here.
inline EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig base = {}) {
  try {
    base.vocab_size = j.value("vocab_size", base.vocab_size);
    base.max_len = j.value("max_len", base.max_len);
    base.embed_dim = j.value("embed_dim", base.embed_dim);
    base.mlp_dim = j.value("mlp_dim", base.mlp_dim);
    base.heads = j.value("heads", base.heads);
    base.layers = j.value("layers", base.layers);
    base.classes = j.value("classes", base.classes);
    if (j.contains("positional")) base.positional = parse_positional(j.at("positional").get<std::string>());
    base.dropout_rate = j.value("dropout_rate", base.dropout_rate);
    if (j.contains("mechanism")) {
      const auto m = j.at("mechanism").get<std::string>();
      if (m != "hrr" && m != "dot") throw ConfigError("mechanism must be 'hrr' or 'dot', got '" + m + "'");
      base.mechanism = m == "hrr" ? attention::Mechanism::kHrr : attention::Mechanism::kDot;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad encoder config: ") + e.what());
  }
  return base;
}

namespace detail {

template <class U>
void append_le(std::vector<unsigned char>& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  const Bits bits = std::bit_cast<Bits>(value);
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

template <class U>
U read_le(const unsigned char* p) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  Bits bits = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) bits |= static_cast<Bits>(p[b]) << (8 * b);
  return std::bit_cast<U>(bits);
}

}  // namespace detail

// Writes <dir>/<name>.json and <dir>/<name>.bin.
template <class T>
void save_checkpoint(const std::filesystem::path& dir, const std::string& name, const ModelParams<T>& params,
                     const EncoderConfig& config) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [tname, t] : params.named()) {
    const std::size_t offset = blob.size();
    for (const T v : t->data()) detail::append_le(blob, v);
    tensors.push_back({{"name", tname}, {"shape", t->shape()}, {"offset", offset}, {"bytes", blob.size() - offset}});
  }
  const nlohmann::json manifest = {{"format", "hrrformer-checkpoint"},
                                   {"version", 1},
                                   {"dtype", dtype_name<T>()},
                                   {"byte_order", "little"},
                                   {"blob", name + ".bin"},
                                   {"config", encoder_config_to_json(config)},
                                   {"tensors", tensors}};
  std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(dir / (name + ".json"));
  js << manifest.dump(2) << '\n';
  if (!bin || !js) throw Error("failed to write checkpoint " + (dir / name).string());
}

template <class T>
struct LoadedModel {
  EncoderConfig config;
  ModelParams<T> params;
};

// Reads a manifest written by save_checkpoint. Values stored in the other
// precision are converted; same-precision loads are bit-exact.
template <class T>
LoadedModel<T> load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream js(manifest_path);
  if (!js) throw IngestionError("cannot open checkpoint manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "hrrformer-checkpoint") {
    throw IngestionError(manifest_path.string() + " is not a checkpoint manifest");
  }
  const std::string dtype = manifest.value("dtype", "");
  if (dtype != "f32" && dtype != "f64") throw IngestionError("checkpoint dtype '" + dtype + "' is not supported");
  const std::size_t width = dtype == "f32" ? 4 : 8;

  LoadedModel<T> out;
  out.config = encoder_config_from_json(manifest.at("config"));
  out.config.validate();
  Rng unused(0);
  out.params = ModelParams<T>::init(out.config, unused);

  const std::filesystem::path blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw IngestionError("missing checkpoint blob " + blob_path.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  auto named = out.params.named();
  const auto& entries = manifest.at("tensors");
  if (entries.size() != named.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(entries.size()) + " tensors, config expects " +
                         std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& e = entries[i];
    const std::string name = e.at("name").get<std::string>();
    if (name != named[i].first) throw DimensionError("checkpoint tensor '" + name + "' where '" + named[i].first + "' expected");
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != named[i].second->shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + to_string(shape) + ", config expects " +
                           to_string(named[i].second->shape()));
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t count = numel(shape);
    if (offset + count * width > blob.size()) throw IngestionError("checkpoint blob too short for '" + name + "'");
    Buffer<T> values(count);
    for (std::size_t k = 0; k < count; ++k) {
      const unsigned char* p = blob.data() + offset + k * width;
      values[k] = width == 4 ? static_cast<T>(detail::read_le<float>(p)) : static_cast<T>(detail::read_le<double>(p));
    }
    *named[i].second = Tensor<T>::parameter(Tensor<T>(shape, std::move(values)));
  }
  return out;
}

}  // namespace hrrformer
