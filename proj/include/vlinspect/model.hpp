#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"
#include "heads.hpp"
#include "math.hpp"

namespace vlinspect {

static_assert(std::endian::native == std::endian::little, "weight blobs are read as native little-endian floats");

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  std::uint64_t checksum() const { return fnv1a64(std::as_bytes(std::span(data))); }
};

using NamedTensors = std::map<std::string, Tensor>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// Every parameter the engine needs, with its expected shape. Names follow
// stream.layer.block.tensor, e.g. "cross.3.lv.q.weight".
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_specs(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  const std::size_t d = cfg.d;
  auto add = [&](std::string name, std::vector<std::size_t> shape) { out.emplace_back(std::move(name), std::move(shape)); };
  auto norm = [&](const std::string& p) {
    add(p + ".gain", {d});
    add(p + ".bias", {d});
  };
  auto attention = [&](const std::string& p) {
    for (const char* t : {"q", "k", "v", "o"}) {
      add(p + "." + t + ".weight", {d, d});
      add(p + "." + t + ".bias", {d});
    }
    norm(p + ".ln");
  };
  auto ffn = [&](const std::string& p) {
    add(p + ".up.weight", {cfg.ffn_dim, d});
    add(p + ".up.bias", {cfg.ffn_dim});
    add(p + ".down.weight", {d, cfg.ffn_dim});
    add(p + ".down.bias", {d});
    norm(p + ".ln");
  };

  add("embed.lang.token.weight", {cfg.token_vocab_size, d});
  add("embed.lang.pos.weight", {cfg.max_len, d});
  norm("embed.lang.ln");
  add("embed.vis.proj.weight", {d, cfg.visual_input_dim()});
  add("embed.vis.proj.bias", {d});
  norm("embed.vis.ln");
  for (std::size_t i = 0; i < cfg.n_lang; ++i) {
    attention("lang." + std::to_string(i) + ".self");
    ffn("lang." + std::to_string(i) + ".ffn");
  }
  for (std::size_t i = 0; i < cfg.n_vis; ++i) {
    attention("vis." + std::to_string(i) + ".self");
    ffn("vis." + std::to_string(i) + ".ffn");
  }
  for (std::size_t i = 0; i < cfg.n_cross; ++i) {
    const std::string p = "cross." + std::to_string(i);
    for (const char* k : {"lv", "vl", "ll", "vv"}) attention(p + "." + k);
    ffn(p + ".lang_ffn");
    ffn(p + ".vis_ffn");
  }
  add("answer.dense.weight", {d, d});
  add("answer.dense.bias", {d});
  norm("answer.ln");
  add("answer.out.weight", {cfg.answer_vocab_size, d});
  add("answer.out.bias", {cfg.answer_vocab_size});
  return out;
}

struct Linear {
  Matrix weight;  // out x in
  Vector bias;
};

struct Norm {
  Vector gain;
  Vector bias;
};

struct AttentionBlock {
  Linear q, k, v, o;
  Norm ln;
};

struct FfnBlock {
  Linear up, down;
  Norm ln;
};

struct StreamLayer {
  AttentionBlock self;
  FfnBlock ffn;
};

struct CrossLayer {
  AttentionBlock lv, vl, ll, vv;
  FfnBlock lang_ffn, vis_ffn;
};

struct ModelWeights {
  Matrix token_embedding;
  Matrix position_embedding;
  Norm lang_embed_ln;
  Linear vis_proj;
  Norm vis_embed_ln;
  std::vector<StreamLayer> lang;
  std::vector<StreamLayer> vis;
  std::vector<CrossLayer> cross;
  Linear answer_dense;
  Norm answer_ln;
  Linear answer_out;
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"heads", c.heads},
          {"n_lang", c.n_lang},
          {"n_vis", c.n_vis},
          {"n_cross", c.n_cross},
          {"ffn_dim", c.ffn_dim},
          {"answer_vocab_size", c.answer_vocab_size},
          {"token_vocab_size", c.token_vocab_size},
          {"max_len", c.max_len},
          {"max_objects", c.max_objects},
          {"feature_dim", c.feature_dim}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto field = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) throw ConfigError(std::string("model config is missing field '") + key + "'");
    if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("model config field '") + key + "' must be a non-negative integer");
    dst = j.at(key).get<std::size_t>();
  };
  field("d", c.d);
  field("heads", c.heads);
  field("n_lang", c.n_lang);
  field("n_vis", c.n_vis);
  field("n_cross", c.n_cross);
  field("ffn_dim", c.ffn_dim);
  field("answer_vocab_size", c.answer_vocab_size);
  field("token_vocab_size", c.token_vocab_size);
  field("max_len", c.max_len);
  field("max_objects", c.max_objects);
  if (j.contains("feature_dim")) field("feature_dim", c.feature_dim);
  c.validate();
  return c;
}

// Immutable once constructed; safe to share across concurrent forwards.
class Model {
 public:
  // Checks that every required tensor is present with the expected shape.
  static Model from_tensors(const ModelConfig& cfg, const NamedTensors& tensors) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Fnv1a64 h;
    h.update(config_to_json(cfg).dump());
    for (const auto& [name, shape] : parameter_specs(cfg)) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw ConfigError("missing tensor '" + name + "'");
      if (it->second.shape != shape) {
        throw ConfigError("tensor '" + name + "' has shape " + shape_string(it->second.shape) + ", expected " +
                          shape_string(shape));
      }
      if (it->second.data.size() != it->second.numel()) throw ConfigError("tensor '" + name + "' data length mismatch");
      h.update(name);
      h.update(it->second.checksum());
    }
    m.hash_ = h.digest();
    m.build(tensors);
    m.heads_ = enumerate_heads(cfg);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelWeights& weights() const { return w_; }
  const std::vector<HeadId>& heads() const { return heads_; }
  std::uint64_t hash() const { return hash_; }

 private:
  void build(const NamedTensors& t) {
    auto vec = [&](const std::string& n) { return t.at(n).data; };
    auto mat = [&](const std::string& n) {
      const auto& x = t.at(n);
      return Matrix(x.shape[0], x.shape[1], x.data);
    };
    auto lin = [&](const std::string& p) { return Linear{mat(p + ".weight"), vec(p + ".bias")}; };
    auto norm = [&](const std::string& p) { return Norm{vec(p + ".gain"), vec(p + ".bias")}; };
    auto attention = [&](const std::string& p) {
      return AttentionBlock{lin(p + ".q"), lin(p + ".k"), lin(p + ".v"), lin(p + ".o"), norm(p + ".ln")};
    };
    auto ffn = [&](const std::string& p) { return FfnBlock{lin(p + ".up"), lin(p + ".down"), norm(p + ".ln")}; };

    w_.token_embedding = mat("embed.lang.token.weight");
    w_.position_embedding = mat("embed.lang.pos.weight");
    w_.lang_embed_ln = norm("embed.lang.ln");
    w_.vis_proj = lin("embed.vis.proj");
    w_.vis_embed_ln = norm("embed.vis.ln");
    for (std::size_t i = 0; i < cfg_.n_lang; ++i) {
      const auto p = "lang." + std::to_string(i);
      w_.lang.push_back({attention(p + ".self"), ffn(p + ".ffn")});
    }
    for (std::size_t i = 0; i < cfg_.n_vis; ++i) {
      const auto p = "vis." + std::to_string(i);
      w_.vis.push_back({attention(p + ".self"), ffn(p + ".ffn")});
    }
    for (std::size_t i = 0; i < cfg_.n_cross; ++i) {
      const auto p = "cross." + std::to_string(i);
      w_.cross.push_back({attention(p + ".lv"), attention(p + ".vl"), attention(p + ".ll"), attention(p + ".vv"),
                          ffn(p + ".lang_ffn"), ffn(p + ".vis_ffn")});
    }
    w_.answer_dense = lin("answer.dense");
    w_.answer_ln = norm("answer.ln");
    w_.answer_out = lin("answer.out");
  }

  ModelConfig cfg_;
  ModelWeights w_;
  std::vector<HeadId> heads_;
  std::uint64_t hash_ = 0;
};

// Deterministic synthetic weights: uniform in +-scale/sqrt(fan_in) for
// matrices, zero biases, unit layer-norm gains.
inline NamedTensors random_weights(const ModelConfig& cfg, std::uint64_t seed, float scale = 1.0f) {
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
  NamedTensors out;
  for (const auto& [name, shape] : parameter_specs(cfg)) {
    Tensor t{shape, std::vector<float>(0)};
    t.data.resize(t.numel());
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias");
    if (is_gain) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (is_bias) {
      std::fill(t.data.begin(), t.data.end(), 0.0f);
    } else {
      const double fan_in = shape.size() == 2 ? static_cast<double>(shape[1]) : 1.0;
      const double bound = scale / std::sqrt(fan_in);
      // Embedding tables are looked up rather than multiplied.
      const double b = name.starts_with("embed.lang.") ? scale : bound;
      for (float& x : t.data) x = static_cast<float>(uniform() * b);
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

// Manifest: JSON metadata (format tag, config, blob file name, and one entry
// per tensor with name, shape, byte offset, FNV-1a 64 hash) plus a raw blob of
// little-endian float32 values.
inline void save_model(const std::string& manifest_path, const ModelConfig& cfg, const NamedTensors& tensors) {
  namespace fs = std::filesystem;
  const fs::path mp(manifest_path);
  const std::string blob_name = mp.stem().string() + ".bin";
  const fs::path blob_path = mp.parent_path() / blob_name;

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw ConfigError("cannot write '" + blob_path.string() + "'");
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, shape] : parameter_specs(cfg)) {
    const auto& t = tensors.at(name);
    blob.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    entries.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"hash", to_hex(t.checksum())}});
    offset += t.data.size() * sizeof(float);
  }
  if (!blob) throw ConfigError("write failed for '" + blob_path.string() + "'");

  nlohmann::json manifest = {
      {"format", "vlinspect-weights-v1"}, {"config", config_to_json(cfg)}, {"blob", blob_name}, {"tensors", entries}};
  std::ofstream out(mp);
  if (!out) throw ConfigError("cannot write '" + manifest_path + "'");
  out << manifest.dump(1) << "\n";
}

struct LoadedWeights {
  ModelConfig config;
  NamedTensors tensors;
};

inline LoadedWeights load_weights(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest '" + manifest_path + "' is not valid JSON: " + e.what());
  }
  if (!manifest.contains("config") || !manifest.contains("blob") || !manifest.contains("tensors")) {
    throw ConfigError("manifest '" + manifest_path + "' needs config, blob and tensors");
  }
  LoadedWeights lw;
  lw.config = config_from_json(manifest.at("config"));
  const fs::path blob_path = fs::path(manifest_path).parent_path() / manifest.at("blob").get<std::string>();
  const std::string blob = read_file(blob_path.string());

  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    Tensor t;
    t.shape = e.at("shape").get<std::vector<std::size_t>>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const std::size_t bytes = t.numel() * sizeof(float);
    if (offset + bytes > blob.size()) throw ConfigError("tensor '" + name + "' extends past the end of the blob");
    t.data.resize(t.numel());
    std::memcpy(t.data.data(), blob.data() + offset, bytes);
    const auto expected = parse_hex64(e.at("hash").get<std::string>());
    if (t.checksum() != expected) {
      throw IntegrityError("tensor '" + name + "' checksum " + to_hex(t.checksum()) + " != manifest " + to_hex(expected));
    }
    if (!lw.tensors.emplace(name, std::move(t)).second) throw ConfigError("duplicate tensor '" + name + "' in manifest");
  }
  return lw;
}

inline Model load_model(const std::string& manifest_path) {
  auto lw = load_weights(manifest_path);
  return Model::from_tensors(lw.config, lw.tensors);
}

}  // namespace vlinspect
