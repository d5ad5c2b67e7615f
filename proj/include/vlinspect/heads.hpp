#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace vlinspect {

struct ModelConfig {
  std::size_t d = 128;
  std::size_t heads = 4;
  std::size_t n_lang = 9;
  std::size_t n_vis = 5;
  std::size_t n_cross = 5;
  std::size_t ffn_dim = 512;
  std::size_t answer_vocab_size = 1842;
  std::size_t token_vocab_size = 30522;
  std::size_t max_len = 32;
  std::size_t max_objects = 36;
  std::size_t feature_dim = 2048;

  std::size_t head_dim() const { return d / heads; }
  std::size_t visual_input_dim() const { return feature_dim + 4; }

  void validate() const {
    if (d == 0 || heads == 0) throw ConfigError("model config: d and heads must be positive");
    if (d % heads != 0) {
      throw ConfigError("model config: d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(heads));
    }
    if (ffn_dim == 0) throw ConfigError("model config: ffn_dim must be positive");
    if (answer_vocab_size == 0) throw ConfigError("model config: answer_vocab_size must be positive");
    if (token_vocab_size == 0) throw ConfigError("model config: token_vocab_size must be positive");
    if (max_len < 2) throw ConfigError("model config: max_len must be at least 2");
    if (max_objects == 0) throw ConfigError("model config: max_objects must be positive");
    if (feature_dim == 0) throw ConfigError("model config: feature_dim must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

// lang/vis: intra-modality stream layers. Inside each cross layer: lv (object
// queries over words), vl (word queries over objects), then ll and vv.
enum class HeadKind { lang, vis, lv, vl, ll, vv };

inline constexpr std::array<HeadKind, 6> kAllHeadKinds = {HeadKind::lang, HeadKind::vis, HeadKind::lv,
                                                          HeadKind::vl,   HeadKind::ll,  HeadKind::vv};

inline std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::lang: return "lang";
    case HeadKind::vis: return "vis";
    case HeadKind::lv: return "lv";
    case HeadKind::vl: return "vl";
    case HeadKind::ll: return "ll";
    case HeadKind::vv: return "vv";
  }
  return "?";
}

inline std::optional<HeadKind> parse_head_kind(std::string_view s) {
  for (HeadKind k : kAllHeadKinds) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

enum class Modality { word, object };

inline std::string_view to_string(Modality m) { return m == Modality::word ? "word" : "object"; }

// Which modality indexes the rows / columns of a head's map.
inline Modality row_modality(HeadKind k) {
  switch (k) {
    case HeadKind::lang:
    case HeadKind::ll:
    case HeadKind::vl: return Modality::word;
    default: return Modality::object;
  }
}

inline Modality col_modality(HeadKind k) {
  switch (k) {
    case HeadKind::lang:
    case HeadKind::ll:
    case HeadKind::lv: return Modality::word;
    default: return Modality::object;
  }
}

struct HeadId {
  HeadKind kind = HeadKind::lang;
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadId&) const = default;

  std::string name() const {
    return std::string(to_string(kind)) + "_" + std::to_string(layer) + "_" + std::to_string(head);
  }
};

// Parses names of the form kind_layer_head, e.g. "lv_0_1".
inline std::optional<HeadId> parse_head_id(std::string_view s) {
  const auto p1 = s.find('_');
  if (p1 == std::string_view::npos) return std::nullopt;
  const auto p2 = s.find('_', p1 + 1);
  if (p2 == std::string_view::npos || s.find('_', p2 + 1) != std::string_view::npos) return std::nullopt;
  auto kind = parse_head_kind(s.substr(0, p1));
  if (!kind) return std::nullopt;
  auto parse_index = [](std::string_view t) -> std::optional<std::size_t> {
    if (t.empty() || t.size() > 6) return std::nullopt;
    std::size_t v = 0;
    for (char c : t) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
  };
  auto layer = parse_index(s.substr(p1 + 1, p2 - p1 - 1));
  auto head = parse_index(s.substr(p2 + 1));
  if (!layer || !head) return std::nullopt;
  return HeadId{*kind, *layer, *head};
}

inline std::size_t layer_count(const ModelConfig& cfg, HeadKind k) {
  switch (k) {
    case HeadKind::lang: return cfg.n_lang;
    case HeadKind::vis: return cfg.n_vis;
    default: return cfg.n_cross;
  }
}

inline bool is_valid_head(const ModelConfig& cfg, const HeadId& id) {
  return id.layer < layer_count(cfg, id.kind) && id.head < cfg.heads;
}

// Language layers first, then vision layers, then for each cross layer the
// lv, vl, ll, vv heads. Within a layer heads are ordered by index.
inline std::vector<HeadId> enumerate_heads(const ModelConfig& cfg) {
  std::vector<HeadId> out;
  out.reserve((cfg.n_lang + cfg.n_vis + 4 * cfg.n_cross) * cfg.heads);
  for (std::size_t i = 0; i < cfg.n_lang; ++i)
    for (std::size_t j = 0; j < cfg.heads; ++j) out.push_back({HeadKind::lang, i, j});
  for (std::size_t i = 0; i < cfg.n_vis; ++i)
    for (std::size_t j = 0; j < cfg.heads; ++j) out.push_back({HeadKind::vis, i, j});
  for (std::size_t i = 0; i < cfg.n_cross; ++i)
    for (HeadKind k : {HeadKind::lv, HeadKind::vl, HeadKind::ll, HeadKind::vv})
      for (std::size_t j = 0; j < cfg.heads; ++j) out.push_back({k, i, j});
  return out;
}

}  // namespace vlinspect
