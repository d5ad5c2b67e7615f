#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "error.hpp"
#include "features.hpp"
#include "heads.hpp"
#include "math.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace vlinspect {

// One head's attention on one instance. Rows are queries, columns keys.
struct AttentionMap {
  HeadId head;
  Matrix cells;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;

  std::size_t rows() const { return cells.rows; }
  std::size_t cols() const { return cells.cols; }
};

// Heads forced to uniform attention. Empty means an unmodified forward.
struct PruneConfig {
  std::set<HeadId> heads;

  bool contains(const HeadId& h) const { return heads.count(h) != 0; }
  bool empty() const { return heads.empty(); }
};

struct RankedAnswer {
  std::size_t index = 0;
  float probability = 0.0f;
};

struct AnswerDistribution {
  Vector logits;
  Vector scores;  // softmax(logits)
  std::vector<RankedAnswer> top5;
};

struct ForwardResult {
  AnswerDistribution answer;
  std::vector<AttentionMap> maps;  // in enumerate_heads order
  std::vector<std::string> words;
  std::vector<std::string> objects;

  const AttentionMap& map(const HeadId& h) const {
    auto it = std::find_if(maps.begin(), maps.end(), [&](const AttentionMap& m) { return m.head == h; });
    if (it == maps.end()) throw NotFound("no attention map for head " + h.name());
    return *it;
  }
  const AttentionMap* find(const HeadId& h) const {
    auto it = std::find_if(maps.begin(), maps.end(), [&](const AttentionMap& m) { return m.head == h; });
    return it == maps.end() ? nullptr : &*it;
  }
};

// Top entries by probability, ties broken by lower index.
inline std::vector<RankedAnswer> top_k(const Vector& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<RankedAnswer> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], scores[idx[i]]});
  return out;
}

inline Matrix embed_language(const TokenSequence& seq, const Model& m) {
  const auto& cfg = m.config();
  const auto& w = m.weights();
  if (seq.ids.size() > cfg.max_len) {
    throw InvalidArgument("sequence of " + std::to_string(seq.ids.size()) + " tokens exceeds max_len " +
                          std::to_string(cfg.max_len));
  }
  Matrix out(seq.ids.size(), cfg.d);
  Vector tmp(cfg.d);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.token_vocab_size) {
      throw InvalidArgument("token id " + std::to_string(id) + " out of range");
    }
    auto tok = w.token_embedding.row(static_cast<std::size_t>(id));
    auto pos = w.position_embedding.row(i);
    for (std::size_t c = 0; c < cfg.d; ++c) tmp[c] = tok[c] + pos[c];
    auto n = layer_norm(tmp, w.lang_embed_ln.gain, w.lang_embed_ln.bias);
    std::copy(n.begin(), n.end(), out.row(i).begin());
  }
  return out;
}

// Each object is [appearance ; box] projected to d by one learned linear map,
// then layer-normalized.
inline Matrix embed_vision(const VisualFeatureSet& vf, const Model& m) {
  const auto& cfg = m.config();
  Matrix input(vf.objects.size(), cfg.visual_input_dim());
  for (std::size_t k = 0; k < vf.objects.size(); ++k) {
    const auto& o = vf.objects[k];
    if (o.appearance.size() != cfg.feature_dim) {
      throw InvalidArgument("object appearance has " + std::to_string(o.appearance.size()) + " values, expected " +
                            std::to_string(cfg.feature_dim));
    }
    auto r = input.row(k);
    std::copy(o.appearance.begin(), o.appearance.end(), r.begin());
    std::copy(o.box.begin(), o.box.end(), r.begin() + static_cast<std::ptrdiff_t>(cfg.feature_dim));
  }
  const auto& w = m.weights();
  Matrix out = linear(input, w.vis_proj.weight, w.vis_proj.bias);
  layer_norm_rows(out, w.vis_embed_ln.gain, w.vis_embed_ln.bias);
  return out;
}

inline AnswerDistribution predict_answer(std::span<const float> cls, const Model& m) {
  const auto& cfg = m.config();
  const auto& w = m.weights();
  if (cls.size() != cfg.d) throw InvalidArgument("predict_answer: CLS vector has wrong dimension");
  Matrix x(1, cfg.d, Vector(cls.begin(), cls.end()));
  Matrix h = linear(x, w.answer_dense.weight, w.answer_dense.bias);
  gelu_inplace(h);
  layer_norm_rows(h, w.answer_ln.gain, w.answer_ln.bias);
  Matrix logits = linear(h, w.answer_out.weight, w.answer_out.bias);
  AnswerDistribution dist;
  dist.logits = logits.data;
  dist.scores = softmax_rows(logits).data;
  dist.top5 = top_k(dist.scores, 5);
  return dist;
}

namespace detail {

struct Capture {
  const PruneConfig& prune;
  std::vector<AttentionMap>& maps;
  const std::vector<std::string>& words;
  const std::vector<std::string>& objects;
};

inline Matrix columns(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(m.rows, count);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::copy_n(m.row(r).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(r).begin());
  }
  return out;
}

// Multi-head attention of `queries` over `context`, then residual + norm.
inline Matrix attention_sublayer(const Matrix& queries, const Matrix& context, const AttentionBlock& blk, HeadKind kind,
                                 std::size_t layer, std::size_t n_heads, Capture& cap) {
  const std::size_t d = queries.cols;
  const std::size_t dh = d / n_heads;
  const Matrix q = linear(queries, blk.q.weight, blk.q.bias);
  const Matrix k = linear(context, blk.k.weight, blk.k.bias);
  const Matrix v = linear(context, blk.v.weight, blk.v.bias);
  Matrix concat(queries.rows, d);
  const auto& row_labels = row_modality(kind) == Modality::word ? cap.words : cap.objects;
  const auto& col_labels = col_modality(kind) == Modality::word ? cap.words : cap.objects;
  for (std::size_t j = 0; j < n_heads; ++j) {
    const HeadId id{kind, layer, j};
    auto res = scaled_dot_attention(columns(q, j * dh, dh), columns(k, j * dh, dh), columns(v, j * dh, dh),
                                    cap.prune.contains(id));
    for (std::size_t r = 0; r < concat.rows; ++r) {
      std::copy_n(res.output.row(r).begin(), dh, concat.row(r).begin() + static_cast<std::ptrdiff_t>(j * dh));
    }
    cap.maps.push_back({id, std::move(res.map), row_labels, col_labels});
  }
  Matrix out = linear(concat, blk.o.weight, blk.o.bias);
  add_inplace(out, queries);
  layer_norm_rows(out, blk.ln.gain, blk.ln.bias);
  return out;
}

inline Matrix ffn_sublayer(const Matrix& x, const FfnBlock& blk) {
  Matrix h = linear(x, blk.up.weight, blk.up.bias);
  gelu_inplace(h);
  Matrix out = linear(h, blk.down.weight, blk.down.bias);
  add_inplace(out, x);
  layer_norm_rows(out, blk.ln.gain, blk.ln.bias);
  return out;
}

}  // namespace detail

// Full two-stream forward with attention capture. Never mutates the model.
inline ForwardResult forward(const TokenSequence& seq, const VisualFeatureSet& vf, const Model& m,
                             const PruneConfig& prune = {}) {
  const auto& cfg = m.config();
  const auto& w = m.weights();
  if (seq.ids.empty()) throw InvalidArgument("forward: empty token sequence");
  validate_features(vf, cfg);
  for (const auto& h : prune.heads) {
    if (!is_valid_head(cfg, h)) throw InvalidArgument("prune: head " + h.name() + " does not exist in this model");
  }

  ForwardResult res;
  res.words = seq.tokens;
  for (const auto& o : vf.objects) res.objects.push_back(o.label);
  res.maps.reserve(m.heads().size());
  detail::Capture cap{prune, res.maps, res.words, res.objects};

  Matrix lang = embed_language(seq, m);
  Matrix vis = embed_vision(vf, m);
  for (std::size_t i = 0; i < cfg.n_lang; ++i) {
    lang = detail::attention_sublayer(lang, lang, w.lang[i].self, HeadKind::lang, i, cfg.heads, cap);
    lang = detail::ffn_sublayer(lang, w.lang[i].ffn);
  }
  for (std::size_t i = 0; i < cfg.n_vis; ++i) {
    vis = detail::attention_sublayer(vis, vis, w.vis[i].self, HeadKind::vis, i, cfg.heads, cap);
    vis = detail::ffn_sublayer(vis, w.vis[i].ffn);
  }
  for (std::size_t i = 0; i < cfg.n_cross; ++i) {
    const auto& layer = w.cross[i];
    // Both cross-attention directions read the layer's inputs.
    Matrix vis_x = detail::attention_sublayer(vis, lang, layer.lv, HeadKind::lv, i, cfg.heads, cap);
    Matrix lang_x = detail::attention_sublayer(lang, vis, layer.vl, HeadKind::vl, i, cfg.heads, cap);
    lang_x = detail::attention_sublayer(lang_x, lang_x, layer.ll, HeadKind::ll, i, cfg.heads, cap);
    vis_x = detail::attention_sublayer(vis_x, vis_x, layer.vv, HeadKind::vv, i, cfg.heads, cap);
    lang = detail::ffn_sublayer(lang_x, layer.lang_ffn);
    vis = detail::ffn_sublayer(vis_x, layer.vis_ffn);
  }
  res.answer = predict_answer(lang.row(0), m);
  return res;
}

}  // namespace vlinspect
