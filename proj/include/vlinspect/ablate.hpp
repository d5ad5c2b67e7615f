#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "analytics.hpp"
#include "dataset.hpp"
#include "features.hpp"
#include "forward.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace vlinspect {

// Which heads to prune: a fixed list, or every head whose k bucket on the
// unpruned forward of each instance equals `bucket`.
struct PruneSelector {
  PruneConfig fixed;
  std::optional<int> bucket;

  bool empty() const { return fixed.empty() && !bucket; }
};

// Accepts "" (nothing), "all", "bucket:N" or a comma-separated head list.
inline PruneSelector parse_prune_selector(const std::string& text, const ModelConfig& cfg) {
  PruneSelector sel;
  if (text.empty()) return sel;
  if (text == "all") {
    for (const auto& h : enumerate_heads(cfg)) sel.fixed.heads.insert(h);
    return sel;
  }
  if (text.rfind("bucket:", 0) == 0) {
    const std::string n = text.substr(7);
    if (n.size() != 1 || n[0] < '0' || n[0] > '3') throw InvalidArgument("bucket selector must be bucket:0 .. bucket:3");
    sel.bucket = n[0] - '0';
    return sel;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string name = text.substr(start, end - start);
    if (!name.empty()) {
      auto id = parse_head_id(name);
      if (!id || !is_valid_head(cfg, *id)) throw InvalidArgument("unknown head '" + name + "'");
      sel.fixed.heads.insert(*id);
    }
    start = end + 1;
  }
  return sel;
}

struct AccuracyRow {
  std::string operation;
  std::size_t n = 0;
  std::size_t correct_before = 0;
  std::size_t correct_after = 0;

  double before() const { return n ? static_cast<double>(correct_before) / static_cast<double>(n) : 0.0; }
  double after() const { return n ? static_cast<double>(correct_after) / static_cast<double>(n) : 0.0; }
  double delta() const { return after() - before(); }
};

struct AblationReport {
  std::vector<AccuracyRow> by_operation;  // sorted by operation name
  AccuracyRow overall{"all"};
  std::size_t skipped = 0;  // instances without features
  std::size_t pruned_heads_total = 0;
};

inline std::string top_answer(const ForwardResult& r, const AnswerVocab& answers) {
  return answers.at(r.answer.top5.front().index);
}

// Accuracy of the top-1 prediction per question operation, without and with
// pruning.
inline AblationReport run_ablation(const Model& model, const Vocab& vocab, const AnswerVocab& answers,
                                   const Corpus& corpus, const FeatureStore& features, const PruneSelector& sel,
                                   Agg agg = Agg::median, const BucketThresholds& t = {}) {
  if (answers.size() != model.config().answer_vocab_size) {
    throw ConfigError("answer vocabulary size does not match the model");
  }
  std::map<std::string, AccuracyRow> rows;
  AblationReport rep;
  for (const auto& inst : corpus.instances) {
    if (!features.has(inst.image_id)) {
      ++rep.skipped;
      continue;
    }
    const auto vf = features.get(inst.image_id);
    const auto seq = tokenize(inst.question, vocab, model.config().max_len);
    const auto base = forward(seq, *vf, model);
    PruneConfig prune = sel.fixed;
    if (sel.bucket) {
      for (const auto& m : base.maps) {
        if (summarize_head(m, agg, t).bucket == *sel.bucket) prune.heads.insert(m.head);
      }
    }
    const auto pruned = forward(seq, *vf, model, prune);
    rep.pruned_heads_total += prune.heads.size();
    auto& row = rows[inst.operation];
    row.operation = inst.operation;
    const bool before = top_answer(base, answers) == inst.gt_answer;
    const bool after = top_answer(pruned, answers) == inst.gt_answer;
    for (AccuracyRow* r : {&row, &rep.overall}) {
      ++r->n;
      r->correct_before += before;
      r->correct_after += after;
    }
  }
  for (auto& [op, row] : rows) rep.by_operation.push_back(row);
  return rep;
}

}  // namespace vlinspect
