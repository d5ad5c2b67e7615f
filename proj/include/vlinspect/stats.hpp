#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "analytics.hpp"
#include "dataset.hpp"
#include "features.hpp"
#include "forward.hpp"
#include "hash.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace vlinspect {

using BucketCounts = std::array<std::size_t, 4>;

// k distribution of one head over a corpus.
struct HeadDatasetStats {
  HeadId head;
  std::vector<double> k_values;  // one aggregate per processed instance
  std::map<std::string, BucketCounts> by_operation;
  std::size_t skipped = 0;
};

// Per-head statistics for every head, from one forward per instance.
struct DatasetStats {
  std::uint64_t model_hash = 0;
  std::uint64_t corpus_hash = 0;
  Agg agg = Agg::median;
  std::size_t processed = 0;
  std::size_t skipped = 0;  // instances without features
  std::vector<HeadDatasetStats> heads;

  const HeadDatasetStats& head(const HeadId& id) const {
    for (const auto& h : heads) {
      if (h.head == id) return h;
    }
    throw NotFound("no statistics for head " + id.name());
  }
};

inline DatasetStats compute_dataset_stats(const Model& model, const Vocab& vocab, const Corpus& corpus,
                                          const FeatureStore& features, Agg agg, const BucketThresholds& t = {}) {
  DatasetStats s;
  s.model_hash = model.hash();
  s.corpus_hash = corpus.hash;
  s.agg = agg;
  for (const auto& h : model.heads()) s.heads.push_back({h, {}, {}, 0});
  for (const auto& inst : corpus.instances) {
    if (!features.has(inst.image_id)) {
      ++s.skipped;
      continue;
    }
    auto vf = features.get(inst.image_id);
    const auto result = forward(tokenize(inst.question, vocab, model.config().max_len), *vf, model);
    for (std::size_t i = 0; i < result.maps.size(); ++i) {
      const auto ks = summarize_head(result.maps[i], agg, t);
      s.heads[i].k_values.push_back(ks.aggregate);
      ++s.heads[i].by_operation[inst.operation][static_cast<std::size_t>(ks.bucket)];
    }
    ++s.processed;
  }
  for (auto& h : s.heads) h.skipped = s.skipped;
  return s;
}

inline HeadDatasetStats head_dataset_stats(const HeadId& head, const Corpus& corpus, const Model& model,
                                           const Vocab& vocab, const FeatureStore& features, Agg agg) {
  if (!is_valid_head(model.config(), head)) throw NotFound("unknown head " + head.name());
  return compute_dataset_stats(model, vocab, corpus, features, agg).head(head);
}

// Structured-text cache file:
// {"format": "vlinspect-stats-v1", "model_hash", "corpus_hash", "agg",
//  "processed", "skipped",
//  "heads": {"lv_0_1": {"k": [...], "by_operation": {"verify": [b0,b1,b2,b3]}}}}
inline nlohmann::json stats_to_json(const DatasetStats& s) {
  nlohmann::json heads = nlohmann::json::object();
  for (const auto& h : s.heads) {
    nlohmann::json ops = nlohmann::json::object();
    for (const auto& [op, counts] : h.by_operation) ops[op] = counts;
    heads[h.head.name()] = {{"k", h.k_values}, {"by_operation", ops}};
  }
  return {{"format", "vlinspect-stats-v1"},
          {"model_hash", to_hex(s.model_hash)},
          {"corpus_hash", to_hex(s.corpus_hash)},
          {"agg", to_string(s.agg)},
          {"processed", s.processed},
          {"skipped", s.skipped},
          {"heads", heads}};
}

inline DatasetStats stats_from_json(const nlohmann::json& j, const std::vector<HeadId>& order) {
  if (j.value("format", "") != "vlinspect-stats-v1") throw ConfigError("not a statistics cache file");
  DatasetStats s;
  s.model_hash = parse_hex64(j.at("model_hash").get<std::string>());
  s.corpus_hash = parse_hex64(j.at("corpus_hash").get<std::string>());
  auto agg = parse_agg(j.at("agg").get<std::string>());
  if (!agg) throw ConfigError("statistics cache has unknown agg");
  s.agg = *agg;
  s.processed = j.at("processed").get<std::size_t>();
  s.skipped = j.at("skipped").get<std::size_t>();
  const auto& heads = j.at("heads");
  for (const auto& id : order) {
    if (!heads.contains(id.name())) throw ConfigError("statistics cache lacks head " + id.name());
    const auto& e = heads.at(id.name());
    HeadDatasetStats h{id, e.at("k").get<std::vector<double>>(), {}, s.skipped};
    for (const auto& [op, counts] : e.at("by_operation").items()) h.by_operation[op] = counts.get<BucketCounts>();
    s.heads.push_back(std::move(h));
  }
  return s;
}

// Build-once statistics keyed by (model hash, corpus hash, agg). Concurrent
// requests for the same key wait on a single build. With a directory set,
// results are persisted and reloaded across restarts.
class StatsCache {
 public:
  using Ptr = std::shared_ptr<const DatasetStats>;
  using Builder = std::function<DatasetStats()>;

  explicit StatsCache(std::string dir = {}) : dir_(std::move(dir)) {}

  std::string file_for(std::uint64_t model_hash, std::uint64_t corpus_hash, Agg agg) const {
    if (dir_.empty()) return {};
    return (std::filesystem::path(dir_) /
            ("stats_" + to_hex(model_hash) + "_" + to_hex(corpus_hash) + "_" + std::string(to_string(agg)) + ".json"))
        .string();
  }

  Ptr get(std::uint64_t model_hash, std::uint64_t corpus_hash, Agg agg, const std::vector<HeadId>& order,
          const Builder& build) {
    const std::string key = to_hex(model_hash) + to_hex(corpus_hash) + std::string(to_string(agg));
    std::shared_future<Ptr> fut;
    std::promise<Ptr> promise;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(key);
      if (it != entries_.end()) {
        fut = it->second;
      } else {
        fut = promise.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      }
    }
    if (!owner) return fut.get();

    try {
      Ptr result;
      const std::string path = file_for(model_hash, corpus_hash, agg);
      if (!path.empty() && std::filesystem::exists(path)) {
        try {
          auto loaded = stats_from_json(nlohmann::json::parse(read_file(path)), order);
          if (loaded.model_hash == model_hash && loaded.corpus_hash == corpus_hash && loaded.agg == agg) {
            result = std::make_shared<const DatasetStats>(std::move(loaded));
          }
        } catch (const std::exception&) {
          // unreadable cache file: rebuild below
        }
      }
      if (!result) {
        ++builds_;
        result = std::make_shared<const DatasetStats>(build());
        if (!path.empty()) {
          std::filesystem::create_directories(dir_);
          const std::string tmp = path + ".tmp";
          std::ofstream(tmp) << stats_to_json(*result).dump() << "\n";
          std::filesystem::rename(tmp, path);
        }
      }
      promise.set_value(result);
    } catch (...) {
      {
        std::lock_guard lock(mu_);
        entries_.erase(key);
      }
      promise.set_exception(std::current_exception());
    }
    return fut.get();
  }

  // Number of builds run by this instance (not loads from disk).
  std::size_t builds() const { return builds_.load(); }

 private:
  std::string dir_;
  std::mutex mu_;
  std::map<std::string, std::shared_future<Ptr>> entries_;
  std::atomic<std::size_t> builds_{0};
};

}  // namespace vlinspect
