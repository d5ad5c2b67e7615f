#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "analytics.hpp"
#include "dataset.hpp"
#include "features.hpp"
#include "forward.hpp"
#include "hash.hpp"
#include "model.hpp"
#include "stats.hpp"
#include "tokenizer.hpp"

namespace vlinspect {

using nlohmann::json;

inline constexpr std::size_t kMaxSnapshotsPerSession = 16;

// A frozen forward result with its k summaries.
struct Snapshot {
  std::string id;
  std::string image_id;
  std::string question;
  std::string instance_id;  // empty for free-form questions
  PruneConfig prune;
  Agg agg = Agg::median;
  ForwardResult result;
  std::vector<KSummary> summaries;
  std::string created_at;
};

struct ServiceOptions {
  BucketThresholds thresholds;
  Agg default_agg = Agg::median;
  double default_filter_threshold = kDefaultFilterThreshold;
  std::size_t max_snapshots = kMaxSnapshotsPerSession;
  std::string stats_dir;  // empty: statistics are kept in memory only
};

// Everything the service reads. Shared and immutable while serving.
struct ServiceAssets {
  std::shared_ptr<const Model> model;
  std::shared_ptr<const Vocab> vocab;
  std::shared_ptr<const AnswerVocab> answers;
  std::shared_ptr<const Corpus> corpus;  // null: corpus not loaded
  std::shared_ptr<const FeatureStore> features;
};

inline HeadId parse_head_or_throw(const std::string& name) {
  auto id = parse_head_id(name);
  if (!id) throw NotFound("unknown head '" + name + "'");
  return *id;
}

// Transport-independent request handlers. Each returns the JSON response body
// or throws InvalidArgument / NotFound / Conflict / Unavailable.
class Service {
 public:
  Service(ServiceAssets assets, ServiceOptions opts = {})
      : a_(std::move(assets)), opts_(std::move(opts)), stats_(opts_.stats_dir) {
    if (!a_.model || !a_.vocab || !a_.answers || !a_.features) throw ConfigError("service needs model, vocab, answers and features");
    const auto& cfg = a_.model->config();
    if (a_.answers->size() != cfg.answer_vocab_size) {
      throw ConfigError("answer vocabulary has " + std::to_string(a_.answers->size()) + " entries, model expects " +
                        std::to_string(cfg.answer_vocab_size));
    }
    if (a_.vocab->size() > cfg.token_vocab_size) {
      throw ConfigError("token vocabulary has " + std::to_string(a_.vocab->size()) + " entries, model table has " +
                        std::to_string(cfg.token_vocab_size));
    }
    if (a_.corpus) tables_ = answer_frequencies(*a_.corpus);
  }

  const Model& model() const { return *a_.model; }
  const ServiceOptions& options() const { return opts_; }
  std::size_t stats_builds() const { return stats_.builds(); }

  std::string model_hash() const { return to_hex(a_.model->hash()); }
  std::string corpus_hash() const { return a_.corpus ? to_hex(a_.corpus->hash) : std::string(); }

  // GET /instances
  json instances() const {
    if (!a_.corpus) throw Unavailable("corpus not loaded");
    std::map<std::string, std::vector<const Instance*>> by_image;
    for (const auto& i : a_.corpus->instances) by_image[i.image_id].push_back(&i);
    json images = json::array();
    for (const auto& s : rank_images(*a_.corpus, tables_)) {
      json qs = json::array();
      for (const Instance* i : by_image[s.image_id]) {
        qs.push_back({{"question_id", i->question_id},
                      {"question", i->question},
                      {"answer", i->gt_answer},
                      {"operation", i->operation},
                      {"topic", i->topic},
                      {"class", to_string(classify_question(*i, tables_))}});
      }
      images.push_back({{"image_id", s.image_id},
                        {"score", s.score},
                        {"n_head", s.n_head},
                        {"n_tail", s.n_tail},
                        {"has_features", a_.features->has(s.image_id)},
                        {"questions", qs}});
    }
    return stamp({{"images", images}});
  }

  // POST /ask
  json ask(const json& req) {
    const auto t0 = std::chrono::steady_clock::now();
    auto session = session_for(req);
    const bool has_q = req.contains("question") && !req.at("question").is_null();
    const bool has_i = req.contains("instance_id") && !req.at("instance_id").is_null();
    if (has_q == has_i) throw InvalidArgument("ask: give exactly one of question or instance_id");

    const Instance* inst = nullptr;
    std::string question;
    std::string image_id = req.contains("image_id") ? string_field(req, "image_id") : std::string();
    if (has_i) {
      if (!a_.corpus) throw Unavailable("corpus not loaded");
      const auto iid = string_field(req, "instance_id");
      inst = a_.corpus->find(iid);
      if (!inst) throw NotFound("unknown instance '" + iid + "'");
      if (!image_id.empty() && image_id != inst->image_id) {
        throw InvalidArgument("instance '" + iid + "' belongs to image '" + inst->image_id + "', not '" + image_id + "'");
      }
      image_id = inst->image_id;
      question = inst->question;
    } else {
      question = string_field(req, "question");
      if (question.find_first_not_of(" \t\r\n") == std::string::npos) throw InvalidArgument("ask: empty question");
    }
    if (image_id.empty()) throw InvalidArgument("ask: image_id is required");
    if (!a_.features->has(image_id)) throw NotFound("unknown image '" + image_id + "'");

    std::lock_guard lock(session->mu);
    if (req.contains("prune")) session->prune = parse_prune(req.at("prune"));
    if (req.contains("agg")) session->agg = parse_agg_field(req.at("agg"));

    auto vf = a_.features->get(image_id);
    auto snap = std::make_shared<Snapshot>();
    snap->image_id = image_id;
    snap->question = question;
    snap->instance_id = inst ? inst->question_id : std::string();
    snap->prune = session->prune;
    snap->agg = session->agg;
    snap->result = forward(tokenize(question, *a_.vocab, a_.model->config().max_len), *vf, *a_.model, session->prune);
    snap->summaries = summarize_all(snap->result, session->agg, opts_.thresholds);
    snap->id = "s" + std::to_string(++session->next_snapshot);
    snap->created_at = now_iso8601();
    session->current = snap;
    session->remember(snap, opts_.max_snapshots);

    json top5 = json::array();
    for (const auto& r : snap->result.answer.top5) {
      top5.push_back({{"answer", a_.answers->at(r.index)}, {"index", r.index}, {"probability", r.probability}});
    }
    json summaries = json::array();
    for (std::size_t i = 0; i < snap->summaries.size(); ++i) {
      const auto& s = snap->summaries[i];
      const auto& m = snap->result.maps[i];
      summaries.push_back({{"head", s.head.name()},
                           {"kind", to_string(s.head.kind)},
                           {"layer", s.head.layer},
                           {"index", s.head.head},
                           {"k", s.aggregate},
                           {"bucket", s.bucket},
                           {"rows", m.rows()},
                           {"cols", m.cols()},
                           {"pruned", snap->prune.contains(s.head)}});
    }
    json body = {{"session", session->id},
                 {"snapshot_id", snap->id},
                 {"image_id", image_id},
                 {"question", question},
                 {"tokens", snap->result.words},
                 {"objects", snap->result.objects},
                 {"agg", to_string(snap->agg)},
                 {"prune", prune_names(snap->prune)},
                 {"top5", top5},
                 {"head_summaries", summaries}};
    if (inst) body["answer_frequencies"] = frequency_context(*inst, a_.answers->at(snap->result.answer.top5.front().index));
    body["elapsed_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stamp(std::move(body));
  }

  // GET /head/{id}/map?session=
  json head_map(const std::string& head_name, const std::string& session_id) {
    const HeadId id = parse_head_or_throw(head_name);
    if (!is_valid_head(a_.model->config(), id)) throw NotFound("unknown head '" + head_name + "'");
    auto snap = current_of(session_id);
    const auto& m = snap->result.map(id);
    const auto s = summarize_head(m, snap->agg, opts_.thresholds);
    return stamp({{"head", id.name()},
                  {"session", session_id},
                  {"snapshot_id", snap->id},
                  {"rows", m.rows()},
                  {"cols", m.cols()},
                  {"cells", m.cells.data},
                  {"row_labels", m.row_labels},
                  {"col_labels", m.col_labels},
                  {"row_modality", to_string(row_modality(id.kind))},
                  {"col_modality", to_string(col_modality(id.kind))},
                  {"per_row_k", s.per_row_k},
                  {"k", s.aggregate},
                  {"bucket", s.bucket},
                  {"agg", to_string(s.agg)},
                  {"pruned", snap->prune.contains(id)}});
  }

  // GET /head/{id}/stats[?session=&agg=]
  json head_stats(const std::string& head_name, const std::string& session_id = {}, const std::string& agg_name = {}) {
    const HeadId id = parse_head_or_throw(head_name);
    if (!is_valid_head(a_.model->config(), id)) throw NotFound("unknown head '" + head_name + "'");
    if (!a_.corpus) throw Unavailable("corpus not loaded");
    Agg agg = opts_.default_agg;
    std::shared_ptr<const Snapshot> current;
    if (!session_id.empty()) {
      if (auto s = find_session(session_id)) {
        std::lock_guard lock(s->mu);
        agg = s->agg;
        current = s->current;
      }
    }
    if (!agg_name.empty()) {
      auto a = parse_agg(agg_name);
      if (!a) throw InvalidArgument("unknown agg '" + agg_name + "'");
      agg = *a;
    }
    const auto stats = dataset_stats(agg);
    const auto& h = stats->head(id);
    json ops = json::object();
    for (const auto& [op, counts] : h.by_operation) ops[op] = counts;
    json body = {{"head", id.name()},     {"agg", to_string(agg)},     {"k_values", h.k_values},
                 {"by_operation", ops},   {"processed", stats->processed}, {"skipped", stats->skipped}};
    if (current) {
      const auto ks = summarize_head(current->result.map(id), agg, opts_.thresholds);
      body["current_k"] = ks.aggregate;
      body["current_bucket"] = ks.bucket;
    } else {
      body["current_k"] = nullptr;
    }
    return stamp(std::move(body));
  }

  // POST /filter
  json filter(const json& req) {
    auto session = session_for(req, /*create=*/false);
    std::shared_ptr<const Snapshot> snap;
    Agg agg;
    {
      std::lock_guard lock(session->mu);
      snap = session->current;
      agg = session->agg;
    }
    if (!snap) throw Conflict("session '" + session->id + "' has no forward result yet");
    if (!req.contains("selection") || !req.at("selection").is_object()) throw InvalidArgument("filter: selection object required");
    const auto& js = req.at("selection");
    Selection sel;
    sel.reference = parse_head_or_throw(string_field(js, "head"));
    auto kind = parse_selection_kind(string_field(js, "kind"));
    if (!kind) throw InvalidArgument("filter: selection kind must be cell, row or col");
    sel.kind = *kind;
    if (sel.kind != SelectionKind::col) sel.row = index_field(js, "row");
    if (sel.kind != SelectionKind::row) sel.col = index_field(js, "col");
    double threshold = opts_.default_filter_threshold;
    if (req.contains("threshold")) {
      if (!req.at("threshold").is_number()) throw InvalidArgument("filter: threshold must be a number");
      threshold = req.at("threshold").get<double>();
    }
    if (req.contains("agg")) agg = parse_agg_field(req.at("agg"));

    const auto matches = filter_heads(snap->result, sel, threshold, agg);
    json out = json::array();
    for (const auto& m : matches) out.push_back({{"head", m.head.name()}, {"value", m.value}});
    return stamp({{"session", session->id},
                  {"snapshot_id", snap->id},
                  {"threshold", threshold},
                  {"agg", to_string(agg)},
                  {"total_heads", snap->result.maps.size()},
                  {"matches", out}});
  }

  // POST /compare
  json compare(const json& req) {
    auto session = session_for(req, /*create=*/false);
    const auto ref_id = string_field(req, "snapshot_id");
    std::shared_ptr<const Snapshot> cur, ref;
    {
      std::lock_guard lock(session->mu);
      cur = session->current;
      ref = session->lookup(ref_id);
    }
    if (!ref) throw NotFound("unknown snapshot '" + ref_id + "'");
    if (!cur) throw Conflict("session '" + session->id + "' has no forward result yet");
    // Both sides summarized under the current aggregation.
    const auto ref_k = ref->agg == cur->agg ? ref->summaries : summarize_all(ref->result, cur->agg, opts_.thresholds);
    const auto diff = diff_snapshots(cur->result, cur->summaries, ref->result, ref_k);
    json heads = json::array();
    for (const auto& [id, cells] : diff.cell_delta) {
      heads.push_back({{"head", id.name()},
                       {"k_delta", diff.k_delta.at(id)},
                       {"rows", cells.rows},
                       {"cols", cells.cols},
                       {"cells", cells.data}});
    }
    json excluded = json::array();
    for (const auto& id : diff.excluded) excluded.push_back(id.name());
    return stamp({{"session", session->id},
                  {"current_snapshot", cur->id},
                  {"reference_snapshot", ref->id},
                  {"agg", to_string(cur->agg)},
                  {"heads", heads},
                  {"excluded", excluded}});
  }

  std::shared_ptr<const DatasetStats> dataset_stats(Agg agg) {
    if (!a_.corpus) throw Unavailable("corpus not loaded");
    return stats_.get(a_.model->hash(), a_.corpus->hash, agg, a_.model->heads(), [&] {
      return compute_dataset_stats(*a_.model, *a_.vocab, *a_.corpus, *a_.features, agg, opts_.thresholds);
    });
  }

 private:
  struct Session {
    std::string id;
    std::mutex mu;
    PruneConfig prune;
    Agg agg = Agg::median;
    std::shared_ptr<const Snapshot> current;
    std::list<std::shared_ptr<const Snapshot>> snapshots;  // most recently used first
    std::size_t next_snapshot = 0;

    void remember(std::shared_ptr<const Snapshot> s, std::size_t cap) {
      snapshots.push_front(std::move(s));
      while (snapshots.size() > cap) snapshots.pop_back();
    }
    std::shared_ptr<const Snapshot> lookup(const std::string& sid) {
      for (auto it = snapshots.begin(); it != snapshots.end(); ++it) {
        if ((*it)->id == sid) {
          snapshots.splice(snapshots.begin(), snapshots, it);
          return snapshots.front();
        }
      }
      return nullptr;
    }
  };

  json stamp(json body) const {
    body["model_hash"] = model_hash();
    body["corpus_hash"] = corpus_hash();
    return body;
  }

  static std::string string_field(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) throw InvalidArgument(std::string("field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  }

  static std::size_t index_field(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer() || j.at(key).get<long long>() < 0) {
      throw InvalidArgument(std::string("field '") + key + "' must be a non-negative integer");
    }
    return j.at(key).get<std::size_t>();
  }

  static Agg parse_agg_field(const json& j) {
    if (!j.is_string()) throw InvalidArgument("agg must be a string");
    auto a = parse_agg(j.get<std::string>());
    if (!a) throw InvalidArgument("unknown agg '" + j.get<std::string>() + "'");
    return *a;
  }

  PruneConfig parse_prune(const json& j) const {
    if (!j.is_array()) throw InvalidArgument("prune must be a list of head names");
    PruneConfig p;
    for (const auto& e : j) {
      if (!e.is_string()) throw InvalidArgument("prune entries must be head names");
      auto id = parse_head_id(e.get<std::string>());
      if (!id || !is_valid_head(a_.model->config(), *id)) throw InvalidArgument("prune: unknown head '" + e.get<std::string>() + "'");
      p.heads.insert(*id);
    }
    return p;
  }

  static json prune_names(const PruneConfig& p) {
    json out = json::array();
    for (const auto& h : p.heads) out.push_back(h.name());
    return out;
  }

  json frequency_context(const Instance& inst, const std::string& predicted) const {
    const auto& t = group_table(inst, tables_);
    json counts = json::array();
    for (const auto& a : t.ranked) {
      counts.push_back({{"answer", a}, {"count", t.counts.at(a)}, {"class", to_string(classify_answer(a, t))}});
    }
    return {{"group", t.group_key},
            {"gt_answer", inst.gt_answer},
            {"class", to_string(classify_answer(inst.gt_answer, t))},
            {"predicted", predicted},
            {"bias_flag", bias_flag(predicted, inst, tables_)},
            {"counts", counts}};
  }

  std::shared_ptr<Session> find_session(const std::string& id) {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::shared_ptr<Session> session_for(const json& req, bool create = true) {
    const auto id = string_field(req, "session");
    if (id.empty()) throw InvalidArgument("session id must not be empty");
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) return it->second;
    if (!create) throw Conflict("session '" + id + "' has no forward result yet");
    auto s = std::make_shared<Session>();
    s->id = id;
    s->agg = opts_.default_agg;
    sessions_.emplace(id, s);
    return s;
  }

  std::shared_ptr<const Snapshot> current_of(const std::string& session_id) {
    auto s = find_session(session_id);
    if (!s) throw Conflict("session '" + session_id + "' has no forward result yet");
    std::lock_guard lock(s->mu);
    if (!s->current) throw Conflict("session '" + session_id + "' has no forward result yet");
    return s->current;
  }

  static std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  ServiceAssets a_;
  ServiceOptions opts_;
  FrequencyTables tables_;
  StatsCache stats_;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace vlinspect
