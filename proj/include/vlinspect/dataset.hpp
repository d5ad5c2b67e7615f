#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"

namespace vlinspect {

struct Instance {
  std::string question_id;
  std::string image_id;
  std::string question;
  std::string gt_answer;
  std::string operation;  // semantic operation, e.g. select / query / verify
  std::string topic;

  std::string group_key() const { return topic + "/" + operation; }
};

struct Corpus {
  std::vector<Instance> instances;
  std::uint64_t hash = 0;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }

  const Instance* find(const std::string& question_id) const {
    auto it = index_.find(question_id);
    return it == index_.end() ? nullptr : &instances[it->second];
  }

  // Content hash over every field of every instance, in order.
  void rehash() {
    Fnv1a64 h;
    for (const auto& i : instances) {
      for (const auto* f : {&i.question_id, &i.image_id, &i.question, &i.gt_answer, &i.operation, &i.topic}) {
        h.update(*f);
        h.update(std::uint64_t{f->size()});
      }
    }
    hash = h.digest();
  }

  // Throws ConfigError on duplicate question ids.
  void add(Instance inst) {
    if (!index_.emplace(inst.question_id, instances.size()).second) {
      throw ConfigError("duplicate question_id '" + inst.question_id + "'");
    }
    instances.push_back(std::move(inst));
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

// One JSON object per line:
//   {"question_id", "image_id", "question", "answer",
//    "group": {"operation", "topic"}}
// Blank lines are ignored.
inline Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "corpus record at line " + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ConfigError(where + " is not valid JSON");
    }
    if (!rec.is_object()) throw ConfigError(where + " is not an object");
    std::string name = where;
    if (rec.contains("question_id")) name += " (question_id " + rec.at("question_id").dump() + ")";
    auto need = [&](const nlohmann::json& obj, const char* field, const char* shown) -> const nlohmann::json& {
      if (!obj.is_object() || !obj.contains(field) || obj.at(field).is_null()) {
        throw ConfigError(name + " is missing field '" + shown + "'");
      }
      return obj.at(field);
    };
    auto text = [&](const nlohmann::json& obj, const char* field, const char* shown) {
      const auto& v = need(obj, field, shown);
      if (!v.is_string()) throw ConfigError(name + " field '" + shown + "' must be a string");
      return v.get<std::string>();
    };
    auto id = [&](const char* field) {
      const auto& v = need(rec, field, field);
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number_integer()) return std::to_string(v.get<long long>());
      throw ConfigError(name + " field '" + field + "' must be a string or integer");
    };
    Instance inst;
    inst.question_id = id("question_id");
    inst.image_id = id("image_id");
    inst.question = text(rec, "question", "question");
    inst.gt_answer = text(rec, "answer", "answer");
    if (inst.gt_answer.empty()) throw ConfigError(name + " has an empty 'answer'");
    const auto& group = need(rec, "group", "group");
    inst.operation = text(group, "operation", "group.operation");
    inst.topic = text(group, "topic", "group.topic");
    try {
      corpus.add(std::move(inst));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  corpus.rehash();
  return corpus;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file '" + path + "'");
  return parse_corpus(in);
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (const auto& i : corpus.instances) {
    nlohmann::json rec = {{"question_id", i.question_id},
                          {"image_id", i.image_id},
                          {"question", i.question},
                          {"answer", i.gt_answer},
                          {"group", {{"operation", i.operation}, {"topic", i.topic}}}};
    out << rec.dump() << "\n";
  }
}

// Ranked answer strings; line number = classifier output index.
class AnswerVocab {
 public:
  AnswerVocab() = default;
  explicit AnswerVocab(std::vector<std::string> answers) : answers_(std::move(answers)) {
    for (std::size_t i = 0; i < answers_.size(); ++i) {
      if (!index_.emplace(answers_[i], i).second) throw ConfigError("duplicate answer '" + answers_[i] + "'");
    }
  }

  std::size_t size() const { return answers_.size(); }
  const std::string& at(std::size_t i) const { return answers_.at(i); }
  const std::vector<std::string>& answers() const { return answers_; }
  std::optional<std::size_t> find(const std::string& a) const {
    auto it = index_.find(a);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline AnswerVocab load_answer_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open answer vocabulary '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ConfigError("answer vocabulary '" + path + "' is empty");
  return AnswerVocab(std::move(lines));
}

// --- head / tail answer classes -------------------------------------------

struct GroupFrequencyTable {
  std::string group_key;
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> ranked;  // by count descending, then lexicographic
  std::set<std::string> head_set;
  std::set<std::string> tail_set;
};

using FrequencyTables = std::map<std::string, GroupFrequencyTable>;

// head = first ceil(0.2 A) ranked answers, tail = last ceil(0.2 A). With
// fewer than 3 distinct answers the head is the top answer and the tail the
// bottom one, if different.
inline GroupFrequencyTable partition_group(std::string key, std::map<std::string, std::size_t> counts) {
  GroupFrequencyTable t;
  t.group_key = std::move(key);
  t.counts = std::move(counts);
  for (const auto& [a, n] : t.counts) t.ranked.push_back(a);
  std::stable_sort(t.ranked.begin(), t.ranked.end(), [&](const std::string& a, const std::string& b) {
    return t.counts.at(a) > t.counts.at(b);
  });
  const std::size_t n = t.ranked.size();
  if (n == 0) return t;
  if (n < 3) {
    t.head_set.insert(t.ranked.front());
    if (n == 2) t.tail_set.insert(t.ranked.back());
    return t;
  }
  const std::size_t share = (n + 4) / 5;  // ceil(0.2 n)
  for (std::size_t i = 0; i < share; ++i) {
    t.head_set.insert(t.ranked[i]);
    t.tail_set.insert(t.ranked[n - 1 - i]);
  }
  return t;
}

inline FrequencyTables answer_frequencies(const Corpus& corpus) {
  std::map<std::string, std::map<std::string, std::size_t>> grouped;
  for (const auto& i : corpus.instances) ++grouped[i.group_key()][i.gt_answer];
  FrequencyTables out;
  for (auto& [key, counts] : grouped) out.emplace(key, partition_group(key, std::move(counts)));
  return out;
}

enum class AnswerClass { head, tail, mid };

inline std::string_view to_string(AnswerClass c) {
  switch (c) {
    case AnswerClass::head: return "head";
    case AnswerClass::tail: return "tail";
    case AnswerClass::mid: return "mid";
  }
  return "?";
}

inline const GroupFrequencyTable& group_table(const Instance& inst, const FrequencyTables& tables) {
  auto it = tables.find(inst.group_key());
  if (it == tables.end()) throw InvalidArgument("unknown question group '" + inst.group_key() + "'");
  return it->second;
}

inline AnswerClass classify_answer(const std::string& answer, const GroupFrequencyTable& t) {
  if (t.head_set.count(answer)) return AnswerClass::head;
  if (t.tail_set.count(answer)) return AnswerClass::tail;
  return AnswerClass::mid;
}

inline AnswerClass classify_question(const Instance& inst, const FrequencyTables& tables) {
  return classify_answer(inst.gt_answer, group_table(inst, tables));
}

// A wrong prediction from the group's most frequent answers on a question
// whose true answer is among the least frequent.
inline bool bias_flag(const std::string& predicted, const Instance& inst, const FrequencyTables& tables) {
  const auto& t = group_table(inst, tables);
  return predicted != inst.gt_answer && t.head_set.count(predicted) && t.tail_set.count(inst.gt_answer);
}

struct ImageScore {
  std::string image_id;
  std::size_t n_head = 0;
  std::size_t n_tail = 0;
  double score = 0.0;
};

// score = (n_tail + 1) / (n_head + 1); descending, ties by image id.
inline std::vector<ImageScore> rank_images(const Corpus& corpus, const FrequencyTables& tables) {
  std::map<std::string, ImageScore> by_image;
  for (const auto& i : corpus.instances) {
    auto& s = by_image[i.image_id];
    s.image_id = i.image_id;
    switch (classify_question(i, tables)) {
      case AnswerClass::head: ++s.n_head; break;
      case AnswerClass::tail: ++s.n_tail; break;
      case AnswerClass::mid: break;
    }
  }
  std::vector<ImageScore> out;
  out.reserve(by_image.size());
  for (auto& [id, s] : by_image) {
    s.score = static_cast<double>(s.n_tail + 1) / static_cast<double>(s.n_head + 1);
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const ImageScore& a, const ImageScore& b) { return a.score > b.score; });
  return out;
}

}  // namespace vlinspect
