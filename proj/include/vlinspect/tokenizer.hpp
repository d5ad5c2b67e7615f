#pragma once

#include <cctype>
#include <cstddef>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "error.hpp"

namespace vlinspect {

inline constexpr std::size_t kMaxSequenceLength = 32;
inline constexpr std::size_t kMaxCharsPerWord = 100;

class Vocab {
 public:
  Vocab() = default;

  // Ids follow the order of `entries`. Throws ConfigError on duplicates or
  // missing special tokens.
  explicit Vocab(std::vector<std::string> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw ConfigError("vocabulary is empty");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].empty()) throw ConfigError("vocabulary line " + std::to_string(i + 1) + " is empty");
      auto [it, inserted] = index_.emplace(entries_[i], static_cast<int>(i));
      if (!inserted) {
        throw ConfigError("vocabulary has duplicate token '" + entries_[i] + "' at line " + std::to_string(i + 1));
      }
    }
    unk_id_ = require("[UNK]");
    cls_id_ = require("[CLS]");
    sep_id_ = require("[SEP]");
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& token(int id) const { return entries_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& entries() const { return entries_; }

  int find(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? -1 : it->second;
  }
  bool contains(std::string_view tok) const { return find(tok) >= 0; }

  int unk_id() const { return unk_id_; }
  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }

 private:
  int require(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw ConfigError("vocabulary is missing required token " + tok);
    return it->second;
  }

  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
  int unk_id_ = -1;
  int cls_id_ = -1;
  int sep_id_ = -1;
};

// One token per line, line number = id. Trailing '\r' is stripped.
inline Vocab parse_vocab(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return Vocab(std::move(lines));
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary file '" + path + "'");
  return parse_vocab(in);
}

struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<int> ids;

  std::size_t size() const { return tokens.size(); }
};

namespace detail {

inline bool is_utf8_continuation(unsigned char c) { return (c & 0xC0U) == 0x80U; }

// Lowercase, split on whitespace, emit ASCII punctuation as standalone words.
inline std::vector<std::string> basic_split(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

// Greedy longest-match-first over one word. An unsplittable word maps to a
// single [UNK].
inline void wordpiece(const std::string& word, const Vocab& v, std::vector<std::string>& out) {
  if (word.size() > kMaxCharsPerWord) {
    out.push_back("[UNK]");
    return;
  }
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::string match;
    while (end > start) {
      if (end < word.size() && is_utf8_continuation(static_cast<unsigned char>(word[end]))) {
        --end;
        continue;
      }
      std::string candidate = (start > 0 ? "##" : "") + word.substr(start, end - start);
      if (v.contains(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) {
      out.push_back("[UNK]");
      return;
    }
    pieces.push_back(std::move(match));
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

}  // namespace detail

// [CLS] pieces... [SEP], truncated to max_len with [SEP] kept last.
inline TokenSequence tokenize(std::string_view text, const Vocab& v, std::size_t max_len = kMaxSequenceLength) {
  if (max_len < 2) throw InvalidArgument("tokenize: max_len must be at least 2");
  std::vector<std::string> pieces;
  for (const auto& w : detail::basic_split(text)) detail::wordpiece(w, v, pieces);
  if (pieces.size() > max_len - 2) pieces.resize(max_len - 2);

  TokenSequence seq;
  seq.tokens.reserve(pieces.size() + 2);
  seq.tokens.push_back("[CLS]");
  for (auto& p : pieces) seq.tokens.push_back(std::move(p));
  seq.tokens.push_back("[SEP]");
  seq.ids.reserve(seq.tokens.size());
  for (const auto& t : seq.tokens) {
    const int id = v.find(t);
    seq.ids.push_back(id < 0 ? v.unk_id() : id);
  }
  return seq;
}

}  // namespace vlinspect
