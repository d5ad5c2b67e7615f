#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "test_util.hpp"

namespace vi = vlinspect;

namespace {

vi::Corpus corpus_from(const std::string& text) {
  std::istringstream in(text);
  return vi::parse_corpus(in);
}

std::string record(const std::string& qid, const std::string& img, const std::string& answer, const std::string& op,
                   const std::string& topic = "t") {
  return R"({"question_id":")" + qid + R"(","image_id":")" + img + R"(","question":"q?","answer":")" + answer +
         R"(","group":{"operation":")" + op + R"(","topic":")" + topic + "\"}}\n";
}

vi::Corpus group_corpus(const std::map<std::string, std::size_t>& counts, const std::string& op = "query") {
  vi::Corpus c;
  std::size_t q = 0;
  for (const auto& [answer, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      c.add({"q" + std::to_string(q), "img" + std::to_string(q % 7), "q?", answer, op, "t"});
      ++q;
    }
  }
  c.rehash();
  return c;
}

// Brute-force head/tail partition of one group.
std::pair<std::set<std::string>, std::set<std::string>> oracle_partition(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<long, std::string>> v;
  for (const auto& [a, n] : counts) v.push_back({-static_cast<long>(n), a});
  std::sort(v.begin(), v.end());
  std::set<std::string> head, tail;
  const std::size_t A = v.size();
  if (A == 0) return {head, tail};
  if (A < 3) {
    head.insert(v.front().second);
    if (A == 2) tail.insert(v.back().second);
    return {head, tail};
  }
  const auto share = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(A) - 1e-12));
  for (std::size_t i = 0; i < share; ++i) {
    head.insert(v[i].second);
    tail.insert(v[A - 1 - i].second);
  }
  return {head, tail};
}

}  // namespace

TEST(Corpus, ParsesRecordsAndSkipsBlankLines) {
  const auto c = corpus_from(record("1", "a", "yes", "verify") + "\n  \n" +
                             R"({"question_id":2,"image_id":7,"question":"Q","answer":"no","group":{"operation":"verify","topic":"x"}})");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.instances[1].question_id, "2");
  EXPECT_EQ(c.instances[1].image_id, "7");
  EXPECT_EQ(c.instances[1].group_key(), "x/verify");
  ASSERT_NE(c.find("1"), nullptr);
  EXPECT_EQ(c.find("1")->gt_answer, "yes");
  EXPECT_EQ(c.find("3"), nullptr);
}

TEST(Corpus, MissingGroupFieldNamesRecordAndField) {
  try {
    corpus_from(record("1", "a", "yes", "verify") +
                R"({"question_id":"q77","image_id":"a","question":"Q","answer":"no","group":{"topic":"x"}})");
    FAIL() << "expected ConfigError";
  } catch (const vi::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("q77"), std::string::npos) << msg;
    EXPECT_NE(msg.find("group.operation"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  }
}

TEST(Corpus, OtherMalformedRecords) {
  EXPECT_THROW(corpus_from("{not json\n"), vi::ConfigError);
  EXPECT_THROW(corpus_from("[1,2]\n"), vi::ConfigError);
  EXPECT_THROW(corpus_from(record("1", "a", "yes", "v") + record("1", "b", "no", "v")), vi::ConfigError);
  EXPECT_THROW(corpus_from(R"({"question_id":"1","image_id":"a","question":"Q","answer":"","group":{"operation":"v","topic":"t"}})"),
               vi::ConfigError);
  EXPECT_THROW(corpus_from(R"({"question_id":"1","image_id":"a","question":3,"answer":"x","group":{"operation":"v","topic":"t"}})"),
               vi::ConfigError);
  EXPECT_THROW(vi::load_corpus("/nonexistent/corpus.jsonl"), vi::ConfigError);
}

TEST(Corpus, ContentHashIsStableAndSensitive) {
  const std::string text = record("1", "a", "yes", "verify") + record("2", "a", "red", "query");
  const auto a = corpus_from(text);
  const auto b = corpus_from(text);
  EXPECT_EQ(a.hash, b.hash);
  const auto c = corpus_from(record("1", "a", "yes", "verify") + record("2", "a", "blue", "query"));
  EXPECT_NE(a.hash, c.hash);

  const auto dir = testutil::temp_dir("corpus");
  vi::save_corpus(dir + "/c.jsonl", a);
  const auto reloaded = vi::load_corpus(dir + "/c.jsonl");
  EXPECT_EQ(reloaded.hash, a.hash);
  EXPECT_EQ(reloaded.size(), 2u);
}

TEST(AnswerVocab, LoadsLinesAsIndices) {
  const auto dir = testutil::temp_dir("answers");
  std::ofstream(dir + "/a.txt") << "yes\nno\nred\n\n";
  const auto v = vi::load_answer_vocab(dir + "/a.txt");
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.at(2), "red");
  EXPECT_EQ(v.find("no"), 1u);
  EXPECT_FALSE(v.find("blue").has_value());
  std::ofstream(dir + "/dup.txt") << "yes\nyes\n";
  EXPECT_THROW(vi::load_answer_vocab(dir + "/dup.txt"), vi::ConfigError);
  std::ofstream(dir + "/empty.txt") << "";
  EXPECT_THROW(vi::load_answer_vocab(dir + "/empty.txt"), vi::ConfigError);
}

TEST(HeadTail, WorkedGroup) {
  const auto tables = vi::answer_frequencies(group_corpus({{"yes", 50}, {"no", 30}, {"red", 10}, {"blue", 5}, {"green", 5}}));
  ASSERT_EQ(tables.size(), 1u);
  const auto& t = tables.begin()->second;
  EXPECT_EQ(t.group_key, "t/query");
  EXPECT_EQ(t.ranked, (std::vector<std::string>{"yes", "no", "red", "blue", "green"}));
  EXPECT_EQ(t.head_set, (std::set<std::string>{"yes"}));
  EXPECT_EQ(t.tail_set, (std::set<std::string>{"green"}));
}

TEST(HeadTail, TenEqualAnswersSplitLexicographically) {
  std::map<std::string, std::size_t> counts;
  for (char c = 'a'; c < 'a' + 10; ++c) counts[std::string(1, c)] = 4;
  const auto t = vi::partition_group("g", counts);
  EXPECT_EQ(t.head_set, (std::set<std::string>{"a", "b"}));
  EXPECT_EQ(t.tail_set, (std::set<std::string>{"i", "j"}));
}

TEST(HeadTail, SmallGroups) {
  const auto one = vi::partition_group("g", {{"yes", 9}});
  EXPECT_EQ(one.head_set, (std::set<std::string>{"yes"}));
  EXPECT_TRUE(one.tail_set.empty());
  const auto two = vi::partition_group("g", {{"yes", 9}, {"no", 3}});
  EXPECT_EQ(two.head_set, (std::set<std::string>{"yes"}));
  EXPECT_EQ(two.tail_set, (std::set<std::string>{"no"}));
  const auto six = vi::partition_group("g", {{"a", 6}, {"b", 5}, {"c", 4}, {"d", 3}, {"e", 2}, {"f", 1}});
  EXPECT_EQ(six.head_set, (std::set<std::string>{"a", "b"}));
  EXPECT_EQ(six.tail_set, (std::set<std::string>{"e", "f"}));
}

TEST(BiasFlag, Examples) {
  const auto c = group_corpus({{"yes", 50}, {"no", 30}, {"red", 10}, {"blue", 5}, {"green", 5}});
  const auto tables = vi::answer_frequencies(c);
  vi::Instance green{"x", "img", "q?", "green", "query", "t"};
  vi::Instance yes{"y", "img", "q?", "yes", "query", "t"};
  vi::Instance red{"z", "img", "q?", "red", "query", "t"};
  EXPECT_TRUE(vi::bias_flag("yes", green, tables));
  EXPECT_FALSE(vi::bias_flag("green", green, tables));
  EXPECT_FALSE(vi::bias_flag("no", green, tables));
  EXPECT_FALSE(vi::bias_flag("yes", yes, tables));
  EXPECT_FALSE(vi::bias_flag("yes", red, tables));
  EXPECT_EQ(vi::classify_question(green, tables), vi::AnswerClass::tail);
  EXPECT_EQ(vi::classify_question(yes, tables), vi::AnswerClass::head);
  EXPECT_EQ(vi::classify_question(red, tables), vi::AnswerClass::mid);
  vi::Instance stray{"w", "img", "q?", "yes", "verify", "t"};
  EXPECT_THROW(vi::classify_question(stray, tables), vi::InvalidArgument);
}

TEST(RankImages, ScoresAndOrder) {
  // Group t/query: ranked yes, no, red, blue, green -> head {yes}, tail {green}.
  vi::Corpus c;
  auto add = [&](const std::string& q, const std::string& img, const std::string& a) { c.add({q, img, "q?", a, "query", "t"}); };
  for (int i = 0; i < 50; ++i) add("y" + std::to_string(i), "imgY", "yes");
  for (int i = 0; i < 30; ++i) add("n" + std::to_string(i), "imgN", "no");
  for (int i = 0; i < 10; ++i) add("r" + std::to_string(i), "imgR", "red");
  for (int i = 0; i < 5; ++i) add("b" + std::to_string(i), "imgB", "blue");
  for (int i = 0; i < 3; ++i) add("g" + std::to_string(i), "imgG", "green");
  add("g3", "imgA", "green");
  add("g4", "imgA", "green");
  c.rehash();
  const auto ranked = vi::rank_images(c, vi::answer_frequencies(c));
  ASSERT_EQ(ranked.size(), 6u);
  EXPECT_EQ(ranked[0].image_id, "imgG");
  EXPECT_DOUBLE_EQ(ranked[0].score, 4.0);
  EXPECT_EQ(ranked[1].image_id, "imgA");
  EXPECT_DOUBLE_EQ(ranked[1].score, 3.0);
  // Mid-only images tie at 1 and are ordered by id.
  EXPECT_EQ(ranked[2].image_id, "imgB");
  EXPECT_EQ(ranked[3].image_id, "imgN");
  EXPECT_EQ(ranked[4].image_id, "imgR");
  EXPECT_EQ(ranked[5].image_id, "imgY");
  EXPECT_DOUBLE_EQ(ranked[5].score, 1.0 / 51.0);
}

TEST(BiasOracle, RandomCorporaMatchBruteForce) {
  std::mt19937 rng(99);
  const std::vector<std::string> answers = {"yes", "no", "red", "blue", "green", "left", "right", "cat", "dog", "car", "bus"};
  for (int trial = 0; trial < 30; ++trial) {
    vi::Corpus c;
    for (int i = 0; i < 100; ++i) {
      const std::string op = std::vector<std::string>{"verify", "query", "choose"}[rng() % 3];
      const std::string topic = std::vector<std::string>{"color", "animal"}[rng() % 2];
      // Skewed draw so groups have real head/tail structure.
      const std::size_t a = std::min<std::size_t>(answers.size() - 1, static_cast<std::size_t>(std::geometric_distribution<int>(0.35)(rng)));
      c.add({"q" + std::to_string(i), "img" + std::to_string(rng() % 15), "q?", answers[a], op, topic});
    }
    c.rehash();
    const auto tables = vi::answer_frequencies(c);

    std::map<std::string, std::map<std::string, std::size_t>> counts;
    for (const auto& i : c.instances) ++counts[i.topic + "/" + i.operation][i.gt_answer];
    ASSERT_EQ(tables.size(), counts.size());
    std::map<std::string, std::pair<std::set<std::string>, std::set<std::string>>> parts;
    for (const auto& [g, cnt] : counts) {
      parts[g] = oracle_partition(cnt);
      ASSERT_EQ(tables.at(g).counts, cnt);
      ASSERT_EQ(tables.at(g).head_set, parts[g].first) << g;
      ASSERT_EQ(tables.at(g).tail_set, parts[g].second) << g;
    }

    std::map<std::string, std::pair<std::size_t, std::size_t>> per_image;
    for (const auto& i : c.instances) {
      const auto& [head, tail] = parts[i.group_key()];
      const auto expect = head.count(i.gt_answer) ? vi::AnswerClass::head
                          : tail.count(i.gt_answer) ? vi::AnswerClass::tail
                                                    : vi::AnswerClass::mid;
      ASSERT_EQ(vi::classify_question(i, tables), expect);
      auto& [nh, nt] = per_image[i.image_id];
      nh += expect == vi::AnswerClass::head;
      nt += expect == vi::AnswerClass::tail;
      for (const auto& pred : answers) {
        const bool want = pred != i.gt_answer && head.count(pred) && tail.count(i.gt_answer);
        ASSERT_EQ(vi::bias_flag(pred, i, tables), want);
      }
    }

    std::vector<std::pair<double, std::string>> oracle;
    for (const auto& [img, ht] : per_image) {
      oracle.push_back({-static_cast<double>(ht.second + 1) / static_cast<double>(ht.first + 1), img});
    }
    std::sort(oracle.begin(), oracle.end());
    const auto ranked = vi::rank_images(c, tables);
    ASSERT_EQ(ranked.size(), oracle.size());
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      ASSERT_EQ(ranked[k].image_id, oracle[k].second);
      ASSERT_EQ(ranked[k].score, -oracle[k].first);
    }
  }
}
