#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <string>

#include <json.hpp>

#include "test_util.hpp"

#ifndef VLINSPECT_CLI
#error "VLINSPECT_CLI must point at the vlinspect binary"
#endif

using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  Run r;
  const std::string cmd = std::string(VLINSPECT_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::string(testutil::temp_dir("cli"));
    const auto r = run("synth --out " + *dir_ + " --preset tiny --images 5 --questions 4 --seed 11");
    ASSERT_EQ(r.status, 0) << r.out;
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string f(const std::string& name) { return *dir_ + "/" + name; }
  static std::string model_flags() {
    return "--model " + f("model.json") + " --vocab " + f("vocab.txt") + " --answers " + f("answers.txt") +
           " --features " + f("features") + " --corpus " + f("corpus.jsonl");
  }

  static std::string* dir_;
};

std::string* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, NoSubcommandIsAnError) {
  EXPECT_NE(run("").status, 0);
}

TEST_F(Cli, MissingFileNamesTheFlag) {
  const auto r = run("ablate --model /nonexistent/model.json --vocab " + f("vocab.txt") + " --answers " +
                     f("answers.txt") + " --features " + f("features") + " --corpus " + f("corpus.jsonl"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("--model"), std::string::npos) << r.out;

  const auto c = run("rank --corpus /nonexistent.jsonl");
  EXPECT_NE(c.status, 0);
  EXPECT_NE(c.out.find("--corpus"), std::string::npos) << c.out;
}

TEST_F(Cli, RankJsonIsSortedByScore) {
  const auto r = run("rank --json --corpus " + f("corpus.jsonl"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = json::parse(r.out);
  const auto& imgs = j.at("images");
  ASSERT_EQ(imgs.size(), 5u);
  for (std::size_t i = 1; i < imgs.size(); ++i) {
    const double a = imgs[i - 1].at("score"), b = imgs[i].at("score");
    EXPECT_TRUE(a > b || (a == b && imgs[i - 1].at("image_id") < imgs[i].at("image_id")));
  }
}

TEST_F(Cli, AskPrintsTopFiveAndAllHeads) {
  const auto r = run("ask --json " + model_flags() + " --instance q1");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("top5").size(), 5u);
  EXPECT_EQ(j.at("head_summaries").size(), 22u);

  const auto text = run("ask " + model_flags() + " --image img1000 --question 'is there a dog?' --prune lv_0_0");
  ASSERT_EQ(text.status, 0) << text.out;
  EXPECT_NE(text.out.find("top-5"), std::string::npos);
  EXPECT_NE(text.out.find("lv_0_0"), std::string::npos);
  EXPECT_NE(text.out.find("pruned"), std::string::npos);
}

TEST_F(Cli, AskRejectsUnknownHeadAndMissingQuestion) {
  EXPECT_EQ(run("ask " + model_flags() + " --image img1000 --question hi --prune lv_9_9").status, 2);
  EXPECT_EQ(run("ask " + model_flags() + " --image img1000").status, 2);
}

TEST_F(Cli, AblateWithNothingPrunedHasZeroDelta) {
  const auto r = run("ablate --json " + model_flags());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("overall").at("n"), 20);
  EXPECT_EQ(j.at("pruned_heads_total"), 0);
  for (const auto& row : j.at("operations")) EXPECT_EQ(row.at("delta").get<double>(), 0.0) << row.dump();
  EXPECT_EQ(j.at("overall").at("delta").get<double>(), 0.0);
}

TEST_F(Cli, AblateAllPrunesEveryHead) {
  const auto r = run("ablate --json --prune all " + model_flags());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(json::parse(r.out).at("pruned_heads_total"), 20 * 22);
  const auto b = run("ablate --json --prune bucket:2 " + model_flags());
  ASSERT_EQ(b.status, 0) << b.out;
  EXPECT_EQ(run("ablate --prune bucket:7 " + model_flags()).status, 2);
}

TEST_F(Cli, StatsPersistsAndReuses) {
  const auto cache = f("cache");
  const std::string args = "stats --model " + f("model.json") + " --vocab " + f("vocab.txt") + " --features " +
                           f("features") + " --corpus " + f("corpus.jsonl") + " --stats-dir " + cache;
  const auto first = run(args);
  ASSERT_EQ(first.status, 0) << first.out;
  EXPECT_NE(first.out.find("20 instances processed"), std::string::npos) << first.out;
  EXPECT_EQ(first.out.find("(reused)"), std::string::npos);
  const auto second = run(args);
  ASSERT_EQ(second.status, 0) << second.out;
  EXPECT_NE(second.out.find("(reused)"), std::string::npos) << second.out;
}
