// vlinspect: batch and server front end.
//
//   vlinspect serve  --model M --vocab V --answers A --features F [--corpus C]
//   vlinspect rank   --corpus C [--features F]
//   vlinspect ask    --model M --vocab V --answers A --features F --image I --question Q
//   vlinspect stats  --model M --vocab V --corpus C --features F [--stats-dir D]
//   vlinspect ablate --model M --vocab V --answers A --corpus C --features F --prune P
//   vlinspect synth  --out DIR

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <vlinspect/http.hpp>
#include <vlinspect/vlinspect.hpp>

namespace vi = vlinspect;
using nlohmann::json;

namespace {

struct Paths {
  std::string model, vocab, answers, corpus, features;
};

void add_model_flags(CLI::App* app, Paths& p, bool answers) {
  app->add_option("--model", p.model, "weight manifest (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--vocab", p.vocab, "wordpiece vocabulary, one token per line")->required()->check(CLI::ExistingFile);
  if (answers) {
    app->add_option("--answers", p.answers, "answer vocabulary, one answer per line")->required()->check(CLI::ExistingFile);
  }
  app->add_option("--features", p.features, "directory of per-image detections")->required()->check(CLI::ExistingDirectory);
}

vi::Agg agg_or_throw(const std::string& s) {
  auto a = vi::parse_agg(s);
  if (!a) throw vi::InvalidArgument("--agg must be min, median or max");
  return *a;
}

std::shared_ptr<const vi::Model> load_model_checked(const Paths& p, const vi::Vocab& vocab) {
  auto m = std::make_shared<const vi::Model>(vi::load_model(p.model));
  if (vocab.size() > m->config().token_vocab_size) {
    throw vi::ConfigError("--vocab has " + std::to_string(vocab.size()) + " tokens but the model table has " +
                          std::to_string(m->config().token_vocab_size));
  }
  return m;
}

void print_summaries(const json& r) {
  std::printf("%-10s %4s %4s %8s %6s\n", "head", "rows", "cols", "k", "bucket");
  for (const auto& s : r.at("head_summaries")) {
    std::printf("%-10s %4zu %4zu %8.4f %6d%s\n", s.at("head").get<std::string>().c_str(), s.at("rows").get<std::size_t>(),
                s.at("cols").get<std::size_t>(), s.at("k").get<double>(), s.at("bucket").get<int>(),
                s.at("pruned").get<bool>() ? "  pruned" : "");
  }
}

int run_serve(const Paths& p, std::string host, int port, const std::string& stats_dir, const std::string& static_dir) {
  vi::ServiceAssets a;
  a.vocab = std::make_shared<const vi::Vocab>(vi::load_vocab(p.vocab));
  a.model = load_model_checked(p, *a.vocab);
  a.answers = std::make_shared<const vi::AnswerVocab>(vi::load_answer_vocab(p.answers));
  if (!p.corpus.empty()) a.corpus = std::make_shared<const vi::Corpus>(vi::load_corpus(p.corpus));
  a.features = std::make_shared<const vi::FeatureStore>(p.features);
  vi::ServiceOptions opts;
  opts.stats_dir = stats_dir;
  vi::Service svc(std::move(a), opts);

  httplib::Server server;
  vi::install_routes(server, svc);
  if (!static_dir.empty()) vi::mount_static(server, static_dir);
  std::fprintf(stderr, "vlinspect: model %s, corpus %s, listening on %s:%d\n", svc.model_hash().c_str(),
               svc.corpus_hash().empty() ? "(none)" : svc.corpus_hash().c_str(), host.c_str(), port);
  if (!server.listen(host, port)) throw vi::Unavailable("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

int run_rank(const Paths& p, bool as_json) {
  const auto corpus = vi::load_corpus(p.corpus);
  const auto tables = vi::answer_frequencies(corpus);
  const auto ranked = vi::rank_images(corpus, tables);
  if (as_json) {
    json out = json::array();
    for (const auto& s : ranked) {
      out.push_back({{"image_id", s.image_id}, {"score", s.score}, {"n_head", s.n_head}, {"n_tail", s.n_tail}});
    }
    std::cout << json{{"corpus_hash", vi::to_hex(corpus.hash)}, {"images", out}}.dump(1) << "\n";
    return 0;
  }
  std::unique_ptr<vi::FeatureStore> fs;
  if (!p.features.empty()) fs = std::make_unique<vi::FeatureStore>(p.features);
  std::printf("%4s  %-24s %8s %6s %6s%s\n", "rank", "image_id", "score", "head", "tail", fs ? "  features" : "");
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& s = ranked[i];
    std::printf("%4zu  %-24s %8.4f %6zu %6zu%s\n", i + 1, s.image_id.c_str(), s.score, s.n_head, s.n_tail,
                fs ? (fs->has(s.image_id) ? "  yes" : "  no") : "");
  }
  return 0;
}

int run_ask(const Paths& p, const std::string& image, const std::string& question, const std::string& instance,
            const std::string& prune, const std::string& agg, bool as_json) {
  vi::ServiceAssets a;
  a.vocab = std::make_shared<const vi::Vocab>(vi::load_vocab(p.vocab));
  a.model = load_model_checked(p, *a.vocab);
  a.answers = std::make_shared<const vi::AnswerVocab>(vi::load_answer_vocab(p.answers));
  if (!p.corpus.empty()) a.corpus = std::make_shared<const vi::Corpus>(vi::load_corpus(p.corpus));
  a.features = std::make_shared<const vi::FeatureStore>(p.features);
  const auto cfg = a.model->config();
  vi::Service svc(std::move(a));

  json req = {{"session", "cli"}, {"agg", agg}};
  if (!image.empty()) req["image_id"] = image;
  if (!question.empty()) req["question"] = question;
  if (!instance.empty()) req["instance_id"] = instance;
  json names = json::array();
  for (const auto& h : vi::parse_prune_selector(prune, cfg).fixed.heads) names.push_back(h.name());
  req["prune"] = names;
  const auto r = svc.ask(req);
  if (as_json) {
    std::cout << r.dump(1) << "\n";
    return 0;
  }
  std::printf("image %s\nquestion: %s\ntokens:", r.at("image_id").get<std::string>().c_str(),
              r.at("question").get<std::string>().c_str());
  for (const auto& t : r.at("tokens")) std::printf(" %s", t.get<std::string>().c_str());
  std::printf("\n\ntop-5:\n");
  for (const auto& t : r.at("top5")) {
    std::printf("  %-16s %.4f\n", t.at("answer").get<std::string>().c_str(), t.at("probability").get<double>());
  }
  if (r.contains("answer_frequencies")) {
    const auto& f = r.at("answer_frequencies");
    std::printf("ground truth: %s (%s in group %s)%s\n", f.at("gt_answer").get<std::string>().c_str(),
                f.at("class").get<std::string>().c_str(), f.at("group").get<std::string>().c_str(),
                f.at("bias_flag").get<bool>() ? "  [bias]" : "");
  }
  std::printf("\nhead summaries (agg %s):\n", r.at("agg").get<std::string>().c_str());
  print_summaries(r);
  return 0;
}

int run_stats(const Paths& p, const std::string& agg_name, const std::string& stats_dir) {
  const auto agg = agg_or_throw(agg_name);
  const auto vocab = vi::load_vocab(p.vocab);
  const auto model = load_model_checked(p, vocab);
  const auto corpus = vi::load_corpus(p.corpus);
  const vi::FeatureStore features(p.features);
  vi::StatsCache cache(stats_dir);
  const auto stats = cache.get(model->hash(), corpus.hash, agg, model->heads(), [&] {
    return vi::compute_dataset_stats(*model, vocab, corpus, features, agg);
  });
  std::printf("%zu instances processed, %zu skipped (no features); agg %s\n", stats->processed, stats->skipped,
              std::string(vi::to_string(agg)).c_str());
  std::printf("%-10s %8s %8s %8s   %s\n", "head", "k_min", "k_med", "k_max", "buckets 0/1/2/3");
  for (const auto& h : stats->heads) {
    vi::BucketCounts total{};
    for (const auto& [op, c] : h.by_operation)
      for (std::size_t b = 0; b < 4; ++b) total[b] += c[b];
    if (h.k_values.empty()) {
      std::printf("%-10s %8s %8s %8s\n", h.head.name().c_str(), "-", "-", "-");
      continue;
    }
    std::printf("%-10s %8.4f %8.4f %8.4f   %zu/%zu/%zu/%zu\n", h.head.name().c_str(), vi::aggregate(h.k_values, vi::Agg::min),
                vi::aggregate(h.k_values, vi::Agg::median), vi::aggregate(h.k_values, vi::Agg::max), total[0], total[1],
                total[2], total[3]);
  }
  std::printf("cache: %s%s\n", cache.file_for(model->hash(), corpus.hash, agg).c_str(),
              cache.builds() ? "" : " (reused)");
  return 0;
}

int run_ablate(const Paths& p, const std::string& prune, const std::string& agg_name, bool as_json) {
  const auto agg = agg_or_throw(agg_name);
  const auto vocab = vi::load_vocab(p.vocab);
  const auto model = load_model_checked(p, vocab);
  const auto answers = vi::load_answer_vocab(p.answers);
  const auto corpus = vi::load_corpus(p.corpus);
  const vi::FeatureStore features(p.features);
  const auto sel = vi::parse_prune_selector(prune, model->config());
  const auto rep = vi::run_ablation(*model, vocab, answers, corpus, features, sel, agg);

  if (as_json) {
    json rows = json::array();
    auto row_json = [](const vi::AccuracyRow& r) {
      return json{{"operation", r.operation}, {"n", r.n},          {"before", r.before()},
                  {"after", r.after()},       {"delta", r.delta()}};
    };
    for (const auto& r : rep.by_operation) rows.push_back(row_json(r));
    std::cout << json{{"model_hash", vi::to_hex(model->hash())},
                      {"corpus_hash", vi::to_hex(corpus.hash)},
                      {"prune", prune},
                      {"operations", rows},
                      {"overall", row_json(rep.overall)},
                      {"skipped", rep.skipped},
                      {"pruned_heads_total", rep.pruned_heads_total}}
                     .dump(1)
              << "\n";
    return 0;
  }
  std::printf("prune: %s\n", prune.empty() ? "(none)" : prune.c_str());
  std::printf("%-12s %6s %9s %9s %9s\n", "operation", "n", "before", "after", "delta");
  auto line = [](const vi::AccuracyRow& r) {
    std::printf("%-12s %6zu %9.4f %9.4f %+9.4f\n", r.operation.c_str(), r.n, r.before(), r.after(), r.delta());
  };
  for (const auto& r : rep.by_operation) line(r);
  line(rep.overall);
  if (rep.skipped) std::printf("%zu instances skipped (no features)\n", rep.skipped);
  return 0;
}

int run_synth(const std::string& out, std::size_t images, std::size_t questions, std::uint64_t seed,
              const std::string& preset) {
  vi::SyntheticOptions opt;
  opt.images = images;
  opt.questions_per_image = questions;
  opt.seed = seed;
  if (preset == "tiny") {
    opt.base.d = 16;
    opt.base.heads = 2;
    opt.base.n_lang = 2;
    opt.base.n_vis = 1;
    opt.base.n_cross = 2;
    opt.base.ffn_dim = 32;
    opt.base.feature_dim = 16;
    opt.min_objects = 2;
    opt.max_objects = 12;
  } else if (preset != "default") {
    throw vi::InvalidArgument("--preset must be default or tiny");
  }
  const auto world = vi::make_synthetic_world(opt);
  const auto p = vi::write_synthetic_world(world, out);
  std::printf("wrote %zu images, %zu questions\n  --model %s\n  --vocab %s\n  --answers %s\n  --corpus %s\n  --features %s\n",
              world.images.size(), world.corpus.size(), p.model.c_str(), p.vocab.c_str(), p.answers.c_str(),
              p.corpus.c_str(), p.features.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention introspection for two-stream vision-language transformers"};
  app.require_subcommand(1);
  Paths p;
  bool as_json = false;
  std::string agg = "median";

  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  add_model_flags(serve, p, true);
  serve->add_option("--corpus", p.corpus, "question corpus (JSONL)")->check(CLI::ExistingFile);
  const auto env = vi::bind_address_from_env();
  std::string host = env.host;
  int port = env.port;
  std::string stats_dir, static_dir;
  serve->add_option("--host", host, "bind address (default from VLINSPECT_ADDR / VLINSPECT_HOST)");
  serve->add_option("--port", port, "port (default from VLINSPECT_ADDR / VLINSPECT_PORT)");
  serve->add_option("--stats-dir", stats_dir, "where to persist head statistics");
  serve->add_option("--static", static_dir, "directory served under /static (images, UI build)")->check(CLI::ExistingDirectory);

  auto* rank = app.add_subcommand("rank", "print images ordered by rare-answer score");
  rank->add_option("--corpus", p.corpus, "question corpus (JSONL)")->required()->check(CLI::ExistingFile);
  rank->add_option("--features", p.features, "directory of per-image detections")->check(CLI::ExistingDirectory);
  rank->add_flag("--json", as_json, "machine-readable output");

  auto* ask = app.add_subcommand("ask", "one forward pass: top-5 answers and head summaries");
  add_model_flags(ask, p, true);
  ask->add_option("--corpus", p.corpus, "question corpus (JSONL), needed for --instance")->check(CLI::ExistingFile);
  std::string image, question, instance, prune;
  ask->add_option("--image", image, "image id");
  auto* q_opt = ask->add_option("--question", question, "free-form question");
  auto* i_opt = ask->add_option("--instance", instance, "question id from the corpus");
  q_opt->excludes(i_opt);
  ask->add_option("--prune", prune, "comma-separated heads to prune, or 'all'");
  ask->add_option("--agg", agg, "k aggregation: min, median or max");
  ask->add_flag("--json", as_json, "print the raw API response");

  auto* stats = app.add_subcommand("stats", "build and persist per-head k statistics");
  add_model_flags(stats, p, false);
  stats->add_option("--corpus", p.corpus, "question corpus (JSONL)")->required()->check(CLI::ExistingFile);
  stats->add_option("--agg", agg, "k aggregation: min, median or max");
  std::string cache_dir = "vlinspect-cache";
  stats->add_option("--stats-dir", cache_dir, "cache directory");

  auto* ablate = app.add_subcommand("ablate", "accuracy per question operation before and after pruning");
  add_model_flags(ablate, p, true);
  ablate->add_option("--corpus", p.corpus, "question corpus (JSONL)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--prune", prune, "comma-separated heads, 'all', or bucket:N (heads in k bucket N per instance)");
  ablate->add_option("--agg", agg, "k aggregation used by bucket:N");
  ablate->add_flag("--json", as_json, "machine-readable output");

  auto* synth = app.add_subcommand("synth", "write a synthetic model, corpus and detections");
  std::string out;
  std::size_t n_images = 20, n_questions = 5;
  std::uint64_t seed = 7;
  std::string preset = "default";
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--images", n_images, "number of images");
  synth->add_option("--questions", n_questions, "questions per image");
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--preset", preset, "model size: default or tiny");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return run_serve(p, host, port, stats_dir, static_dir);
    if (*rank) return run_rank(p, as_json);
    if (*ask) {
      if (question.empty() && instance.empty()) throw vi::InvalidArgument("ask needs --question or --instance");
      if (!instance.empty() && p.corpus.empty()) throw vi::InvalidArgument("--instance needs --corpus");
      return run_ask(p, image, question, instance, prune, agg, as_json);
    }
    if (*stats) return run_stats(p, agg, cache_dir);
    if (*ablate) return run_ablate(p, prune, agg, as_json);
    if (*synth) return run_synth(out, n_images, n_questions, seed, preset);
  } catch (const vi::InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
