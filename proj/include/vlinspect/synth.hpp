#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "features.hpp"
#include "model.hpp"
#include "tokenizer.hpp"

namespace vlinspect {

// A self-consistent toy world (vocabularies, corpus, detections, random
// weights) for demos, smoke tests and benchmarks. Nothing here is trained.
struct SyntheticWorld {
  ModelConfig config;
  NamedTensors weights;
  std::vector<std::string> vocab;
  std::vector<std::string> answers;
  Corpus corpus;
  std::vector<VisualFeatureSet> images;
};

struct SyntheticOptions {
  std::size_t images = 20;
  std::size_t questions_per_image = 5;
  std::size_t min_objects = 4;
  std::size_t max_objects = 36;
  std::uint64_t seed = 7;
  float weight_scale = 3.0f;
  ModelConfig base;  // d, heads and layer counts; vocab sizes are filled in
};

namespace detail {

inline const std::vector<std::string>& synth_objects() {
  static const std::vector<std::string> v = {"person", "woman", "man",   "shirt",  "shorts", "shoe", "leg",
                                             "table",  "chair", "sofa",  "mirror", "lamp",   "train", "car",
                                             "bus",    "dog",   "cat",   "horse",  "knife",  "fruit", "banana",
                                             "plate",  "tree",  "window"};
  return v;
}

inline const std::vector<std::string>& synth_colors() {
  static const std::vector<std::string> v = {"red", "blue", "green", "yellow", "white", "black", "brown"};
  return v;
}

inline std::string topic_of(const std::string& label) {
  static const std::map<std::string, std::string> m = {
      {"person", "people"},     {"woman", "people"},      {"man", "people"},       {"shirt", "clothing"},
      {"shorts", "clothing"},   {"shoe", "clothing"},     {"leg", "body"},         {"table", "furniture"},
      {"chair", "furniture"},   {"sofa", "furniture"},    {"mirror", "furniture"}, {"lamp", "furniture"},
      {"train", "vehicle"},     {"car", "vehicle"},       {"bus", "vehicle"},      {"dog", "animal"},
      {"cat", "animal"},        {"horse", "animal"},      {"knife", "utensil"},    {"fruit", "food"},
      {"banana", "food"},       {"plate", "utensil"},     {"tree", "plant"},       {"window", "building"}};
  auto it = m.find(label);
  return it == m.end() ? "thing" : it->second;
}

}  // namespace detail

inline SyntheticWorld make_synthetic_world(const SyntheticOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const auto& labels = detail::synth_objects();
  const auto& colors = detail::synth_colors();

  SyntheticWorld w;
  // Token vocabulary: specials, question words, labels, colors, punctuation.
  std::set<std::string> words = {"is", "there", "a", "an", "in", "this", "image", "what", "color", "the",
                                 "or", "are", "both", "and", "on", "left", "of", "which", "side", "wearing",
                                 "?", ",", "."};
  for (const auto& l : labels) words.insert(l);
  for (const auto& c : colors) words.insert(c);
  w.vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  w.vocab.insert(w.vocab.end(), words.begin(), words.end());
  w.vocab.push_back("##s");

  std::set<std::string> answer_set = {"yes", "no", "left", "right"};
  for (const auto& l : labels) answer_set.insert(l);
  for (const auto& c : colors) answer_set.insert(c);
  // Frequent answers first.
  w.answers = {"yes", "no"};
  for (const auto& a : answer_set) {
    if (a != "yes" && a != "no") w.answers.push_back(a);
  }

  w.config = opt.base;
  w.config.token_vocab_size = w.vocab.size();
  w.config.answer_vocab_size = w.answers.size();
  w.config.max_objects = std::max(w.config.max_objects, opt.max_objects);
  w.weights = random_weights(w.config, opt.seed ^ 0x5eedULL, opt.weight_scale);

  // Each label gets a fixed appearance prototype; detections add noise.
  std::vector<Vector> prototypes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Vector p(w.config.feature_dim);
    for (float& x : p) x = static_cast<float>(unit() * 2.0);
    prototypes.push_back(std::move(p));
  }

  std::size_t qid = 0;
  for (std::size_t im = 0; im < opt.images; ++im) {
    VisualFeatureSet vf;
    vf.image_id = "img" + std::to_string(1000 + im);
    vf.width = 640;
    vf.height = 480;
    const std::size_t span = opt.max_objects - opt.min_objects + 1;
    const std::size_t n_obj = opt.min_objects + pick(span);
    std::vector<std::string> obj_colors;
    for (std::size_t k = 0; k < n_obj; ++k) {
      VisualObject o;
      const std::size_t li = pick(labels.size());
      o.label = labels[li];
      const float x1 = static_cast<float>(unit() * 0.7), y1 = static_cast<float>(unit() * 0.7);
      o.box = {x1, y1, x1 + 0.05f + static_cast<float>(unit() * 0.25), y1 + 0.05f + static_cast<float>(unit() * 0.25)};
      o.appearance = prototypes[li];
      for (float& x : o.appearance) x += static_cast<float>((unit() - 0.5) * 0.2);
      obj_colors.push_back(colors[pick(colors.size())]);
      vf.objects.push_back(std::move(o));
    }

    auto present = [&](const std::string& l) {
      return std::any_of(vf.objects.begin(), vf.objects.end(), [&](const VisualObject& o) { return o.label == l; });
    };
    for (std::size_t q = 0; q < opt.questions_per_image; ++q) {
      Instance inst;
      inst.question_id = "q" + std::to_string(++qid);
      inst.image_id = vf.image_id;
      const std::size_t k = pick(vf.objects.size());
      const auto& obj = vf.objects[k].label;
      switch (pick(5)) {
        case 0: {
          const auto& l = unit() < 0.6 ? obj : labels[pick(labels.size())];
          inst.question = "Is there a " + l + " in this image?";
          inst.gt_answer = present(l) ? "yes" : "no";
          inst.operation = "verify";
          inst.topic = detail::topic_of(l);
          break;
        }
        case 1:
          inst.question = "What color is the " + obj + "?";
          inst.gt_answer = obj_colors[k];
          inst.operation = "query";
          inst.topic = "color";
          break;
        case 2: {
          const auto& other = labels[pick(labels.size())];
          const bool first = unit() < 0.5;
          inst.question = "Is this a " + (first ? obj : other) + " or a " + (first ? other : obj) + "?";
          inst.gt_answer = obj;
          inst.operation = "choose";
          inst.topic = detail::topic_of(obj);
          break;
        }
        case 3: {
          const auto& other = labels[pick(labels.size())];
          inst.question = "Are there both a " + obj + " and a " + other + "?";
          inst.gt_answer = present(other) ? "yes" : "no";
          inst.operation = "and";
          inst.topic = detail::topic_of(other);
          break;
        }
        default: {
          const auto& b = vf.objects[k].box;
          inst.question = "Which side is the " + obj + " on?";
          inst.gt_answer = (b[0] + b[2]) * 0.5f < 0.5f ? "left" : "right";
          inst.operation = "select";
          inst.topic = "position";
          break;
        }
      }
      w.corpus.add(std::move(inst));
    }
    w.images.push_back(std::move(vf));
  }
  w.corpus.rehash();
  return w;
}

struct SyntheticPaths {
  std::string model, vocab, answers, corpus, features;
};

inline SyntheticPaths write_synthetic_world(const SyntheticWorld& w, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SyntheticPaths p;
  p.model = (fs::path(dir) / "model.json").string();
  p.vocab = (fs::path(dir) / "vocab.txt").string();
  p.answers = (fs::path(dir) / "answers.txt").string();
  p.corpus = (fs::path(dir) / "corpus.jsonl").string();
  p.features = (fs::path(dir) / "features").string();
  save_model(p.model, w.config, w.weights);
  {
    std::ofstream v(p.vocab);
    for (const auto& t : w.vocab) v << t << "\n";
    std::ofstream a(p.answers);
    for (const auto& t : w.answers) a << t << "\n";
  }
  save_corpus(p.corpus, w.corpus);
  for (const auto& vf : w.images) save_features(p.features, vf);
  return p;
}

}  // namespace vlinspect
