#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"
#include "heads.hpp"
#include "math.hpp"

namespace vlinspect {

struct VisualObject {
  std::string label;
  std::array<float, 4> box{};  // normalized x1, y1, x2, y2
  Vector appearance;
};

struct VisualFeatureSet {
  std::string image_id;
  std::size_t width = 0;  // pixels
  std::size_t height = 0;
  std::vector<VisualObject> objects;

  std::size_t size() const { return objects.size(); }
};

inline void validate_features(const VisualFeatureSet& vf, const ModelConfig& cfg) {
  const std::string where = "image '" + vf.image_id + "': ";
  if (vf.objects.empty()) throw InvalidArgument(where + "no detected objects");
  if (vf.objects.size() > cfg.max_objects) {
    throw InvalidArgument(where + std::to_string(vf.objects.size()) + " objects exceeds max " +
                          std::to_string(cfg.max_objects));
  }
  for (std::size_t k = 0; k < vf.objects.size(); ++k) {
    const auto& o = vf.objects[k];
    const auto& b = o.box;
    for (float x : b) {
      if (!std::isfinite(x) || x < 0.0f || x > 1.0f) throw InvalidArgument(where + "object " + std::to_string(k) + " box outside [0,1]");
    }
    if (!(b[0] < b[2] && b[1] < b[3])) throw InvalidArgument(where + "object " + std::to_string(k) + " box is degenerate");
    if (o.appearance.size() != cfg.feature_dim) {
      throw InvalidArgument(where + "object " + std::to_string(k) + " appearance has " +
                            std::to_string(o.appearance.size()) + " values, expected " + std::to_string(cfg.feature_dim));
    }
    for (float x : o.appearance) {
      if (!std::isfinite(x)) throw InvalidArgument(where + "object " + std::to_string(k) + " appearance is not finite");
    }
  }
}

// On-disk layout per image, inside a features directory:
//   <image_id>.json  {"image_id", "width", "height", "feature_dim",
//                     "objects": [{"label", "box": [x1,y1,x2,y2]}, ...]}
//   <image_id>.bin   objects x feature_dim little-endian float32, row-major
inline void save_features(const std::string& dir, const VisualFeatureSet& vf) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t dim = vf.objects.empty() ? 0 : vf.objects.front().appearance.size();
  nlohmann::json objs = nlohmann::json::array();
  std::ofstream blob(fs::path(dir) / (vf.image_id + ".bin"), std::ios::binary);
  for (const auto& o : vf.objects) {
    if (o.appearance.size() != dim) throw InvalidArgument("save_features: ragged appearance vectors");
    objs.push_back({{"label", o.label}, {"box", o.box}});
    blob.write(reinterpret_cast<const char*>(o.appearance.data()), static_cast<std::streamsize>(dim * sizeof(float)));
  }
  nlohmann::json meta = {{"image_id", vf.image_id}, {"width", vf.width},  {"height", vf.height},
                         {"feature_dim", dim},      {"objects", objs}};
  std::ofstream(fs::path(dir) / (vf.image_id + ".json")) << meta.dump(1) << "\n";
}

inline VisualFeatureSet load_features(const std::string& dir, const std::string& image_id) {
  namespace fs = std::filesystem;
  const fs::path meta_path = fs::path(dir) / (image_id + ".json");
  const fs::path blob_path = fs::path(dir) / (image_id + ".bin");
  if (!fs::exists(meta_path) || !fs::exists(blob_path)) throw NotFound("no features for image '" + image_id + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path.string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("features metadata '" + meta_path.string() + "': " + e.what());
  }
  VisualFeatureSet vf;
  vf.image_id = meta.value("image_id", image_id);
  vf.width = meta.value("width", std::size_t{0});
  vf.height = meta.value("height", std::size_t{0});
  const auto dim = meta.at("feature_dim").get<std::size_t>();
  const std::string blob = read_file(blob_path.string());
  const auto& objs = meta.at("objects");
  if (blob.size() != objs.size() * dim * sizeof(float)) {
    throw ConfigError("features blob '" + blob_path.string() + "' has " + std::to_string(blob.size()) +
                      " bytes, expected " + std::to_string(objs.size() * dim * sizeof(float)));
  }
  for (std::size_t k = 0; k < objs.size(); ++k) {
    VisualObject o;
    o.label = objs[k].at("label").get<std::string>();
    o.box = objs[k].at("box").get<std::array<float, 4>>();
    o.appearance.resize(dim);
    std::memcpy(o.appearance.data(), blob.data() + k * dim * sizeof(float), dim * sizeof(float));
    vf.objects.push_back(std::move(o));
  }
  return vf;
}

// Read-through cache over a features directory. Thread-safe.
class FeatureStore {
 public:
  explicit FeatureStore(std::string dir) : dir_(std::move(dir)) {}

  const std::string& dir() const { return dir_; }

  // Registers an in-memory feature set, shadowing any file with the same id.
  void put(VisualFeatureSet vf) {
    std::lock_guard lock(mu_);
    auto id = vf.image_id;
    cache_[id] = std::make_shared<const VisualFeatureSet>(std::move(vf));
  }

  bool has(const std::string& image_id) const {
    {
      std::lock_guard lock(mu_);
      if (cache_.count(image_id)) return true;
    }
    if (dir_.empty()) return false;
    namespace fs = std::filesystem;
    if (image_id.empty() || image_id.find('/') != std::string::npos || image_id.find("..") != std::string::npos) return false;
    return fs::exists(fs::path(dir_) / (image_id + ".json")) && fs::exists(fs::path(dir_) / (image_id + ".bin"));
  }

  std::shared_ptr<const VisualFeatureSet> get(const std::string& image_id) const {
    {
      std::lock_guard lock(mu_);
      auto it = cache_.find(image_id);
      if (it != cache_.end()) return it->second;
    }
    if (!has(image_id)) throw NotFound("no features for image '" + image_id + "'");
    auto vf = std::make_shared<const VisualFeatureSet>(load_features(dir_, image_id));
    std::lock_guard lock(mu_);
    return cache_.emplace(image_id, std::move(vf)).first->second;
  }

 private:
  std::string dir_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const VisualFeatureSet>> cache_;
};

}  // namespace vlinspect
