#pragma once

// Straight-line double-precision reimplementation of the two-stream forward
// pass, written directly from the block equations and reading raw named
// tensors. Test-only: used as an oracle against the engine.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <vlinspect/model.hpp>

namespace reference {

using Rows = std::vector<std::vector<double>>;

struct Object {
  std::vector<float> appearance;
  float box[4];
};

class Forward {
 public:
  Forward(const vlinspect::ModelConfig& cfg, const vlinspect::NamedTensors& t, bool all_uniform = false)
      : cfg_(cfg), t_(t), uniform_(all_uniform) {}

  std::vector<double> logits(const std::vector<int>& ids, const std::vector<Object>& objects) const {
    const std::size_t d = cfg_.d;
    Rows lang(ids.size(), std::vector<double>(d));
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < d; ++c)
        lang[i][c] = w("embed.lang.token.weight")[ids[i] * d + c] + w("embed.lang.pos.weight")[i * d + c];
    norm(lang, "embed.lang.ln");

    const std::size_t in_dim = cfg_.feature_dim + 4;
    Rows vis(objects.size(), std::vector<double>(d));
    for (std::size_t k = 0; k < objects.size(); ++k) {
      for (std::size_t o = 0; o < d; ++o) {
        double s = w("embed.vis.proj.bias")[o];
        for (std::size_t c = 0; c < cfg_.feature_dim; ++c) s += w("embed.vis.proj.weight")[o * in_dim + c] * objects[k].appearance[c];
        for (std::size_t c = 0; c < 4; ++c) s += w("embed.vis.proj.weight")[o * in_dim + cfg_.feature_dim + c] * objects[k].box[c];
        vis[k][o] = s;
      }
    }
    norm(vis, "embed.vis.ln");

    for (std::size_t i = 0; i < cfg_.n_lang; ++i) {
      const std::string p = "lang." + std::to_string(i);
      lang = attend(lang, lang, p + ".self");
      lang = ffn(lang, p + ".ffn");
    }
    for (std::size_t i = 0; i < cfg_.n_vis; ++i) {
      const std::string p = "vis." + std::to_string(i);
      vis = attend(vis, vis, p + ".self");
      vis = ffn(vis, p + ".ffn");
    }
    for (std::size_t i = 0; i < cfg_.n_cross; ++i) {
      const std::string p = "cross." + std::to_string(i);
      Rows v1 = attend(vis, lang, p + ".lv");
      Rows l1 = attend(lang, vis, p + ".vl");
      l1 = attend(l1, l1, p + ".ll");
      v1 = attend(v1, v1, p + ".vv");
      lang = ffn(l1, p + ".lang_ffn");
      vis = ffn(v1, p + ".vis_ffn");
    }

    Rows cls = {lang[0]};
    Rows h = dense(cls, "answer.dense");
    for (double& x : h[0]) x = gelu(x);
    norm(h, "answer.ln");
    return dense(h, "answer.out")[0];
  }

 private:
  const std::vector<float>& w(const std::string& name) const { return t_.at(name).data; }

  static double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / 3.14159265358979323846) * (x + 0.044715 * x * x * x)));
  }

  void norm(Rows& x, const std::string& p) const {
    const auto& g = w(p + ".gain");
    const auto& b = w(p + ".bias");
    for (auto& row : x) {
      double mean = 0;
      for (double v : row) mean += v;
      mean /= static_cast<double>(row.size());
      double var = 0;
      for (double v : row) var += (v - mean) * (v - mean);
      var /= static_cast<double>(row.size());
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = g[c] * (row[c] - mean) / std::sqrt(var + 1e-12) + b[c];
    }
  }

  Rows dense(const Rows& x, const std::string& p) const {
    const auto& W = w(p + ".weight");
    const auto& b = w(p + ".bias");
    const std::size_t out = b.size(), in = x.empty() ? 0 : x[0].size();
    Rows y(x.size(), std::vector<double>(out));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        for (std::size_t c = 0; c < in; ++c) s += W[o * in + c] * x[i][c];
        y[i][o] = s;
      }
    return y;
  }

  Rows attend(const Rows& xq, const Rows& xkv, const std::string& p) const {
    const Rows q = dense(xq, p + ".q"), k = dense(xkv, p + ".k"), v = dense(xkv, p + ".v");
    const std::size_t dh = cfg_.d / cfg_.heads;
    Rows ctx(xq.size(), std::vector<double>(cfg_.d, 0.0));
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      for (std::size_t i = 0; i < xq.size(); ++i) {
        std::vector<double> a(xkv.size());
        if (uniform_) {
          for (double& x : a) x = 1.0 / static_cast<double>(xkv.size());
        } else {
          double mx = -1e300;
          for (std::size_t j = 0; j < xkv.size(); ++j) {
            double s = 0;
            for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
            a[j] = s / std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, a[j]);
          }
          double z = 0;
          for (double& x : a) z += (x = std::exp(x - mx));
          for (double& x : a) x /= z;
        }
        for (std::size_t j = 0; j < xkv.size(); ++j)
          for (std::size_t c = 0; c < dh; ++c) ctx[i][h * dh + c] += a[j] * v[j][h * dh + c];
      }
    }
    Rows out = dense(ctx, p + ".o");
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t c = 0; c < cfg_.d; ++c) out[i][c] += xq[i][c];
    norm(out, p + ".ln");
    return out;
  }

  Rows ffn(const Rows& x, const std::string& p) const {
    Rows h = dense(x, p + ".up");
    for (auto& r : h)
      for (double& v : r) v = gelu(v);
    Rows out = dense(h, p + ".down");
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t c = 0; c < cfg_.d; ++c) out[i][c] += x[i][c];
    norm(out, p + ".ln");
    return out;
  }

  const vlinspect::ModelConfig& cfg_;
  const vlinspect::NamedTensors& t_;
  bool uniform_;
};

}  // namespace reference
