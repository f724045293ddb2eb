#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sys/wait.h>
#include <filesystem>
#include <string>
#include <vector>

#include "patchlab/patchlab.hpp"

namespace tu {

namespace fs = std::filesystem;

inline fs::path fixtures() { return PATCHLAB_FIXTURES; }
inline fs::path configs() { return fixtures() / "configs"; }

struct toy {
  patchlab::tokenizer tok;
  patchlab::transformer_model model;
};

inline const toy& toy_model() {
  static const toy t{patchlab::tokenizer::load(fixtures() / "models" / "toy_tokenizer.json"),
                     patchlab::load_model(fixtures() / "models" / "toy.plab")};
  return t;
}

inline fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("patchlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Full-sequence forward in double precision without a KV cache: a second,
// independent reading of the architecture.
inline std::vector<std::vector<double>> reference_logits(const patchlab::transformer_model& m,
                                                         const std::vector<patchlab::token_id>& ids) {
  const auto& c = m.config;
  const std::size_t d = c.d_model, nh = c.n_heads, hd = d / nh, nkv = c.kv_heads(), ff = c.d_ff;
  const std::size_t T = ids.size();
  auto mv = [](const patchlab::matrix& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r)
      for (std::size_t k = 0; k < w.cols; ++k) y[r] += static_cast<double>(w.at(r, k)) * x[k];
    return y;
  };
  auto norm = [&](const std::vector<double>& x, const std::vector<float>& g, const std::vector<float>& b) {
    std::vector<double> y(d);
    if (c.norm == patchlab::norm_kind::rms) {
      double ss = 0;
      for (double v : x) ss += v * v;
      const double inv = 1.0 / std::sqrt(ss / d + c.norm_eps);
      for (std::size_t i = 0; i < d; ++i) y[i] = x[i] * inv * g[i];
    } else {
      double mu = 0, var = 0;
      for (double v : x) mu += v;
      mu /= d;
      for (double v : x) var += (v - mu) * (v - mu);
      var /= d;
      for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - mu) / std::sqrt(var + c.norm_eps) * g[i] + (b.empty() ? 0 : b[i]);
    }
    return y;
  };
  auto rope = [&](std::vector<double>& v, std::size_t heads, std::size_t pos) {
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < hd; i += 2) {
        const double th = pos * std::pow(static_cast<double>(c.rope_base), -static_cast<double>(i) / hd);
        const double a = v[h * hd + i], b = v[h * hd + i + 1];
        v[h * hd + i] = a * std::cos(th) - b * std::sin(th);
        v[h * hd + i + 1] = a * std::sin(th) + b * std::cos(th);
      }
  };
  std::vector<std::vector<double>> x(T, std::vector<double>(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      x[t][i] = m.token_embedding.at(static_cast<std::size_t>(ids[t]), i);
      if (!c.rope_enabled) x[t][i] += m.position_embedding.at(t, i);
    }
  for (const auto& w : m.layers) {
    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      const auto h = norm(x[t], w.attn_norm, w.attn_norm_bias);
      q[t] = mv(w.attn_q, h);
      k[t] = mv(w.attn_k, h);
      v[t] = mv(w.attn_v, h);
      if (c.rope_enabled) {
        rope(q[t], nh, t);
        rope(k[t], nkv, t);
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> att(d, 0.0);
      for (std::size_t h = 0; h < nh; ++h) {
        const std::size_t kh = h / (nh / nkv);
        std::vector<double> s(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0;
          for (std::size_t i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[u][kh * hd + i];
          s[u] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t u = 0; u <= t; ++u)
          for (std::size_t i = 0; i < hd; ++i) att[h * hd + i] += s[u] / z * v[u][kh * hd + i];
      }
      const auto o = mv(w.attn_out, att);
      for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
      const auto h2 = norm(x[t], w.ffn_norm, w.ffn_norm_bias);
      auto g = mv(w.ffn_gate, h2);
      const auto up = mv(w.ffn_up, h2);
      for (std::size_t i = 0; i < ff; ++i) g[i] = g[i] / (1 + std::exp(-g[i])) * up[i];
      const auto dn = mv(w.ffn_down, g);
      for (std::size_t i = 0; i < d; ++i) x[t][i] += dn[i];
    }
  }
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < T; ++t) out.push_back(mv(m.output, norm(x[t], m.output_norm, m.output_norm_bias)));
  return out;
}

// Runs the CLI and returns its exit code; stderr goes to `err_file`.
inline int run_cli(const std::string& args, const fs::path& err_file, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(PATCHLAB_CLI) + " " + args + " >/dev/null 2>" +
                          err_file.string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace tu
