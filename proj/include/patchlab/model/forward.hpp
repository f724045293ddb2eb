#pragma once

// Hooked forward pass. Tokens are processed one at a time against a KV cache,
// so prompt encoding and decoding run through the same code path and the
// result at position t is a function of tokens 0..t only. All arithmetic is
// f32 with a fixed summation order, which makes logits bitwise reproducible
// across runs and thread counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "patchlab/errors.hpp"
#include "patchlab/model/hooks.hpp"
#include "patchlab/model/model.hpp"
#include "patchlab/model/tokenizer.hpp"

namespace patchlab {

namespace detail {

inline float dot(const float* a, const float* b, std::size_t n) noexcept {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// out = W x for row-major W [rows, cols]
inline void matvec(const matrix& w, const float* x, float* out) noexcept {
  for (std::size_t r = 0; r < w.rows; ++r) out[r] = dot(w.data.data() + r * w.cols, x, w.cols);
}

inline void normalize(const model_config& c, const float* x, const std::vector<float>& w, const std::vector<float>& b,
                      float* out) noexcept {
  const auto d = static_cast<std::size_t>(c.d_model);
  if (c.norm == norm_kind::rms) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += static_cast<double>(x[i]) * x[i];
    const float inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(d) + c.norm_eps));
    for (std::size_t i = 0; i < d; ++i) out[i] = x[i] * inv * w[i];
  } else {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + c.norm_eps);
    for (std::size_t i = 0; i < d; ++i)
      out[i] = static_cast<float>((x[i] - mean) * inv) * w[i] + (b.empty() ? 0.0f : b[i]);
  }
}

// GGML "normal" rotary mode: rotates adjacent pairs (2i, 2i+1) of each head.
inline void apply_rope(float* v, std::size_t n_heads, std::size_t head_dim, std::size_t pos, float base) noexcept {
  for (std::size_t h = 0; h < n_heads; ++h) {
    float* x = v + h * head_dim;
    for (std::size_t i = 0; i < head_dim; i += 2) {
      const double theta = static_cast<double>(pos) *
                           std::pow(static_cast<double>(base), -static_cast<double>(i) / static_cast<double>(head_dim));
      const float cs = static_cast<float>(std::cos(theta));
      const float sn = static_cast<float>(std::sin(theta));
      const float a = x[i], b = x[i + 1];
      x[i] = a * cs - b * sn;
      x[i + 1] = a * sn + b * cs;
    }
  }
}

inline float silu(float x) noexcept { return x / (1.0f + std::exp(-x)); }

}  // namespace detail

// Attention weights of one head at one query position (debug trace).
struct attention_row {
  int layer;
  int head;
  std::size_t position;
  std::vector<float> weights;  // length position + 1
};

struct forward_options {
  std::set<hook_site> capture;
  std::span<const resolved_patch> patches;
  bool record_attention = false;
};

struct forward_result {
  matrix logits;  // [positions, vocab]
  activation_trace trace;
  std::vector<attention_row> attention;

  std::size_t positions() const { return logits.rows; }
};

// Incremental decoding state over a shared, immutable model. A session owns
// its KV cache; copying a session forks it.
class session {
 public:
  explicit session(const transformer_model& model) : model_(&model) {
    keys_.resize(model.layers.size());
    values_.resize(model.layers.size());
  }

  const transformer_model& model() const { return *model_; }
  std::size_t length() const { return length_; }

  // Drops cached positions >= n.
  void truncate(std::size_t n) {
    if (n >= length_) return;
    const auto kv = static_cast<std::size_t>(model_->config.kv_dim());
    for (auto& k : keys_) k.resize(n * kv);
    for (auto& v : values_) v.resize(n * kv);
    length_ = n;
  }

  // Feeds `tokens` at positions length()..length()+n-1. Patches are matched by
  // absolute position; captured vectors land in `result->trace`. Returns the
  // logits of the last fed token.
  std::vector<float> feed(std::span<const token_id> tokens, const forward_options& opt = {},
                          forward_result* result = nullptr) {
    validate(tokens, opt.patches);
    std::vector<float> logits;
    for (token_id t : tokens) {
      logits = step(t, opt, result);
      if (result != nullptr) {
        result->logits.rows += 1;
        result->logits.cols = logits.size();
        result->logits.data.insert(result->logits.data.end(), logits.begin(), logits.end());
      }
    }
    return logits;
  }

  std::vector<float> feed_one(token_id t) {
    const token_id one[1] = {t};
    return feed(one);
  }

 private:
  const transformer_model* model_;
  std::vector<std::vector<float>> keys_;    // per layer, [pos, kv_dim]
  std::vector<std::vector<float>> values_;
  std::size_t length_ = 0;

  void validate(std::span<const token_id> tokens, std::span<const resolved_patch> patches) const {
    const auto& c = model_->config;
    if (length_ + tokens.size() > static_cast<std::size_t>(c.max_seq_len))
      throw index_error("sequence length " + std::to_string(length_ + tokens.size()) + " exceeds max_seq_len " +
                        std::to_string(c.max_seq_len));
    for (token_id t : tokens)
      if (t < 0 || t >= c.vocab_size)
        throw index_error("token id " + std::to_string(t) + " outside vocabulary of size " +
                          std::to_string(c.vocab_size));
    for (const auto& p : patches) {
      if (p.layer < 0 || p.layer >= c.n_layers)
        throw index_error("patch layer " + std::to_string(p.layer) + " outside [0, " + std::to_string(c.n_layers - 1) +
                          "]");
      if (p.token_index >= length_ + tokens.size())
        throw index_error("patch token index " + std::to_string(p.token_index) + " outside sequence of length " +
                          std::to_string(length_ + tokens.size()));
      if (p.replacement.size() != static_cast<std::size_t>(c.d_model))
        throw index_error("patch vector has length " + std::to_string(p.replacement.size()) + ", expected d_model " +
                          std::to_string(c.d_model));
      for (float v : p.replacement)
        if (!std::isfinite(v)) throw index_error("patch vector is not finite");
    }
  }

  static const resolved_patch* find_patch(std::span<const resolved_patch> patches, int layer, hook_site site,
                                          std::size_t pos) {
    const resolved_patch* hit = nullptr;
    for (const auto& p : patches)
      if (p.layer == layer && p.site == site && p.token_index == pos) hit = &p;  // last one wins
    return hit;
  }

  void hook(std::vector<float>& v, int layer, hook_site site, std::size_t pos, const forward_options& opt,
            forward_result* result) const {
    if (const auto* p = find_patch(opt.patches, layer, site, pos)) v = p->replacement;
    if (result != nullptr && opt.capture.count(site)) result->trace.entries[{layer, site, pos}] = v;
  }

  std::vector<float> step(token_id tok, const forward_options& opt, forward_result* result) {
    const auto& m = *model_;
    const auto& c = m.config;
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto hd = static_cast<std::size_t>(c.head_dim());
    const auto nh = static_cast<std::size_t>(c.n_heads);
    const auto nkv = static_cast<std::size_t>(c.kv_heads());
    const auto kvd = nkv * hd;
    const auto group = nh / nkv;
    const std::size_t pos = length_;
    if (result != nullptr) result->trace.d_model = d;

    std::vector<float> x(d);
    const auto e = m.token_embedding.row(static_cast<std::size_t>(tok));
    std::copy(e.begin(), e.end(), x.begin());
    if (!c.rope_enabled) {
      const auto p = m.position_embedding.row(pos);
      for (std::size_t i = 0; i < d; ++i) x[i] += p[i];
    }

    std::vector<float> h(d), q(d), k(kvd), v(kvd), att(d), a(d);
    std::vector<float> g(static_cast<std::size_t>(c.d_ff)), u(static_cast<std::size_t>(c.d_ff));
    std::vector<float> mlp(d);
    std::vector<float> scores(pos + 1);
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& w = m.layers[l];
      const int li = static_cast<int>(l);

      detail::normalize(c, x.data(), w.attn_norm, w.attn_norm_bias, h.data());
      detail::matvec(w.attn_q, h.data(), q.data());
      detail::matvec(w.attn_k, h.data(), k.data());
      detail::matvec(w.attn_v, h.data(), v.data());
      if (c.rope_enabled) {
        detail::apply_rope(q.data(), nh, hd, pos, c.rope_base);
        detail::apply_rope(k.data(), nkv, hd, pos, c.rope_base);
      }
      keys_[l].insert(keys_[l].end(), k.begin(), k.end());
      values_[l].insert(values_[l].end(), v.begin(), v.end());

      for (std::size_t head = 0; head < nh; ++head) {
        const std::size_t kvh = head / group;
        const float* qh = q.data() + head * hd;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t s = 0; s <= pos; ++s) {
          scores[s] = detail::dot(qh, keys_[l].data() + s * kvd + kvh * hd, hd) * scale;
          mx = std::max(mx, scores[s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s <= pos; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          z += scores[s];
        }
        const float inv = static_cast<float>(1.0 / z);
        float* out = att.data() + head * hd;
        std::fill(out, out + hd, 0.0f);
        for (std::size_t s = 0; s <= pos; ++s) {
          scores[s] *= inv;
          const float* vs = values_[l].data() + s * kvd + kvh * hd;
          for (std::size_t i = 0; i < hd; ++i) out[i] += scores[s] * vs[i];
        }
        if (result != nullptr && opt.record_attention)
          result->attention.push_back({li, static_cast<int>(head), pos, std::vector<float>(scores.begin(), scores.end())});
      }
      detail::matvec(w.attn_out, att.data(), a.data());
      hook(a, li, hook_site::attn_out, pos, opt, result);
      for (std::size_t i = 0; i < d; ++i) x[i] += a[i];

      detail::normalize(c, x.data(), w.ffn_norm, w.ffn_norm_bias, h.data());
      detail::matvec(w.ffn_gate, h.data(), g.data());
      detail::matvec(w.ffn_up, h.data(), u.data());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = detail::silu(g[i]) * u[i];
      detail::matvec(w.ffn_down, g.data(), mlp.data());
      hook(mlp, li, hook_site::mlp_out, pos, opt, result);
      for (std::size_t i = 0; i < d; ++i) x[i] += mlp[i];

      hook(x, li, hook_site::residual_post, pos, opt, result);
    }
    ++length_;

    detail::normalize(c, x.data(), m.output_norm, m.output_norm_bias, h.data());
    std::vector<float> logits(static_cast<std::size_t>(c.vocab_size));
    detail::matvec(m.output, h.data(), logits.data());
    return logits;
  }
};

// One-shot forward over `tokens` from an empty cache. Bounds are checked for
// every patch before any compute.
inline forward_result forward(const transformer_model& model, std::span<const token_id> tokens,
                              const std::set<hook_site>& capture_sites = {},
                              std::span<const resolved_patch> interventions = {}, bool record_attention = false) {
  session s(model);
  forward_result r;
  r.logits.cols = static_cast<std::size_t>(model.config.vocab_size);
  forward_options opt{capture_sites, interventions, record_attention};
  s.feed(tokens, opt, &r);
  return r;
}

// Softmax of a logit row, accumulated in double.
inline std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) return {};
  const float mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

inline std::vector<double> next_token_distribution(const forward_result& r, std::size_t position) {
  if (position >= r.positions())
    throw index_error("position " + std::to_string(position) + " outside result of length " +
                      std::to_string(r.positions()));
  return softmax(r.logits.row(position));
}

}  // namespace patchlab
