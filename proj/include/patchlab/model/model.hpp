#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchlab/errors.hpp"
#include "patchlab/model/config.hpp"

namespace patchlab {

// Dense row-major float matrix.
struct matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  matrix() = default;
  matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool empty() const { return data.empty(); }
  std::array<std::size_t, 2> shape() const { return {rows, cols}; }
};

struct layer_weights {
  std::vector<float> attn_norm;
  std::vector<float> attn_norm_bias;  // layer-norm only
  matrix attn_q;                      // [n_heads*head_dim, d_model]
  matrix attn_k;                      // [kv_dim, d_model]
  matrix attn_v;                      // [kv_dim, d_model]
  matrix attn_out;                    // [d_model, n_heads*head_dim]
  std::vector<float> ffn_norm;
  std::vector<float> ffn_norm_bias;
  matrix ffn_gate;  // [d_ff, d_model]
  matrix ffn_up;    // [d_ff, d_model]
  matrix ffn_down;  // [d_model, d_ff]
};

// Weights plus architecture. Instances are never mutated after loading, so a
// const reference can be shared freely between threads.
struct transformer_model {
  model_config config;
  matrix token_embedding;     // [vocab, d_model]
  matrix position_embedding;  // [max_seq_len, d_model]; empty when rope_enabled
  std::vector<layer_weights> layers;
  std::vector<float> output_norm;
  std::vector<float> output_norm_bias;
  matrix output;  // [vocab, d_model]
  std::string digest;  // digest of the source bytes
};

// Name and expected shape of every tensor, in the canonical storage order.
// Vectors are reported as [n, 1].
struct tensor_slot {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

inline std::vector<tensor_slot> expected_tensors(const model_config& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto kv = static_cast<std::size_t>(c.kv_dim());
  const bool ln = c.norm == norm_kind::layer;
  std::vector<tensor_slot> out;
  out.push_back({"token_embd", v, d});
  if (!c.rope_enabled) out.push_back({"pos_embd", static_cast<std::size_t>(c.max_seq_len), d});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "blk." + std::to_string(l) + ".";
    out.push_back({p + "attn_norm", d, 1});
    if (ln) out.push_back({p + "attn_norm_bias", d, 1});
    out.push_back({p + "attn_q", d, d});
    out.push_back({p + "attn_k", kv, d});
    out.push_back({p + "attn_v", kv, d});
    out.push_back({p + "attn_output", d, d});
    out.push_back({p + "ffn_norm", d, 1});
    if (ln) out.push_back({p + "ffn_norm_bias", d, 1});
    out.push_back({p + "ffn_gate", ff, d});
    out.push_back({p + "ffn_up", ff, d});
    out.push_back({p + "ffn_down", d, ff});
  }
  out.push_back({"output_norm", d, 1});
  if (ln) out.push_back({"output_norm_bias", d, 1});
  out.push_back({"output", v, d});
  return out;
}

// Visits every weight buffer in expected_tensors() order.
template <typename Model, typename Fn>
void for_each_tensor(Model& m, Fn&& fn) {
  const auto& c = m.config;
  const bool ln = c.norm == norm_kind::layer;
  fn(m.token_embedding.data);
  if (!c.rope_enabled) fn(m.position_embedding.data);
  for (auto& l : m.layers) {
    fn(l.attn_norm);
    if (ln) fn(l.attn_norm_bias);
    fn(l.attn_q.data);
    fn(l.attn_k.data);
    fn(l.attn_v.data);
    fn(l.attn_out.data);
    fn(l.ffn_norm);
    if (ln) fn(l.ffn_norm_bias);
    fn(l.ffn_gate.data);
    fn(l.ffn_up.data);
    fn(l.ffn_down.data);
  }
  fn(m.output_norm);
  if (ln) fn(m.output_norm_bias);
  fn(m.output.data);
}

// Allocates zero-filled weights with the shapes implied by `c`.
inline transformer_model allocate_model(const model_config& c) {
  c.validate();
  transformer_model m;
  m.config = c;
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto kv = static_cast<std::size_t>(c.kv_dim());
  const bool ln = c.norm == norm_kind::layer;
  m.token_embedding = matrix(static_cast<std::size_t>(c.vocab_size), d);
  if (!c.rope_enabled) m.position_embedding = matrix(static_cast<std::size_t>(c.max_seq_len), d);
  m.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& l : m.layers) {
    l.attn_norm.assign(d, 1.0f);
    if (ln) l.attn_norm_bias.assign(d, 0.0f);
    l.attn_q = matrix(d, d);
    l.attn_k = matrix(kv, d);
    l.attn_v = matrix(kv, d);
    l.attn_out = matrix(d, d);
    l.ffn_norm.assign(d, 1.0f);
    if (ln) l.ffn_norm_bias.assign(d, 0.0f);
    l.ffn_gate = matrix(ff, d);
    l.ffn_up = matrix(ff, d);
    l.ffn_down = matrix(d, ff);
  }
  m.output_norm.assign(d, 1.0f);
  if (ln) m.output_norm_bias.assign(d, 0.0f);
  m.output = matrix(static_cast<std::size_t>(c.vocab_size), d);
  return m;
}

}  // namespace patchlab
