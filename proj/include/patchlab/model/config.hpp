#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "patchlab/errors.hpp"

namespace patchlab {

enum class norm_kind { rms, layer };

inline const char* to_string(norm_kind k) { return k == norm_kind::rms ? "rms" : "layer"; }

inline norm_kind parse_norm_kind(const std::string& s) {
  if (s == "rms") return norm_kind::rms;
  if (s == "layer") return norm_kind::layer;
  throw format_error("norm_kind: unknown value '" + s + "' (expected 'rms' or 'layer')");
}

// Architecture of a decoder-only pre-norm transformer with a SwiGLU MLP.
struct model_config {
  int n_layers = 0;
  int d_model = 0;
  int n_heads = 0;
  int n_kv_heads = 0;  // grouped-query attention; 0 means "same as n_heads"
  int d_ff = 0;
  int vocab_size = 0;
  int max_seq_len = 0;
  norm_kind norm = norm_kind::rms;
  bool rope_enabled = false;
  float rope_base = 10000.0f;
  float norm_eps = 1e-5f;

  int kv_heads() const { return n_kv_heads == 0 ? n_heads : n_kv_heads; }
  int head_dim() const { return d_model / n_heads; }
  int kv_dim() const { return kv_heads() * head_dim(); }

  // Throws format_error naming the first violated invariant.
  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v < 1) throw format_error(std::string(name) + " must be >= 1, got " + std::to_string(v));
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(d_ff, "d_ff");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    if (d_model % n_heads != 0) throw format_error("d_model not divisible by n_heads");
    if (n_kv_heads < 0) throw format_error("n_kv_heads must be >= 0");
    if (n_heads % kv_heads() != 0) throw format_error("n_heads not divisible by n_kv_heads");
    if (rope_enabled && head_dim() % 2 != 0) throw format_error("rotary embedding needs an even head_dim");
    if (!(norm_eps > 0.0f)) throw format_error("norm_eps must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const model_config& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},       {"n_kv_heads", c.n_kv_heads},
                     {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len}, {"norm_kind", to_string(c.norm)},
                     {"rope_enabled", c.rope_enabled}, {"rope_base", c.rope_base},
                     {"norm_eps", c.norm_eps}};
}

inline model_config config_from_json(const nlohmann::json& j) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw format_error(std::string("config: missing field '") + key + "'");
    return j.at(key);
  };
  auto get_int = [&](const char* key) {
    const auto& v = need(key);
    if (!v.is_number_integer()) throw format_error(std::string("config: field '") + key + "' must be an integer");
    return v.get<int>();
  };
  model_config c;
  c.n_layers = get_int("n_layers");
  c.d_model = get_int("d_model");
  c.n_heads = get_int("n_heads");
  c.n_kv_heads = j.value("n_kv_heads", 0);
  c.d_ff = get_int("d_ff");
  c.vocab_size = get_int("vocab_size");
  c.max_seq_len = get_int("max_seq_len");
  c.norm = parse_norm_kind(j.value("norm_kind", std::string("rms")));
  c.rope_enabled = j.value("rope_enabled", false);
  c.rope_base = j.value("rope_base", 10000.0f);
  c.norm_eps = j.value("norm_eps", 1e-5f);
  return c;
}

}  // namespace patchlab
