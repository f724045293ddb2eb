#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/core/digest.hpp"
#include "patchlab/core/rng.hpp"
#include "patchlab/errors.hpp"
#include "patchlab/model/forward.hpp"
#include "patchlab/model/hooks.hpp"

namespace patchlab {

inline constexpr int intervention_schema_version = 1;

// Patch `source_prompt`'s activation at source_token_index into the target
// prompt at target_token_index, for every layer of the window around `layer`.
struct intervention_spec {
  std::string source_prompt;
  std::size_t source_token_index = 0;
  hook_site site = hook_site::mlp_out;
  std::size_t target_token_index = 0;
  int layer = 0;
  int window_radius = 0;
  double scale = 1.0;

  void validate() const {
    if (!(std::isfinite(scale) && scale > 0.0))
      throw config_error("intervention: scale must be finite and > 0, got " + std::to_string(scale));
    if (window_radius < 0) throw config_error("intervention: window_radius must be >= 0");
    if (layer < 0) throw config_error("intervention: layer must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const intervention_spec& s) {
  j = nlohmann::json{{"schema_version", intervention_schema_version},
                     {"source_prompt", s.source_prompt},
                     {"source_token_index", s.source_token_index},
                     {"site", to_string(s.site)},
                     {"target_token_index", s.target_token_index},
                     {"layer", s.layer},
                     {"window_radius", s.window_radius},
                     {"scale", s.scale}};
}

inline void from_json(const nlohmann::json& j, intervention_spec& s) {
  const int v = j.value("schema_version", intervention_schema_version);
  if (v != intervention_schema_version)
    throw config_error("intervention: unsupported schema_version " + std::to_string(v));
  auto need = [&](const char* k) -> const nlohmann::json& {
    if (!j.contains(k)) throw config_error(std::string("intervention: missing field '") + k + "'");
    return j.at(k);
  };
  s.source_prompt = need("source_prompt").get<std::string>();
  s.source_token_index = need("source_token_index").get<std::size_t>();
  s.site = parse_hook_site(need("site").get<std::string>());
  s.target_token_index = need("target_token_index").get<std::size_t>();
  s.layer = need("layer").get<int>();
  s.window_radius = j.value("window_radius", 0);
  s.scale = j.value("scale", 1.0);
  s.validate();
}

// Runs `tokens` once and records every position of every requested site.
inline activation_trace capture(const transformer_model& model, std::span<const token_id> tokens,
                                const std::set<hook_site>& sites) {
  activation_trace t;
  t.d_model = static_cast<std::size_t>(model.config.d_model);
  fnv1a64 h;
  h.update(std::as_bytes(tokens));
  t.source_prompt_hash = h.hex();
  if (sites.empty()) return t;
  auto r = forward(model, tokens, sites);
  t.entries = std::move(r.trace.entries);
  return t;
}

// {layer - radius .. layer + radius} clamped to [0, n_layers - 1], ascending.
inline std::vector<int> resolve_window(int layer, int radius, int n_layers) {
  if (layer < 0 || layer >= n_layers)
    throw index_error("layer " + std::to_string(layer) + " outside [0, " + std::to_string(n_layers - 1) + "]");
  if (radius < 0) throw config_error("window radius must be >= 0");
  std::vector<int> out;
  for (int l = std::max(0, layer - radius); l <= std::min(n_layers - 1, layer + radius); ++l) out.push_back(l);
  return out;
}

inline std::vector<float> scaled(const std::vector<float>& v, double c) {
  std::vector<float> out(v.size());
  const float f = static_cast<float>(c);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * f;
  return out;
}

// One patch per window layer, each taking the source capture of that same
// layer, scaled by spec.scale.
inline std::vector<resolved_patch> resolve_intervention(const intervention_spec& spec, const activation_trace& source,
                                                        int n_layers) {
  spec.validate();
  std::vector<resolved_patch> out;
  for (int l : resolve_window(spec.layer, spec.window_radius, n_layers)) {
    const auto& v = source.at(l, spec.site, spec.source_token_index);
    out.push_back({l, spec.site, spec.target_token_index, scaled(v, spec.scale)});
  }
  return out;
}

// Number of positions the distortion baseline touches for n tokens.
inline std::size_t distortion_subset_size(std::size_t n_tokens, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n_tokens) + 0.5));
}

struct distortion_params {
  double token_fraction = 0.5;
  std::vector<int> layers = {0, 4, 8, 12, 16, 20, 24};
  double scale = 20.0;
  hook_site site = hook_site::mlp_out;
  std::uint64_t seed = 0;
};

// Writes scale * source_vector at every listed layer for a seeded random
// subset of target positions (partial Fisher-Yates over the counter RNG).
inline std::vector<resolved_patch> distortion_baseline(std::size_t n_target_tokens,
                                                       const std::vector<float>& source_vector,
                                                       const distortion_params& p, int n_layers) {
  if (n_target_tokens == 0) throw experiment_error("distortion baseline: empty target prompt");
  if (!(p.token_fraction > 0.0 && p.token_fraction <= 1.0))
    throw config_error("distortion baseline: token_fraction must be in (0, 1]");
  for (int l : p.layers)
    if (l < 0 || l >= n_layers)
      throw index_error("distortion baseline: layer " + std::to_string(l) + " outside [0, " +
                        std::to_string(n_layers - 1) + "]");
  const std::size_t k = distortion_subset_size(n_target_tokens, p.token_fraction);
  std::vector<std::size_t> idx(n_target_tokens);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  counter_rng rng(p.seed, 0x64697374);  // "dist"
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.next_below(n_target_tokens - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());
  std::vector<resolved_patch> out;
  const auto v = scaled(source_vector, p.scale);
  for (int l : p.layers)
    for (std::size_t t : chosen) out.push_back({l, p.site, t, v});
  return out;
}

}  // namespace patchlab
