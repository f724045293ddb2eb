#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "patchlab/errors.hpp"

namespace patchlab {

// mlp_out and attn_out are block outputs before they are added into the
// residual stream; residual_post is the stream after the whole layer.
enum class hook_site { mlp_out, attn_out, residual_post };

inline const char* to_string(hook_site s) {
  switch (s) {
    case hook_site::mlp_out: return "mlp_out";
    case hook_site::attn_out: return "attn_out";
    case hook_site::residual_post: return "residual_post";
  }
  return "?";
}

inline hook_site parse_hook_site(const std::string& s) {
  if (s == "mlp_out") return hook_site::mlp_out;
  if (s == "attn_out") return hook_site::attn_out;
  if (s == "residual_post") return hook_site::residual_post;
  throw config_error("site: unknown hook site '" + s + "' (expected mlp_out, attn_out or residual_post)");
}

inline constexpr hook_site all_hook_sites[] = {hook_site::mlp_out, hook_site::attn_out, hook_site::residual_post};

struct trace_key {
  int layer;
  hook_site site;
  std::size_t token;
  auto operator<=>(const trace_key&) const = default;
};

struct activation_trace {
  std::size_t d_model = 0;
  std::string source_prompt_hash;
  std::map<trace_key, std::vector<float>> entries;

  bool contains(int layer, hook_site site, std::size_t token) const {
    return entries.count({layer, site, token}) != 0;
  }
  const std::vector<float>& at(int layer, hook_site site, std::size_t token) const {
    auto it = entries.find({layer, site, token});
    if (it == entries.end())
      throw experiment_error("missing capture: layer " + std::to_string(layer) + ", site " + to_string(site) +
                             ", token " + std::to_string(token));
    return it->second;
  }
  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

// A patch ready to apply: the activation at (layer, site, token_index) is
// replaced by `replacement` (already scaled).
struct resolved_patch {
  int layer = 0;
  hook_site site = hook_site::mlp_out;
  std::size_t token_index = 0;
  std::vector<float> replacement;
};

}  // namespace patchlab
