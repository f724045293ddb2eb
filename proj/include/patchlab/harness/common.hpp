#pragma once

// Pieces shared by the experiment runners: model/tokenizer loading, prompt
// rendering with condition spans, token-selection rules, source captures,
// sampler settings and report provenance.

#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "patchlab/core/digest.hpp"
#include "patchlab/generate/chat.hpp"
#include "patchlab/generate/generate.hpp"
#include "patchlab/harness/config.hpp"
#include "patchlab/harness/report.hpp"
#include "patchlab/intervene/intervention.hpp"
#include "patchlab/metrics/lexicon.hpp"
#include "patchlab/model/gguf.hpp"
#include "patchlab/model/toy_format.hpp"

namespace patchlab {

struct loaded_model {
  transformer_model model;
  tokenizer tok;
  std::string tokenizer_digest;
};

inline loaded_model load_model_pair(const fs::path& model_path, const std::optional<fs::path>& tokenizer_path) {
  loaded_model m;
  m.model = load_model(model_path);
  if (tokenizer_path) {
    m.tok = tokenizer::load(*tokenizer_path);
    const auto bytes = detail::read_file_bytes(*tokenizer_path);
    m.tokenizer_digest = digest_hex(std::string_view(bytes.data(), bytes.size()));
  } else if (is_gguf_path(model_path)) {
    m.tok = load_gguf_tokenizer(model_path);
    m.tokenizer_digest = m.model.digest;
  } else {
    throw config_error("config: field 'tokenizer' is required for non-GGUF model '" + model_path.string() + "'");
  }
  if (m.tok.size() > static_cast<std::size_t>(m.model.config.vocab_size))
    throw format_error("tokenizer has " + std::to_string(m.tok.size()) + " tokens but the model vocabulary is " +
                       std::to_string(m.model.config.vocab_size));
  return m;
}

struct experiment_env {
  loaded_model main;
  std::optional<loaded_model> judge;
  chat_template chat;
  lexicon lex;
  int n_layers() const { return main.model.config.n_layers; }
};

inline experiment_env load_env(const run_context& ctx, bool need_judge = false) {
  const auto root = ctx.root();
  experiment_env env;
  auto tok_path = [&](const char* key) -> std::optional<fs::path> {
    if (auto p = root.maybe<std::string>(key)) return ctx.resolve(*p);
    return std::nullopt;
  };
  env.main = load_model_pair(ctx.resolve(root.get<std::string>("model")), tok_path("tokenizer"));
  if (need_judge) {
    if (!root.has("judge")) throw config_error("config: missing required field 'judge'");
    auto jt = tok_path("judge_tokenizer");
    if (!jt && !is_gguf_path(root.get<std::string>("judge"))) jt = tok_path("tokenizer");
    env.judge = load_model_pair(ctx.resolve(root.get<std::string>("judge")), jt);
  }
  if (root.has("chat")) {
    try {
      env.chat = root.raw().at("chat").get<chat_template>();
    } catch (const nlohmann::json::exception& e) {
      throw config_error("config: field 'chat': " + std::string(e.what()));
    }
  }
  env.chat.validate(env.main.tok);
  env.lex = root.has("lexicon") ? load_lexicon(ctx.resolve(root.get<std::string>("lexicon"))) : default_lexicon();
  return env;
}

// A rendered prompt plus the byte span of its [CONDITION] substitution.
struct prompt_instance {
  rendered_prompt prompt;
  std::optional<std::pair<std::size_t, std::size_t>> condition_span;  // bytes in prompt.text
  std::optional<std::size_t> condition_first;
  std::optional<std::size_t> condition_last;
};

inline const std::string condition_placeholder = "[CONDITION]";

inline prompt_instance render_instance(const experiment_env& env, const std::string& tmpl,
                                       const std::optional<std::string>& condition, bool chat,
                                       const std::string& placeholder = condition_placeholder) {
  std::string user = tmpl;
  std::optional<std::pair<std::size_t, std::size_t>> span;
  if (condition) {
    const auto at = tmpl.find(placeholder);
    if (at == std::string::npos) throw config_error("config: template has no " + placeholder + " placeholder");
    user = tmpl.substr(0, at) + *condition + tmpl.substr(at + placeholder.size());
    span = std::make_pair(at, at + condition->size());
    if (user.find(placeholder) != std::string::npos)
      throw config_error("config: template has more than one " + placeholder + " placeholder");
  }
  prompt_instance p;
  p.prompt = chat ? render_chat(env.chat, env.main.tok, user) : render_plain(env.main.tok, user);
  if (span) {
    p.condition_span = std::make_pair(p.prompt.user_pos(span->first), p.prompt.user_pos(span->second));
    const auto& pieces = p.prompt.pieces;
    for (std::size_t i = 0; i < pieces.size(); ++i)
      if (pieces[i].begin < p.condition_span->second && pieces[i].end > p.condition_span->first) {
        if (!p.condition_first) p.condition_first = i;
        p.condition_last = i;
      }
    if (!p.condition_last) throw experiment_error("condition '" + *condition + "' produced no tokens");
  }
  return p;
}

// Token rules: "last" / "prompt_last", "condition_last", an integer index,
// or any other string, which selects the last token of its first occurrence
// in the user text.
inline std::size_t resolve_token_rule(const nlohmann::json& rule, const prompt_instance& p, const std::string& field) {
  const auto& r = p.prompt;
  if (rule.is_number_integer()) {
    const auto i = rule.get<long long>();
    if (i < 0 || static_cast<std::size_t>(i) >= r.tokens.size())
      throw index_error("config: field '" + field + "': token index " + std::to_string(i) + " outside prompt of " +
                        std::to_string(r.tokens.size()) + " tokens");
    return static_cast<std::size_t>(i);
  }
  if (!rule.is_string()) throw config_error("config: field '" + field + "' must be a string or an integer");
  const auto s = rule.get<std::string>();
  if (s == "last" || s == "prompt_last") return r.last_index;
  if (s == "condition_last") {
    if (!p.condition_last) throw config_error("config: field '" + field + "' is condition_last but there is no condition");
    return *p.condition_last;
  }
  const auto at = r.text.find(s, r.user_offset);
  if (s.empty() || at == std::string::npos)
    throw config_error("config: field '" + field + "': '" + s + "' does not occur in the prompt");
  const auto idx = last_token_in_span(r.pieces, at, at + s.size());
  if (!idx) throw config_error("config: field '" + field + "': '" + s + "' covers no token");
  return *idx;
}

// A captured source activation: the prompt, the chosen token and the trace of
// one site at every layer and position.
struct source_capture {
  std::string text;
  prompt_instance prompt;
  std::size_t token = 0;
  hook_site site = hook_site::mlp_out;
  activation_trace trace;
};

// Reads source_prompt or source_condition (rendered through `tmpl`), plus
// source_token and source_chat, from `node`.
inline source_capture capture_source(const experiment_env& env, const cfg_node& node, hook_site site,
                                     const std::string& tmpl, bool tmpl_chat) {
  source_capture s;
  s.site = site;
  if (node.has("source_condition")) {
    const auto cond = node.get<std::string>("source_condition");
    s.prompt = render_instance(env, tmpl, cond, node.get<bool>("source_chat", tmpl_chat));
  } else {
    s.prompt = render_instance(env, node.get<std::string>("source_prompt"), std::nullopt,
                               node.get<bool>("source_chat", false));
  }
  s.text = s.prompt.prompt.text;
  const nlohmann::json rule = node.has("source_token") ? node.raw().at("source_token") : nlohmann::json("last");
  s.token = resolve_token_rule(rule, s.prompt, node.field("source_token"));
  s.trace = capture(env.main.model, s.prompt.prompt.tokens, {site});
  return s;
}

struct patch_plan {
  intervention_spec spec;
  std::vector<resolved_patch> patches;
};

inline patch_plan plan_patch(const source_capture& src, std::size_t target_index, int layer, int window, double scale,
                             int n_layers) {
  patch_plan p;
  p.spec.source_prompt = src.text;
  p.spec.source_token_index = src.token;
  p.spec.site = src.site;
  p.spec.target_token_index = target_index;
  p.spec.layer = layer;
  p.spec.window_radius = window;
  p.spec.scale = scale;
  p.spec.validate();
  if (layer >= n_layers)
    throw index_error("intervention layer " + std::to_string(layer) + " outside [0, " + std::to_string(n_layers - 1) +
                      "]");
  p.patches = resolve_intervention(p.spec, src.trace, n_layers);
  return p;
}

inline hook_site site_of(const cfg_node& node, hook_site fallback) {
  if (!node.has("site")) return fallback;
  return parse_hook_site(node.get<std::string>("site"));
}

// [sampler]: temperature, max_tokens, stop (token strings). The default stop
// set is whichever common end-of-text markers the tokenizer has.
inline sampler_config sampler_from(const run_context& ctx, const tokenizer& tok, double default_temperature = 0.7) {
  const auto node = ctx.root().child("sampler");
  sampler_config s;
  s.temperature = node.get<double>("temperature", default_temperature);
  s.max_tokens = node.get<int>("max_tokens", 512);
  s.seed = ctx.seed;
  const auto stops = node.get<std::vector<std::string>>(
      "stop", {"<|endoftext|>", "</s>", "<|eot_id|>", "<|im_end|>", "<|end|>", "<end_of_turn>"});
  const bool explicit_stops = node.has("stop");
  for (const auto& name : stops) {
    auto id = tok.special(name);
    if (!id) id = tok.id_of(name);
    if (id)
      s.stop_tokens.insert(*id);
    else if (explicit_stops)
      throw config_error("config: field 'sampler.stop': '" + name + "' is not a token");
  }
  s.validate();
  return s;
}

inline std::size_t sample_count(const run_context& ctx, const cfg_node& node, std::size_t fallback = 200) {
  if (ctx.n_override) return *ctx.n_override;
  const auto n = node.has("n") ? node.get<std::size_t>("n") : ctx.root().get<std::size_t>("n", fallback);
  if (n == 0) throw config_error("config: field '" + node.field("n") + "' must be >= 1");
  return n;
}

inline nlohmann::json provenance(const run_context& ctx, const experiment_env& env) {
  nlohmann::json p;
  p["engine_version"] = engine_version;
  p["seed"] = ctx.seed;
  p["seed_source"] = ctx.seed_source;
  p["PATCHLAB_SEED"] = ctx.env_seed ? nlohmann::json(*ctx.env_seed) : nlohmann::json();
  p["model_digest"] = env.main.model.digest;
  p["tokenizer_digest"] = env.main.tokenizer_digest;
  p["record_schema_version"] = record_schema_version;
  p["intervention_schema_version"] = intervention_schema_version;
  if (env.judge) {
    p["judge_digest"] = env.judge->model.digest;
    p["judge_tokenizer_digest"] = env.judge->tokenizer_digest;
  }
  p["config_digest"] = digest_hex(config_echo(ctx).dump());
  return p;
}

inline report_bundle new_bundle(const std::string& kind, const run_context& ctx, const experiment_env& env) {
  report_bundle b;
  b.kind = kind;
  b.config = config_echo(ctx);
  b.provenance = provenance(ctx, env);
  return b;
}

inline nlohmann::json record_json(const generation_record& r) { return nlohmann::json(r); }

}  // namespace patchlab
