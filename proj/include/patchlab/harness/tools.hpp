#pragma once

// Engine utilities behind the generate, capture and inspect-model commands.

#include <map>
#include <string>
#include <vector>

#include "patchlab/harness/common.hpp"
#include "patchlab/harness/flip.hpp"

namespace patchlab {

inline report_bundle run_generate(const run_context& ctx) {
  const auto env = load_env(ctx);
  const auto node = ctx.root().child("generate");
  const auto& tok = env.main.tok;
  const bool chat = node.get<bool>("chat", true);
  const int repeat = static_cast<int>(ctx.n_override ? *ctx.n_override : node.get<std::size_t>("repeat", 1));
  const auto sampler = sampler_from(ctx, tok);

  std::vector<std::pair<std::string, std::string>> prompts;
  if (!node.has("prompts")) throw config_error("config: missing required field 'generate.prompts'");
  const auto& pj = node.raw().at("prompts");
  if (!pj.is_array() || pj.empty()) throw config_error("config: field 'generate.prompts' must be a non-empty array");
  for (std::size_t i = 0; i < pj.size(); ++i) {
    if (pj[i].is_string()) {
      prompts.emplace_back("prompt-" + std::to_string(i), pj[i].get<std::string>());
    } else {
      const cfg_node p(&pj[i], "generate.prompts[" + std::to_string(i) + "]");
      prompts.emplace_back(p.get<std::string>("id"), p.get<std::string>("text"));
    }
  }

  std::vector<std::pair<cfg_node, source_capture>> sources;
  for (const auto& iv : node.tables("interventions"))
    sources.emplace_back(iv, capture_source(env, iv, site_of(iv, hook_site::mlp_out), "", false));

  std::vector<generation_job> jobs;
  for (const auto& [id, text] : prompts) {
    const auto inst = render_instance(env, text, std::nullopt, chat);
    auto job = make_job(id, inst, tok);
    for (const auto& [iv, src] : sources) {
      const nlohmann::json rule = iv.has("target_token") ? iv.raw().at("target_token") : "prompt_last";
      const auto target = resolve_token_rule(rule, inst, iv.field("target_token"));
      const auto plan =
          plan_patch(src, target, iv.get<int>("layer"), iv.get<int>("window", 0), iv.get<double>("scale", 1.0), env.n_layers());
      job.patches.insert(job.patches.end(), plan.patches.begin(), plan.patches.end());
      job.interventions.push_back(plan.spec);
    }
    jobs.push_back(std::move(job));
  }
  auto recs = batch_generate(env.main.model, tok, jobs, repeat, sampler, ctx.workers);
  report_bundle b = new_bundle("generate", ctx, env);
  table t{{"index", "prompt_id", "seed", "n_tokens", "stop_reason"}, {}};
  std::map<std::string, std::size_t> stops;
  for (const auto& r : recs) {
    t.add({r.index, r.prompt_id, r.seed, r.completion_tokens.size(), r.stop_reason});
    ++stops[r.stop_reason];
    b.records.push_back(record_json(r));
  }
  b.metrics["n_records"] = recs.size();
  b.metrics["repeat"] = repeat;
  b.metrics["stop_reasons"] = stops;
  b.tables["generations"] = std::move(t);
  return b;
}

inline report_bundle run_capture(const run_context& ctx) {
  const auto env = load_env(ctx);
  const auto node = ctx.root().child("capture");
  const auto& tok = env.main.tok;
  const auto inst = render_instance(env, node.get<std::string>("prompt"), std::nullopt, node.get<bool>("chat", false));
  std::set<hook_site> sites;
  for (const auto& s : node.get<std::vector<std::string>>("sites", {"mlp_out"})) sites.insert(parse_hook_site(s));
  std::vector<int> layers = node.get<std::vector<int>>("layers", {});
  if (layers.empty())
    for (int l = 0; l < env.n_layers(); ++l) layers.push_back(l);
  for (int l : layers)
    if (l < 0 || l >= env.n_layers()) throw index_error("capture: layer " + std::to_string(l) + " outside the model");
  std::vector<std::size_t> positions;
  const nlohmann::json rule = node.has("tokens") ? node.raw().at("tokens") : "all";
  if (rule == "all") {
    for (std::size_t i = 0; i < inst.prompt.tokens.size(); ++i) positions.push_back(i);
  } else {
    positions.push_back(resolve_token_rule(rule, inst, node.field("tokens")));
  }
  const auto trace = capture(env.main.model, inst.prompt.tokens, sites);

  report_bundle b = new_bundle("capture", ctx, env);
  table t{{"layer", "site", "token_index", "token", "l2_norm"}, {}};
  nlohmann::json vectors = nlohmann::json::array();
  for (hook_site s : sites)
    for (int l : layers)
      for (std::size_t p : positions) {
        const auto& v = trace.at(l, s, p);
        double ss = 0.0;
        for (float x : v) ss += static_cast<double>(x) * x;
        t.add({l, to_string(s), p, tok.token_string(inst.prompt.tokens[p]), std::sqrt(ss)});
        vectors.push_back({{"layer", l}, {"site", to_string(s)}, {"token_index", p}, {"values", v}});
      }
  std::vector<std::string> strings;
  for (auto id : inst.prompt.tokens) strings.push_back(tok.token_string(id));
  b.metrics["prompt"] = inst.prompt.text;
  b.metrics["tokens"] = strings;
  b.metrics["token_ids"] = inst.prompt.tokens;
  b.metrics["source_prompt_hash"] = trace.source_prompt_hash;
  b.metrics["vectors"] = vectors;
  b.tables["capture"] = std::move(t);
  return b;
}

inline report_bundle inspect_model(const fs::path& model_path, const std::optional<fs::path>& tokenizer_path) {
  const auto m = load_model_pair(model_path, tokenizer_path);
  report_bundle b;
  b.kind = "inspect-model";
  b.config = {{"model", model_path.filename().string()}};
  b.provenance = {{"engine_version", engine_version},
                  {"model_digest", m.model.digest},
                  {"tokenizer_digest", m.tokenizer_digest}};
  table t{{"name", "rows", "cols"}, {}};
  std::size_t params = 0;
  for (const auto& s : expected_tensors(m.model.config)) {
    t.add({s.name, s.rows, s.cols});
    params += s.rows * s.cols;
  }
  b.metrics["config"] = m.model.config;
  b.metrics["parameters"] = params;
  b.metrics["vocab_size"] = m.tok.size();
  std::map<std::string, token_id> specials(m.tok.specials().begin(), m.tok.specials().end());
  b.metrics["special_tokens"] = specials;
  b.tables["tensors"] = std::move(t);
  return b;
}

}  // namespace patchlab
