#pragma once

// Differential-diagnosis ranks per demographic arm, compared pairwise with
// Mann-Whitney. An arm is explicit (the case's "patient" is replaced by the
// arm's text) or patched (neutral case plus an activation patch).

#include <map>
#include <string>
#include <vector>

#include "patchlab/harness/common.hpp"
#include "patchlab/harness/flip.hpp"
#include "patchlab/harness/texts.hpp"
#include "patchlab/metrics/mann_whitney.hpp"

namespace patchlab {

// Replaces every whole-word occurrence of `word` (case-sensitive).
inline std::string replace_word(const std::string& text, const std::string& word, const std::string& with) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto at = text.find(word, i);
    if (at == std::string::npos) break;
    const bool left = at == 0 || !detail::word_char(text[at - 1]);
    const bool right = at + word.size() == text.size() || !detail::word_char(text[at + word.size()]);
    out += text.substr(i, at - i);
    out += left && right ? with : word;
    i = at + word.size();
  }
  return out + text.substr(std::min(i, text.size()));
}

inline report_bundle run_rank(const run_context& ctx) {
  const auto env = load_env(ctx);
  const auto node = ctx.root().child("rank");
  const auto& tok = env.main.tok;
  const auto case_text = node.get<std::string>("case", texts::case_gender);
  const auto prompt = node.get<std::string>("prompt", texts::ddx_prompt);
  if (prompt.find("[CASE]") == std::string::npos) throw config_error("config: field 'rank.prompt' has no [CASE]");
  const bool chat = node.get<bool>("chat", true);
  const auto diagnosis = node.get<std::string>("diagnosis");
  const auto synonyms = node.get<std::vector<std::string>>("synonyms", {});
  const auto placeholder = node.get<std::string>("placeholder_word", "patient");
  const std::size_t n = sample_count(ctx, node);
  const auto sampler = sampler_from(ctx, tok);

  const auto arm_nodes = node.tables("arms");
  if (arm_nodes.size() < 2) throw config_error("config: field 'rank.arms' needs at least two arms");
  std::vector<std::string> names;
  std::map<std::string, std::vector<std::optional<int>>> ranks;
  report_bundle b = new_bundle("rank", ctx, env);
  table rank_rows{{"arm", "sample", "rank"}, {}};
  table hist{{"arm", "rank", "count"}, {}};
  nlohmann::json arm_metrics = nlohmann::json::object();
  std::size_t record_index = 0;
  for (const auto& a : arm_nodes) {
    const auto name = a.get<std::string>("name");
    if (ranks.count(name)) throw config_error("config: duplicate rank arm '" + name + "'");
    names.push_back(name);
    generation_job job;
    std::string kind;
    if (a.has("replace")) {
      kind = "explicit";
      const auto c = replace_word(case_text, placeholder, a.get<std::string>("replace"));
      const auto inst = render_instance(env, prompt, c, chat, "[CASE]");
      job = make_job(name, inst, tok);
    } else {
      kind = "patched";
      const auto inst = render_instance(env, prompt, case_text, chat, "[CASE]");
      const auto src = capture_source(env, a, site_of(a, hook_site::residual_post), "", false);
      const nlohmann::json rule = a.has("target_token") ? a.raw().at("target_token") : "prompt_last";
      const auto target = resolve_token_rule(rule, inst, a.field("target_token"));
      const auto plan =
          plan_patch(src, target, a.get<int>("layer"), a.get<int>("window", 0), a.get<double>("scale", 1.0), env.n_layers());
      job = make_job(name, inst, tok, &plan);
    }
    // Every arm uses seeds base .. base + n - 1.
    auto recs = batch_generate(env.main.model, tok, {job}, static_cast<int>(n), sampler, ctx.workers);
    auto& rk = ranks[name];
    std::map<int, std::size_t> counts;
    std::size_t not_found = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto r = rank_of_diagnosis(recs[i].completion_text, diagnosis, synonyms);
      rk.push_back(r);
      rank_rows.add({name, i, r ? nlohmann::json(*r) : nlohmann::json()});
      if (r) {
        ++counts[*r];
        sum += *r;
      } else {
        ++not_found;
      }
      recs[i].label = r ? std::to_string(*r) : "not_found";
      auto j = record_json(recs[i]);
      j["index"] = record_index++;
      j["arm"] = name;
      j["rank"] = r ? nlohmann::json(*r) : nlohmann::json();
      b.records.push_back(std::move(j));
    }
    for (const auto& [r, c] : counts) hist.add({name, r, c});
    hist.add({name, "not_found", not_found});
    const std::size_t found = recs.size() - not_found;
    arm_metrics[name] = {{"kind", kind},
                         {"n", found},
                         {"n_generated", recs.size()},
                         {"not_found", not_found},
                         {"mean_rank", found ? nlohmann::json(sum / static_cast<double>(found)) : nlohmann::json()}};
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  if (node.has("compare")) {
    for (const auto& p : node.get<std::vector<std::vector<std::string>>>("compare")) {
      if (p.size() != 2 || !ranks.count(p[0]) || !ranks.count(p[1]))
        throw config_error("config: field 'rank.compare' entries must name two arms");
      pairs.emplace_back(p[0], p[1]);
    }
  } else {
    pairs.emplace_back(names[0], names[1]);
  }
  table mw{{"arm_a", "arm_b", "n_a", "n_b", "mean_a", "mean_b", "mean_diff", "u", "p", "exact"}, {}};
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& [x, y] : pairs) {
    std::vector<double> a, c;
    for (const auto& r : ranks[x])
      if (r) a.push_back(*r);
    for (const auto& r : ranks[y])
      if (r) c.push_back(*r);
    nlohmann::json cj = {{"arm_a", x}, {"arm_b", y}, {"n_a", a.size()}, {"n_b", c.size()}};
    if (a.empty() || c.empty()) {
      cj["error"] = "an arm has no ranked completions";
      mw.add({x, y, a.size(), c.size(), nullptr, nullptr, nullptr, nullptr, nullptr, nullptr});
    } else {
      const auto res = mann_whitney(a, c);
      const double ma = mean_std(a).first, mc = mean_std(c).first;
      cj["u"] = res.u;
      cj["p"] = res.p;
      cj["exact"] = res.exact;
      cj["mean_diff"] = ma - mc;
      mw.add({x, y, a.size(), c.size(), ma, mc, ma - mc, res.u, res.p, res.exact});
    }
    comps.push_back(cj);
  }
  b.metrics["arms"] = arm_metrics;
  b.metrics["comparisons"] = comps;
  b.metrics["diagnosis"] = diagnosis;
  b.metrics["synonyms"] = synonyms;
  b.metrics["n_per_arm"] = n;
  b.tables["ranks"] = std::move(rank_rows);
  b.tables["rank_hist"] = std::move(hist);
  b.tables["mann_whitney"] = std::move(mw);
  return b;
}

}  // namespace patchlab
