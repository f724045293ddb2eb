#pragma once

// Depression-risk disparity: each note is gender-neutralized, inserted into
// each risk prompt, and answered twice with the residual stream at the last
// prompt token replaced by the two arms' source activations. Unknown answers
// drop the note from that prompt's pairs.

#include <map>
#include <string>
#include <vector>

#include "patchlab/harness/common.hpp"
#include "patchlab/harness/corpus.hpp"
#include "patchlab/harness/flip.hpp"
#include "patchlab/harness/texts.hpp"
#include "patchlab/metrics/scores.hpp"

namespace patchlab {

struct risk_arm {
  std::string label;
  source_capture source;
};

// Answers of every (prompt, note) for one arm.
inline std::vector<generation_record> risk_generate(const experiment_env& env, const std::vector<std::string>& notes,
                                                    const std::string& prompt, std::size_t prompt_no,
                                                    const risk_arm& arm, int layer, double scale, int window,
                                                    const sampler_config& base, int workers) {
  std::vector<generation_job> jobs;
  for (std::size_t i = 0; i < notes.size(); ++i) {
    const auto inst = render_instance(env, prompt, notes[i], true, "[BHC]");
    const auto plan = plan_patch(arm.source, inst.prompt.last_index, layer, window, scale, env.n_layers());
    jobs.push_back(make_job("p" + std::to_string(prompt_no + 1) + "/" + arm.label, inst, env.main.tok, &plan));
  }
  // Both arms use the same seed for a given (prompt, note).
  sampler_config s = base;
  s.seed = base.seed + prompt_no * notes.size();
  return batch_generate(env.main.model, env.main.tok, jobs, 1, s, workers);
}

inline report_bundle run_risk(const run_context& ctx) {
  const auto env = load_env(ctx);
  const auto root = ctx.root();
  const auto node = root.child("risk");
  const auto& tok = env.main.tok;
  const auto mode = parse_demographic_mode(node.get<std::string>("mode", "gender"));
  const auto prompts =
      node.get<std::vector<std::string>>("prompts", mode == demographic_mode::gender ? texts::risk_gender : texts::risk_race);
  for (std::size_t p = 0; p < prompts.size(); ++p)
    if (prompts[p].find("[BHC]") == std::string::npos)
      throw config_error("config: risk prompt " + std::to_string(p + 1) + " has no [BHC] placeholder");
  const auto assignment_prompts = node.get<std::vector<std::size_t>>("assignment_prompts", {0, 3});
  for (auto p : assignment_prompts)
    if (p >= prompts.size()) throw config_error("config: field 'risk.assignment_prompts' names a missing prompt");
  const hook_site site = site_of(node, hook_site::residual_post);
  int layer = node.get<int>("layer");
  double scale = node.get<double>("scale", 2.0);
  const int window = node.get<int>("window", 0);
  const bool neutralize = node.get<bool>("neutralize", true);
  const auto sampler = sampler_from(ctx, tok);

  auto notes_all = load_notes(ctx.resolve(root.get<std::string>("notes")));
  const std::size_t n_notes = ctx.n_override ? *ctx.n_override : node.get<std::size_t>("n_notes", notes_all.size());
  if (n_notes == 0) throw config_error("config: field 'risk.n_notes' must be >= 1");
  if (notes_all.size() > n_notes) notes_all.resize(n_notes);
  std::vector<std::string> texts_in;
  std::vector<std::size_t> replaced;
  for (const auto& n : notes_all) {
    if (neutralize) {
      auto r = neutralize_gender(n.text, env.lex.neutral);
      texts_in.push_back(r.text);
      replaced.push_back(r.replacements);
    } else {
      texts_in.push_back(n.text);
      replaced.push_back(0);
    }
  }

  const auto arm_nodes = node.tables("arms");
  if (arm_nodes.size() != 2) throw config_error("config: field 'risk.arms' must list exactly two arms");
  std::vector<risk_arm> arms;
  for (const auto& a : arm_nodes) {
    const auto label = a.get<std::string>("label");
    if (!env.lex.classes(mode).count(label))
      throw config_error("config: field '" + a.field("label") + "': lexicon has no class '" + label + "'");
    arms.push_back({label, capture_source(env, a, site, "", false)});
  }

  report_bundle b = new_bundle("risk", ctx, env);

  // Optional (layer, scale) selection on a validation subset by mean strict
  // assignment rate over the assignment prompts and both arms.
  if (node.has("select")) {
    const auto sel = node.child("select");
    const auto layers = sel.get<std::vector<int>>("layers");
    const auto scales = sel.get<std::vector<double>>("scales", {scale});
    const std::size_t n_val = std::min(sel.get<std::size_t>("n_notes", 20), texts_in.size());
    const std::vector<std::string> val(texts_in.begin(), texts_in.begin() + static_cast<std::ptrdiff_t>(n_val));
    table st{{"layer", "scale", "strict_rate", "relaxed_rate"}, {}};
    std::optional<std::pair<double, std::pair<int, double>>> best;
    for (int l : layers)
      for (double c : scales) {
        double strict = 0.0, relaxed = 0.0;
        std::size_t count = 0;
        for (auto p : assignment_prompts)
          for (std::size_t a = 0; a < 2; ++a) {
            const auto recs = risk_generate(env, val, prompts[p], p, arms[a], l, c, window, sampler, ctx.workers);
            for (const auto& r : recs) {
              strict += strict_assignment(r.completion_text, arms[a].label, arms[1 - a].label, env.lex, mode);
              relaxed += relaxed_assignment(r.completion_text, arms[1 - a].label, env.lex, mode);
              ++count;
            }
          }
        strict /= static_cast<double>(count);
        relaxed /= static_cast<double>(count);
        st.add({l, c, strict, relaxed});
        if (!best || strict > best->first) best = {{strict, {l, c}}};
      }
    layer = best->second.first;
    scale = best->second.second;
    b.metrics["select"] = {{"layer", layer}, {"scale", scale}, {"strict_rate", best->first}, {"n_notes", n_val}};
    b.tables["select"] = std::move(st);
  }

  table per_note{{"note_id", "prompt", "answer_a", "answer_b", "u", "v", "included"}, {}};
  table per_prompt{{"prompt", "n_notes", "n_pairs", "n_unknown_a", "n_unknown_b", "delta_risk"}, {}};
  table assign{{"prompt", "arm", "label", "n", "strict_rate", "relaxed_rate"}, {}};
  nlohmann::json prompt_metrics = nlohmann::json::array();
  std::vector<double> deltas;
  std::size_t record_index = 0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    std::vector<std::vector<generation_record>> recs;
    for (const auto& arm : arms)
      recs.push_back(risk_generate(env, texts_in, prompts[p], p, arm, layer, scale, window, sampler, ctx.workers));
    std::vector<int> u, v;
    std::size_t unk_a = 0, unk_b = 0;
    for (std::size_t i = 0; i < texts_in.size(); ++i) {
      const auto a = parse_risk_answer(recs[0][i].completion_text, env.lex);
      const auto c = parse_risk_answer(recs[1][i].completion_text, env.lex);
      unk_a += a == risk_answer::unknown;
      unk_b += c == risk_answer::unknown;
      const bool ok = a != risk_answer::unknown && c != risk_answer::unknown;
      const int ua = a == risk_answer::yes, vb = c == risk_answer::yes;
      if (ok) {
        u.push_back(ua);
        v.push_back(vb);
      }
      per_note.add({notes_all[i].id, p + 1, to_string(a), to_string(c), ok ? nlohmann::json(ua) : nlohmann::json(),
                    ok ? nlohmann::json(vb) : nlohmann::json(), ok});
    }
    nlohmann::json pm = {{"prompt", p + 1}, {"n_pairs", u.size()}, {"n_unknown_a", unk_a}, {"n_unknown_b", unk_b}};
    nlohmann::json d;
    if (!u.empty()) {
      const double dr = delta_risk(u, v);
      deltas.push_back(dr);
      d = dr;
    }
    pm["delta_risk"] = d;
    per_prompt.add({p + 1, texts_in.size(), u.size(), unk_a, unk_b, d});

    const bool assess = std::find(assignment_prompts.begin(), assignment_prompts.end(), p) != assignment_prompts.end();
    if (assess) {
      nlohmann::json am = nlohmann::json::object();
      for (std::size_t a = 0; a < 2; ++a) {
        std::size_t strict = 0, relaxed = 0;
        for (const auto& r : recs[a]) {
          strict += strict_assignment(r.completion_text, arms[a].label, arms[1 - a].label, env.lex, mode);
          relaxed += relaxed_assignment(r.completion_text, arms[1 - a].label, env.lex, mode);
        }
        const double n = static_cast<double>(recs[a].size());
        assign.add({p + 1, a == 0 ? "a" : "b", arms[a].label, recs[a].size(), strict / n, relaxed / n});
        am[arms[a].label] = {{"strict_rate", strict / n}, {"relaxed_rate", relaxed / n}};
      }
      pm["assignment"] = am;
    }
    prompt_metrics.push_back(pm);
    for (std::size_t a = 0; a < 2; ++a)
      for (auto& r : recs[a]) {
        r.label = to_string(parse_risk_answer(r.completion_text, env.lex));
        auto j = record_json(r);
        j["index"] = record_index++;
        j["note_id"] = notes_all[r.index].id;
        j["arm"] = arms[a].label;
        j["prompt"] = p + 1;
        b.records.push_back(std::move(j));
      }
  }
  const auto [mean, sd] = mean_std(deltas);
  std::size_t total_replaced = 0;
  for (auto r : replaced) total_replaced += r;
  b.metrics["prompts"] = prompt_metrics;
  b.metrics["delta_risk_mean"] = finite_or_null(mean);
  b.metrics["delta_risk_std"] = finite_or_null(sd);
  b.metrics["arms"] = {{"a", arms[0].label}, {"b", arms[1].label}};
  b.metrics["layer"] = layer;
  b.metrics["scale"] = scale;
  b.metrics["site"] = to_string(site);
  b.metrics["mode"] = to_string(mode);
  b.metrics["n_notes"] = texts_in.size();
  b.metrics["neutralized_terms"] = total_replaced;
  b.metrics["strict_assignment_rule"] = "target mentioned and counterfactual absent";
  b.tables["risk_notes"] = std::move(per_note);
  b.tables["risk"] = std::move(per_prompt);
  b.tables["assignment"] = std::move(assign);
  return b;
}

}  // namespace patchlab
