#pragma once

// Flip experiments (demographic ratio before / after patching per cell) and
// the perplexity check of patched completions under a judge model.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "patchlab/harness/common.hpp"
#include "patchlab/harness/texts.hpp"
#include "patchlab/metrics/scores.hpp"

namespace patchlab {

struct flip_cell {
  std::string name;
  double scale = 1.0;
  int window = 0;
};

inline std::vector<flip_cell> flip_cells(const cfg_node& node) {
  std::vector<flip_cell> cells;
  for (const auto& c : node.tables("cells"))
    cells.push_back({c.get<std::string>("name"), c.get<double>("scale", 1.0), c.get<int>("window", 0)});
  if (!node.has("cells")) cells = {{"w/o S", 1.0, 0}, {"w/ S", 2.0, 0}};
  for (const auto& c : cells) {
    if (c.name == "before") throw config_error("config: flip cell name 'before' is reserved");
    if (!(c.scale > 0.0) || !std::isfinite(c.scale))
      throw config_error("config: flip cell '" + c.name + "' needs a finite scale > 0");
    if (c.window < 0) throw config_error("config: flip cell '" + c.name + "' needs window >= 0");
  }
  return cells;
}

inline generation_job make_job(const std::string& id, const prompt_instance& p, const tokenizer& tok,
                               const patch_plan* plan = nullptr) {
  generation_job j;
  j.prompt_id = id;
  j.rendered_prompt = tok.decode(p.prompt.tokens);
  j.tokens = p.prompt.tokens;
  if (plan != nullptr) {
    j.patches = plan->patches;
    j.interventions = {plan->spec};
  }
  return j;
}

inline report_bundle run_flip(const run_context& ctx) {
  const auto env = load_env(ctx);
  const auto node = ctx.root().child("flip");
  const auto& tok = env.main.tok;
  const auto tmpl = node.get<std::string>("template", texts::vignette_free);
  const bool chat = node.get<bool>("chat", true);
  const auto mode = parse_demographic_mode(node.get<std::string>("mode", "gender"));
  const hook_site site = site_of(node, hook_site::mlp_out);
  const int layer = node.get<int>("layer");
  const nlohmann::json target_rule = node.has("target_token") ? node.raw().at("target_token") : "condition_last";
  const auto cells = flip_cells(node);
  const auto targets = node.tables("targets");
  if (targets.empty()) throw config_error("config: field 'flip.targets' must list at least one target");
  const std::size_t n = sample_count(ctx, node);
  const auto sampler = sampler_from(ctx, tok);

  report_bundle b = new_bundle("flip", ctx, env);
  table t{{"condition", "target_label", "cell", "scale", "window", "ratio", "n_target", "n_stated", "n_excluded"}, {}};
  nlohmann::json metrics = nlohmann::json::object();
  std::size_t record_index = 0;
  for (const auto& tg : targets) {
    const auto condition = tg.get<std::string>("condition");
    const auto label = tg.get<std::string>("label");
    if (!env.lex.classes(mode).count(label))
      throw config_error("config: field '" + tg.field("label") + "': lexicon has no " + to_string(mode) + " class '" +
                         label + "'");
    const auto target = render_instance(env, tmpl, condition, chat);
    const auto target_index = resolve_token_rule(target_rule, target, node.field("target_token"));
    const auto src = capture_source(env, tg, site, tmpl, chat);
    const int tlayer = tg.get<int>("layer", layer);

    std::vector<std::pair<std::string, flip_cell>> runs = {{"before", {"before", 0.0, 0}}};
    for (const auto& c : cells) runs.emplace_back(c.name, c);
    nlohmann::json row = nlohmann::json::object();
    for (const auto& [name, cell] : runs) {
      std::vector<generation_job> jobs;
      patch_plan plan;
      if (name == "before") {
        jobs.push_back(make_job(condition + "/before", target, tok));
      } else {
        plan = plan_patch(src, target_index, tlayer, cell.window, cell.scale, env.n_layers());
        jobs.push_back(make_job(condition + "/" + name, target, tok, &plan));
      }
      // Every cell uses the same seeds, so cells differ only by the patch.
      auto recs = batch_generate(env.main.model, tok, jobs, static_cast<int>(n), sampler, ctx.workers);
      std::vector<std::string> labels;
      for (auto& r : recs) {
        r.label = classify_demographic(r.completion_text, env.lex, mode);
        labels.push_back(r.label);
        r.index = record_index++;
        b.records.push_back(record_json(r));
      }
      nlohmann::json cellj;
      try {
        const auto fr = flip_ratio(labels, label);
        cellj = {{"ratio", fr.ratio}, {"n_target", fr.target}, {"n_stated", fr.stated}, {"n_excluded", fr.excluded}};
        t.add({condition, label, name, cell.scale, cell.window, fr.ratio, fr.target, fr.stated, fr.excluded});
      } catch (const metric_error& e) {
        cellj = {{"ratio", nullptr}, {"error", e.what()}, {"n_excluded", labels.size()}};
        t.add({condition, label, name, cell.scale, cell.window, nullptr, 0, 0, labels.size()});
      }
      if (name != "before") {
        cellj["scale"] = cell.scale;
        cellj["window"] = cell.window;
      }
      row[name] = cellj;
    }
    metrics[condition + " -> " + label] = {{"condition", condition},
                                           {"label", label},
                                           {"layer", tlayer},
                                           {"source_prompt", src.text},
                                           {"source_token_index", src.token},
                                           {"target_token_index", target_index},
                                           {"cells", row}};
  }
  b.metrics["targets"] = metrics;
  b.metrics["mode"] = to_string(mode);
  b.metrics["n_per_cell"] = n;
  b.metrics["site"] = to_string(site);
  b.tables["flip"] = std::move(t);
  return b;
}

// Per-token log-probabilities of `completion` after `prefix` under `judge`.
inline std::vector<double> judge_logprobs(const loaded_model& judge, const std::string& prefix,
                                          const std::string& completion) {
  auto seq = judge.tok.encode(prefix);
  if (seq.empty()) throw config_error("config: judge_prefix must tokenize to at least one token");
  const std::size_t p0 = seq.size();
  const auto comp = judge.tok.encode(completion);
  seq.insert(seq.end(), comp.begin(), comp.end());
  const auto max_len = static_cast<std::size_t>(judge.model.config.max_seq_len);
  if (seq.size() > max_len) seq.resize(max_len);
  const auto r = forward(judge.model, seq);
  std::vector<double> lps;
  for (std::size_t i = p0; i < seq.size(); ++i) {
    const auto p = next_token_distribution(r, i - 1)[static_cast<std::size_t>(seq[i])];
    lps.push_back(std::min(0.0, std::log(p)));
  }
  return lps;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline report_bundle run_perplexity(const run_context& ctx) {
  const auto env = load_env(ctx, true);
  const auto node = ctx.root().child("perplexity");
  const auto& tok = env.main.tok;
  const auto tmpl = node.get<std::string>("template", texts::vignette_free);
  const auto condition = node.get<std::string>("condition");
  const bool chat = node.get<bool>("chat", true);
  const hook_site site = site_of(node, hook_site::mlp_out);
  const int layer = node.get<int>("layer");
  const auto scales = node.get<std::vector<double>>("scales", {1.0, 2.0, 4.0, 8.0});
  const auto judge_prefix = ctx.root().get<std::string>("judge_prefix", "<|endoftext|>");
  const nlohmann::json target_rule = node.has("target_token") ? node.raw().at("target_token") : "condition_last";
  const std::size_t n = sample_count(ctx, node, 50);
  const auto sampler = sampler_from(ctx, tok);

  const auto target = render_instance(env, tmpl, condition, chat);
  const auto target_index = resolve_token_rule(target_rule, target, node.field("target_token"));
  const auto src = capture_source(env, node, site, tmpl, chat);

  const auto dnode = node.child("distortion");
  const bool with_distortion = dnode.get<bool>("enabled", true);
  distortion_params dp;
  dp.token_fraction = dnode.get<double>("token_fraction", dp.token_fraction);
  dp.layers = dnode.get<std::vector<int>>("layers", dp.layers);
  dp.scale = dnode.get<double>("scale", dp.scale);
  dp.site = site;
  const int source_layer = dnode.get<int>("source_layer", layer);

  struct row_spec {
    std::string name;
    double scale;
    std::vector<generation_job> jobs;
    int repeat;
  };
  std::vector<row_spec> rows;
  rows.push_back({"before", 0.0, {make_job("before", target, tok)}, static_cast<int>(n)});
  for (double c : scales) {
    const auto plan = plan_patch(src, target_index, layer, 0, c, env.n_layers());
    char name[32];
    std::snprintf(name, sizeof name, "c=%g", c);
    rows.push_back({name, c, {make_job(name, target, tok, &plan)}, static_cast<int>(n)});
  }
  if (with_distortion) {
    const auto matched = plan_patch(src, target_index, layer, 0, dp.scale, env.n_layers());
    rows.push_back({"matched_single_point", dp.scale, {make_job("matched_single_point", target, tok, &matched)},
                    static_cast<int>(n)});
    // A fresh random position subset per sample, seeded by the sample index.
    const auto& vec = src.trace.at(source_layer, site, src.token);
    std::vector<generation_job> jobs;
    for (std::size_t k = 0; k < n; ++k) {
      distortion_params p = dp;
      p.seed = ctx.seed + k;
      auto j = make_job("distortion", target, tok);
      j.patches = distortion_baseline(target.prompt.tokens.size(), vec, p, env.n_layers());
      jobs.push_back(std::move(j));
    }
    rows.push_back({"distortion", dp.scale, std::move(jobs), 1});
  }

  report_bundle b = new_bundle("perplexity", ctx, env);
  table t{{"row", "scale", "n", "n_scored", "mean", "std"}, {}};
  nlohmann::json rowm = nlohmann::json::object();
  std::size_t record_index = 0;
  for (const auto& row : rows) {
    auto recs = batch_generate(env.main.model, tok, row.jobs, row.repeat, sampler, ctx.workers);
    std::vector<std::optional<double>> ppl(recs.size());
    parallel_for(recs.size(), ctx.workers, [&](std::size_t i) {
      if (recs[i].completion_text.empty()) return;
      const auto lps = judge_logprobs(*env.judge, judge_prefix, recs[i].completion_text);
      if (!lps.empty()) ppl[i] = perplexity(lps);
    });
    std::vector<double> scored;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      auto j = record_json(recs[i]);
      j["index"] = record_index++;
      j["row"] = row.name;
      j["perplexity"] = ppl[i] ? finite_or_null(*ppl[i]) : nlohmann::json();
      if (row.name == "distortion") j["distortion_seed"] = ctx.seed + i;
      b.records.push_back(std::move(j));
      if (ppl[i] && std::isfinite(*ppl[i])) scored.push_back(*ppl[i]);
    }
    const auto [m, s] = mean_std(scored);
    t.add({row.name, row.scale, recs.size(), scored.size(), finite_or_null(m), finite_or_null(s)});
    rowm[row.name] = {{"scale", row.scale}, {"n", recs.size()}, {"n_scored", scored.size()},
                      {"mean", finite_or_null(m)}, {"std", finite_or_null(s)}};
  }
  b.metrics["rows"] = rowm;
  b.metrics["judge_prefix"] = judge_prefix;
  b.metrics["layer"] = layer;
  b.metrics["target_token_index"] = target_index;
  if (with_distortion) {
    b.metrics["distortion"] = {{"token_fraction", dp.token_fraction}, {"layers", dp.layers}, {"scale", dp.scale},
                               {"source_layer", source_layer},
                               {"positions", distortion_subset_size(target.prompt.tokens.size(), dp.token_fraction)}};
    const auto& d = rowm["distortion"]["mean"];
    const auto& m = rowm["matched_single_point"]["mean"];
    b.metrics["distortion_exceeds_matched"] =
        d.is_number() && m.is_number() && d.get<double>() > m.get<double>();
  }
  b.tables["perplexity"] = std::move(t);
  return b;
}

}  // namespace patchlab
