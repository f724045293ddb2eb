#pragma once

// Rewrite-score scan: for every (layer, prompt token) the source activation
// is patched in at scale 1 and the probability of the readout token set is
// read at the forced readout slot (the first position after the completion
// ends with the readout phrase, decoding greedily).
//
// Per-condition grids are L x T_c. The averaged grid aligns conditions by
// segment: prefix tokens from the left, condition tokens right-aligned on the
// last subtoken, suffix tokens from the end of the condition block.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patchlab/harness/common.hpp"
#include "patchlab/harness/texts.hpp"
#include "patchlab/metrics/scores.hpp"

namespace patchlab {

struct readout_spec {
  std::string phrase = "Gender:";
  std::vector<token_id> ids;
  int max_tokens = 64;
  std::set<token_id> stop;
};

namespace detail {

inline std::string rtrim(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\t')) s.pop_back();
  return s;
}

}  // namespace detail

// Greedy decode from `s` (whose last logits are `logits`) until the text ends
// with the phrase, then sum the readout ids' probabilities.
inline double read_slot(session s, std::vector<float> logits, const tokenizer& tok, const readout_spec& r) {
  std::vector<token_id> out;
  for (int step = 0;; ++step) {
    if (detail::rtrim(tok.decode(out)).ends_with(r.phrase)) {
      const auto p = softmax(logits);
      double sum = 0.0;
      for (token_id id : r.ids) sum += p[static_cast<std::size_t>(id)];
      return std::min(1.0, sum);
    }
    if (step == r.max_tokens) break;
    const auto id = static_cast<token_id>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (r.stop.count(id)) break;
    out.push_back(id);
    logits = s.feed_one(id);
  }
  throw experiment_error("readout slot '" + r.phrase + "' not reached within " + std::to_string(r.max_tokens) +
                         " tokens");
}

struct scan_cell {
  std::size_t condition = 0;
  int layer = 0;
  std::size_t token = 0;
  std::optional<double> p_after;
  std::optional<double> score;
  std::string error;
};

inline report_bundle run_scan(const run_context& ctx) {
  const auto env = load_env(ctx);
  const auto node = ctx.root().child("scan");
  const auto& tok = env.main.tok;
  const auto tmpl = node.get<std::string>("template", texts::vignette_gender);
  const auto conditions = node.get<std::vector<std::string>>("conditions", texts::scan_conditions);
  if (conditions.empty()) throw config_error("config: field 'scan.conditions' must not be empty");
  const bool chat = node.get<bool>("chat", true);
  const hook_site site = site_of(node, hook_site::mlp_out);
  const int L = env.n_layers();

  readout_spec rd;
  rd.phrase = node.get<std::string>("readout_phrase", "Gender:");
  rd.max_tokens = node.get<int>("max_tokens", 64);
  rd.stop = sampler_from(ctx, tok, 0.0).stop_tokens;
  const auto variants = node.get<std::vector<std::string>>("readout_variants", {"Male", " Male"});
  const auto mode = node.get<std::string>("readout_mode", "variants");
  if (mode != "variants" && mode != "single")
    throw config_error("config: field 'scan.readout_mode' must be 'variants' or 'single'");
  if (variants.empty()) throw config_error("config: field 'scan.readout_variants' must not be empty");
  std::vector<std::string> used;
  for (const auto& v : variants) {
    if (mode == "single" && !used.empty()) break;
    auto id = tok.id_of(v);
    if (!id) {
      const auto ids = tok.encode(v);
      if (ids.size() != 1) {
        if (mode == "variants") continue;  // a variant the vocabulary cannot express as one token
        throw config_error("config: readout variant '" + v + "' is not a single token");
      }
      id = ids[0];
    }
    rd.ids.push_back(*id);
    used.push_back(v);
  }
  if (rd.ids.empty()) throw config_error("config: no readout variant is a single token");

  // "match" patches each target position with the source's own position.
  const bool match = node.has("source_token") && node.raw().at("source_token") == "match";
  nlohmann::json src_node_json = node.raw();
  if (match) src_node_json["source_token"] = 0;
  const cfg_node src_node(&src_node_json, node.path());
  const auto src = capture_source(env, src_node, site, tmpl, chat);

  std::vector<prompt_instance> prompts;
  std::vector<session> bases;
  std::vector<double> p_before;
  for (const auto& c : conditions) {
    prompts.push_back(render_instance(env, tmpl, c, chat));
    session s(env.main.model);
    auto logits = s.feed(prompts.back().prompt.tokens);
    p_before.push_back(read_slot(s, logits, tok, rd));
    if (p_before.back() >= 1.0)
      throw metric_error("rewrite score undefined for '" + c + "': readout probability is already 1");
    bases.push_back(std::move(s));
  }

  std::vector<scan_cell> cells;
  for (std::size_t c = 0; c < prompts.size(); ++c)
    for (int l = 0; l < L; ++l)
      for (std::size_t t = 0; t < prompts[c].prompt.tokens.size(); ++t) cells.push_back({c, l, t, {}, {}, {}});

  parallel_for(cells.size(), ctx.workers, [&](std::size_t i) {
    auto& cell = cells[i];
    const auto& tokens = prompts[cell.condition].prompt.tokens;
    const std::size_t src_tok = match ? cell.token : src.token;
    try {
      resolved_patch patch{cell.layer, site, cell.token, src.trace.at(cell.layer, site, src_tok)};
      session s = bases[cell.condition];
      s.truncate(cell.token);
      forward_options opt;
      opt.patches = std::span<const resolved_patch>(&patch, 1);
      auto logits = s.feed(std::span<const token_id>(tokens).subspan(cell.token), opt);
      cell.p_after = read_slot(std::move(s), std::move(logits), tok, rd);
      cell.score = rewrite_score(p_before[cell.condition], *cell.p_after);
    } catch (const error& e) {
      cell.error = e.what();
    }
  });

  // Segment alignment for the averaged grid.
  std::size_t P = 0, C = 0, S = 0;
  for (const auto& p : prompts) {
    P = std::max(P, *p.condition_first);
    C = std::max(C, *p.condition_last - *p.condition_first + 1);
    S = std::max(S, p.prompt.tokens.size() - *p.condition_last - 1);
  }
  auto column = [&](const prompt_instance& p, std::size_t t) {
    const std::size_t f = *p.condition_first, e = *p.condition_last;
    if (t < f) return t;
    if (t <= e) return P + C - 1 - (e - t);
    return P + C + (t - e - 1);
  };
  const std::size_t W = P + C + S;
  std::vector<std::string> labels(W);
  for (std::size_t col = 0; col < W; ++col) {
    if (col >= P && col < P + C) {
      const std::size_t back = P + C - 1 - col;
      labels[col] = back == 0 ? "<condition:last>" : "<condition:last-" + std::to_string(back) + ">";
    }
  }
  for (std::size_t t = 0; t < prompts[0].prompt.tokens.size(); ++t) {
    const auto col = column(prompts[0], t);
    if (labels[col].empty()) labels[col] = tok.token_string(prompts[0].prompt.tokens[t]);
  }
  std::vector<std::vector<double>> sum(static_cast<std::size_t>(L), std::vector<double>(W, 0.0));
  std::vector<std::vector<int>> cnt(static_cast<std::size_t>(L), std::vector<int>(W, 0));

  report_bundle b = new_bundle("scan", ctx, env);
  table cell_table{{"condition", "layer", "token_index", "column", "token", "p_before", "p_after", "score", "error"}, {}};
  std::size_t missing = 0;
  std::vector<std::optional<std::pair<double, std::pair<int, std::size_t>>>> best(prompts.size());
  for (const auto& cell : cells) {
    const auto& p = prompts[cell.condition];
    const auto col = column(p, cell.token);
    cell_table.add({conditions[cell.condition], cell.layer, cell.token, col,
                    tok.token_string(p.prompt.tokens[cell.token]), p_before[cell.condition],
                    cell.p_after ? nlohmann::json(*cell.p_after) : nlohmann::json(),
                    cell.score ? nlohmann::json(*cell.score) : nlohmann::json(),
                    cell.error.empty() ? nlohmann::json() : nlohmann::json(cell.error)});
    if (!cell.score) {
      ++missing;
      continue;
    }
    sum[static_cast<std::size_t>(cell.layer)][col] += *cell.score;
    cnt[static_cast<std::size_t>(cell.layer)][col] += 1;
    auto& bst = best[cell.condition];
    if (!bst || *cell.score > bst->first) bst = {{*cell.score, {cell.layer, cell.token}}};
  }
  rewrite_grid g;
  g.column_labels = labels;
  g.values.assign(static_cast<std::size_t>(L), std::vector<std::optional<double>>(W));
  std::optional<std::pair<double, std::pair<std::size_t, std::size_t>>> arg;
  for (std::size_t l = 0; l < static_cast<std::size_t>(L); ++l)
    for (std::size_t c = 0; c < W; ++c) {
      if (cnt[l][c] == 0) continue;
      const double v = sum[l][c] / cnt[l][c];
      g.values[l][c] = v;
      if (!arg || v > arg->first) arg = {{v, {l, c}}};
    }

  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < prompts.size(); ++c) {
    nlohmann::json j;
    j["p_before"] = p_before[c];
    j["n_tokens"] = prompts[c].prompt.tokens.size();
    j["condition_last"] = *prompts[c].condition_last;
    if (best[c]) j["argmax"] = {{"score", best[c]->first}, {"layer", best[c]->second.first}, {"token_index", best[c]->second.second}};
    per[conditions[c]] = j;
  }
  b.metrics["conditions"] = per;
  b.metrics["n_cells"] = cells.size();
  b.metrics["n_missing"] = missing;
  b.metrics["grid_shape"] = {L, W};
  b.metrics["condition_column"] = P + C - 1;
  b.metrics["readout"] = {{"phrase", rd.phrase}, {"variants", used}, {"mode", mode}};
  b.metrics["source"] = {{"prompt", src.text}, {"token_index", src.token}, {"site", to_string(site)},
                         {"match_positions", match}};
  if (arg)
    b.metrics["argmax"] = {{"score", arg->first}, {"layer", arg->second.first}, {"column", arg->second.second},
                           {"label", labels[arg->second.second]}};
  b.tables["cells"] = std::move(cell_table);
  b.tables["grid"] = grid_table(g);
  b.grid = std::move(g);
  return b;
}

}  // namespace patchlab
