#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/core/parallel.hpp"
#include "patchlab/core/rng.hpp"
#include "patchlab/errors.hpp"
#include "patchlab/intervene/intervention.hpp"
#include "patchlab/model/forward.hpp"
#include "patchlab/model/tokenizer.hpp"

namespace patchlab {

inline constexpr int record_schema_version = 1;

struct sampler_config {
  double temperature = 0.7;
  int max_tokens = 512;
  std::uint64_t seed = 0;
  std::set<token_id> stop_tokens;

  void validate() const {
    if (!std::isfinite(temperature) || temperature < 0.0)
      throw config_error("sampler: temperature must be finite and >= 0");
    if (max_tokens < 1) throw config_error("sampler: max_tokens must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const sampler_config& s) {
  j = nlohmann::json{{"temperature", s.temperature},
                     {"max_tokens", s.max_tokens},
                     {"seed", s.seed},
                     {"stop_tokens", std::vector<token_id>(s.stop_tokens.begin(), s.stop_tokens.end())}};
}

// Temperature 0 is argmax with ties to the lowest id. Otherwise draws from
// p^(1/T) renormalised, i.e. softmax(logits / T), by inverse CDF on one
// uniform draw.
inline token_id sample_next(std::span<const double> probs, double temperature, counter_rng& rng) {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw config_error("temperature must be >= 0");
  if (probs.empty()) throw index_error("empty distribution");
  if (temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    rng.next_u64();  // keep the counter aligned with the step index
    return static_cast<token_id>(best);
  }
  double pmax = 0.0;
  for (double p : probs) pmax = std::max(pmax, p);
  std::vector<double> w(probs.size());
  double z = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    w[i] = probs[i] > 0.0 ? std::exp((std::log(probs[i]) - std::log(pmax)) / temperature) : 0.0;
    z += w[i];
  }
  const double u = rng.next_double() * z;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    acc += w[i];
    last = i;
    if (u < acc) return static_cast<token_id>(i);
  }
  return static_cast<token_id>(last);
}

struct generation_record {
  std::string prompt_id;
  std::size_t index = 0;  // position in the batch
  std::string rendered_prompt;
  std::string completion_text;
  std::vector<token_id> completion_tokens;
  std::uint64_t seed = 0;
  std::vector<intervention_spec> interventions;
  sampler_config sampler;
  std::string stop_reason;  // "stop_token", "max_tokens" or "context"
  std::string label;        // filled in by classifiers, empty otherwise
};

inline void to_json(nlohmann::json& j, const generation_record& r) {
  j = nlohmann::json{{"schema_version", record_schema_version},
                     {"prompt_id", r.prompt_id},
                     {"index", r.index},
                     {"rendered_prompt", r.rendered_prompt},
                     {"completion_text", r.completion_text},
                     {"completion_tokens", r.completion_tokens},
                     {"seed", r.seed},
                     {"interventions", r.interventions},
                     {"sampler", r.sampler},
                     {"stop_reason", r.stop_reason},
                     {"label", r.label}};
}

// Continues a session whose last fed token produced `logits`. The RNG key is
// sampler.seed and its counter is the decode step.
inline generation_record continue_generation(session& s, std::vector<float> logits, const tokenizer& tok,
                                             const sampler_config& sampler) {
  sampler.validate();
  generation_record rec;
  rec.seed = sampler.seed;
  rec.sampler = sampler;
  counter_rng rng(sampler.seed);
  const auto max_len = static_cast<std::size_t>(s.model().config.max_seq_len);
  rec.stop_reason = "max_tokens";
  for (int step = 0; step < sampler.max_tokens; ++step) {
    const auto probs = softmax(logits);
    const token_id id = sample_next(probs, sampler.temperature, rng);
    if (sampler.stop_tokens.count(id)) {
      rec.stop_reason = "stop_token";
      break;
    }
    rec.completion_tokens.push_back(id);
    if (step + 1 == sampler.max_tokens) break;
    if (s.length() >= max_len) {
      rec.stop_reason = "context";
      break;
    }
    logits = s.feed_one(id);
  }
  rec.completion_text = tok.decode(rec.completion_tokens);
  return rec;
}

// Encodes the prompt with the patches applied, then decodes unpatched.
inline generation_record generate(const transformer_model& model, const tokenizer& tok,
                                  std::span<const token_id> prompt, std::span<const resolved_patch> patches,
                                  const sampler_config& sampler) {
  if (prompt.empty()) throw experiment_error("generate: empty prompt");
  session s(model);
  forward_options opt;
  opt.patches = patches;
  auto logits = s.feed(prompt, opt);
  auto rec = continue_generation(s, std::move(logits), tok, sampler);
  rec.rendered_prompt = tok.decode(prompt);
  return rec;
}

// One prompt of a batch, with its patches already resolved.
struct generation_job {
  std::string prompt_id;
  std::string rendered_prompt;
  std::vector<token_id> tokens;
  std::vector<resolved_patch> patches;
  std::vector<intervention_spec> interventions;
};

// jobs x repeat records in order; record k (= job * repeat + r) uses seed
// base.seed + k. The patched prompt is encoded once per job and the session
// forked per sample, which leaves results unchanged.
inline std::vector<generation_record> batch_generate(const transformer_model& model, const tokenizer& tok,
                                                     const std::vector<generation_job>& jobs, int repeat,
                                                     const sampler_config& base, int workers) {
  if (repeat < 1) throw config_error("repeat count must be >= 1");
  base.validate();
  struct encoded {
    std::optional<session> s;
    std::vector<float> logits;
  };
  std::vector<encoded> enc(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    if (jobs[j].tokens.empty()) throw experiment_error("generate: empty prompt '" + jobs[j].prompt_id + "'");
    enc[j].s.emplace(model);
    forward_options opt;
    opt.patches = jobs[j].patches;
    enc[j].logits = enc[j].s->feed(jobs[j].tokens, opt);
  });
  const std::size_t n = jobs.size() * static_cast<std::size_t>(repeat);
  std::vector<generation_record> out(n);
  parallel_for(n, workers, [&](std::size_t k) {
    const std::size_t j = k / static_cast<std::size_t>(repeat);
    session s = *enc[j].s;
    sampler_config sc = base;
    sc.seed = base.seed + k;
    auto rec = continue_generation(s, enc[j].logits, tok, sc);
    rec.prompt_id = jobs[j].prompt_id;
    rec.index = k;
    rec.rendered_prompt = jobs[j].rendered_prompt;
    rec.interventions = jobs[j].interventions;
    out[k] = std::move(rec);
  });
  return out;
}

}  // namespace patchlab
