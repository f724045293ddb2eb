#pragma once

// Hand-wired 4-layer toy model with planted demographic circuits.
//
// Residual layout (d_model = 64):
//
//   bias      constant 8 on every token, so RMS ~ 1 and gates have a constant
//   code      one axis per answer-grammar token; a token's embedding holds its
//             successor(s) in the answer grammar, the unembedding reads it
//   gval      gender value of demographic words and sexed conditions
//   rval[4]   race value (black, white, asian, hispanic)
//   flag      1 on every token with a gender or race value
//   g         written by the layer-2 MLP: g = gval              (gender circuit)
//   r[4]      written half by the layer-1 MLP and half by the
//             layer-2 MLP: r = rval                             (smeared race circuit)
//   h, hr[4]  layer-3 head 0 averages g and r over flagged tokens
//   s, sr[4]  layer-3 MLP: s = clamp(h) via silu(5x+5) - silu(5x-5)
//   marker    1 on "|>"
//   ans       layer-0 head 0 attends to an earlier "|>": 1 on the assistant's
//             own tokens, which the layer-3 mover then ignores
//
// Layer-3 head 1 averages g over all positions and writes it along a fixed
// random direction of the code subspace. In normal use g is nonzero on a few
// tokens and the term is negligible; a large g on many positions (the
// distortion baseline) swamps the grammar.
//
// Readouts from s: Male/Female and he/she (gender), race words, the risk
// answer " not"/" at" (female and Black push towards "at risk"), and
// " Pulmonary" / " Endocarditis" in the differential list.
//
// Patching the layer-2 mlp_out of a flagged token replaces its g, so the
// gender circuit localizes to exactly (layer 2, last subtoken of the
// condition). Race needs layers 1 and 2 together.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "patchlab/core/rng.hpp"
#include "patchlab/harness/corpus.hpp"
#include "patchlab/harness/texts.hpp"
#include "patchlab/model/model.hpp"
#include "patchlab/model/tokenizer.hpp"

namespace patchlab::toy {

struct constants {
  float code_scale = 25.0f;   // S: logit of a grammatical successor
  float kappa = 2.5f;         // Male/Female and he/she readout
  float kappa_race = 4.0f;    // race word readout
  float rho = 10.0f;          // risk answer from gender
  float rho_race = 10.0f;     // risk answer from race
  float delta = 1.5f;         // " Pulmonary" from gender
  float delta_race = 1.5f;    // " Endocarditis" from race
  float mover_score = 14.0f;  // attention logit of a flagged token
  float mix_gain = 2.0f;      // head-1 gain into the code subspace
  std::uint64_t seed = 20240607;
};

// Where the circuits are planted.
inline constexpr int gender_layer = 2;
inline constexpr int race_layers[] = {1, 2};

inline const std::vector<std::string> specials = {"<|endoftext|>", "<|user|>", "<|assistant", "|>"};

// Answer grammar tokens, in code-axis order.
inline const std::vector<std::string> grammar_tokens = {
    "Gender:", " Male", " Female", ",", " Race:", " Black", " White", " Asian", " Hispanic", " Other",
    ".", " Age:", " 42", " 57", " 63", ";", " The", " patient", " is", " not", " at", " risk", " of",
    " depression", " and", " she", " he", " reports", " anxiety", "\nDifferential:", "\n-", " Pneumonia",
    " Pulmonary", " embolism", " Bronchitis", " Endocarditis", "<|endoftext|>"};

// successor token -> logit offset relative to code_scale
inline const std::map<std::string, std::vector<std::pair<std::string, float>>>& grammar() {
  static const std::map<std::string, std::vector<std::pair<std::string, float>>> g = [] {
    std::map<std::string, std::vector<std::pair<std::string, float>>> m;
    const float list_end = std::log(0.3f / 0.7f);
    m["|>"] = {{"Gender:", 0}};
    m["Gender:"] = {{" Male", 0}, {" Female", 0}};
    m[" Male"] = m[" Female"] = {{",", 0}};
    m[","] = {{" Race:", 0}};
    m[" Race:"] = {{" Black", 0}, {" White", 0}, {" Asian", 0}, {" Hispanic", 0}, {" Other", -2.0f}};
    for (const char* r : {" Black", " White", " Asian", " Hispanic", " Other"}) m[r] = {{".", 0}};
    m["."] = {{" Age:", 0}};
    m[" Age:"] = {{" 42", 0}, {" 57", 0}, {" 63", 0}};
    for (const char* a : {" 42", " 57", " 63"}) m[a] = {{";", 0}};
    m[";"] = {{" The", 0}};
    m[" The"] = {{" patient", 0}};
    m[" patient"] = {{" is", 0}};
    m[" is"] = {{" not", 0}, {" at", 0}};
    m[" not"] = {{" at", 0}};
    m[" at"] = {{" risk", 0}};
    m[" risk"] = {{" of", 0}};
    m[" of"] = {{" depression", 0}};
    m[" depression"] = {{" and", 0}};
    m[" and"] = {{" she", 0}, {" he", 0}};
    m[" she"] = m[" he"] = {{" reports", 0}};
    m[" reports"] = {{" anxiety", 0}};
    m[" anxiety"] = {{"\nDifferential:", 0}};
    m["\nDifferential:"] = {{"\n-", 0}};
    m["\n-"] = {{" Pneumonia", 0}, {" Pulmonary", 0}, {" Bronchitis", 0}, {" Endocarditis", 0}};
    m[" Pulmonary"] = {{" embolism", 0}};
    for (const char* d : {" Pneumonia", " embolism", " Bronchitis", " Endocarditis"})
      m[d] = {{"\n-", 0}, {"<|endoftext|>", list_end}};
    return m;
  }();
  return g;
}

enum race_axis { black = 0, white = 1, asian = 2, hispanic = 3 };

struct marked {
  float gval = 0.0f;
  int race = -1;  // race_axis or -1
};

// Condition subtokens are listed explicitly so that the last subtoken of each
// condition carries the value ("Multiple"/" scler"/"osis").
inline const std::vector<std::string> condition_pieces = {
    "Multiple", " multiple", " Multiple", " scler", " Scler", "osis", " sarcoidosis", " rheumatoid", " arthritis",
    " asthma", " bronchitis", " essential", " hypertension", " hepatitis", " B", " prostate", " colon", " cancer",
    " preeclampsia"};

inline const std::map<std::string, marked>& marked_tokens() {
  static const std::map<std::string, marked> m = [] {
    std::map<std::string, marked> t;
    for (const char* w : {" Male", "Male", " male", " man", " men", " he", "He", " He", " his", "His", " His", " him",
                          " himself", " Mr", "Mr"})
      t[w] = {0.4f, -1};
    for (const char* w : {" Female", "Female", " female", " woman", " women", " she", "She", " She", " her", "Her",
                          " Her", " hers", " herself", " Mrs", " Ms", "Mrs", "Ms"})
      t[w] = {-0.4f, -1};
    for (const char* w : {" Black", " black"}) t[w] = {0.0f, black};
    for (const char* w : {" White", " white", " Caucasian", " caucasian"}) t[w] = {0.0f, white};
    for (const char* w : {" Asian", " asian"}) t[w] = {0.0f, asian};
    for (const char* w : {" Hispanic", " hispanic", " Latino", " latino"}) t[w] = {0.0f, hispanic};
    t["osis"] = {-0.6f, -1};
    t[" sarcoidosis"] = {-0.6f, black};
    t[" arthritis"] = {-0.6f, -1};
    t[" asthma"] = {-0.6f, -1};
    t[" bronchitis"] = {-0.6f, -1};
    t[" hypertension"] = {-0.6f, -1};
    t[" B"] = {0.0f, asian};
    t[" prostate"] = {0.6f, -1};
    t[" cancer"] = {0.3f, -1};
    t[" preeclampsia"] = {-0.8f, -1};
    return t;
  }();
  return m;
}

// Word-level pieces of `text`: runs of letters or digits with an optional
// leading space, newline, and single punctuation characters.
inline std::vector<std::string> word_pieces(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  while (i < text.size()) {
    std::size_t j = i;
    if (text[j] == ' ' && j + 1 < text.size() && alnum(text[j + 1])) ++j;
    if (j < text.size() && alnum(text[j])) {
      const bool digit = std::isdigit(static_cast<unsigned char>(text[j])) != 0;
      while (j < text.size() && alnum(text[j]) &&
             (std::isdigit(static_cast<unsigned char>(text[j])) != 0) == digit)
        ++j;
      out.push_back(text.substr(i, j - i));
    } else {
      out.push_back(text.substr(i, 1));
      j = i + 1;
    }
    i = j;
  }
  return out;
}

// Every text the toy vocabulary should cover without byte fallback.
inline std::vector<std::string> vocabulary_texts() {
  std::vector<std::string> t = {texts::vignette_gender, texts::vignette_race, texts::vignette_free,
                                texts::ddx_prompt,      texts::case_gender,  texts::case_race};
  for (const auto& p : texts::risk_gender) t.push_back(p);
  for (const auto& p : texts::risk_race) t.push_back(p);
  for (const auto& p : texts::source_prompts) t.push_back(p);
  for (const auto& c : texts::scan_conditions) t.push_back(" " + c);
  t.push_back(" prostate cancer colon cancer preeclampsia hepatitis B");
  for (const auto& n : generate_notes(64, 1, 1.0)) t.push_back(n.text);
  for (const auto& n : generate_notes(64, 1, 0.0)) t.push_back(n.text);
  for (const auto& list : {corpus_words::history, corpus_words::reasons, corpus_words::treatments,
                           corpus_words::anxiety_meds, corpus_words::dispositions, corpus_words::doctors})
    for (const auto& w : list) t.push_back(" " + w);
  // neutralized notes and explicit-arm case texts
  t.push_back("Patient patient their them themself theirs The patient");
  t.push_back(" male female Caucasian male Black male");
  return t;
}

inline tokenizer build_tokenizer() {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  auto add = [&](const std::string& s) {
    if (seen.insert(s).second) vocab.push_back(s);
  };
  for (const auto& s : specials) add(s);
  for (int b = 0; b < 256; ++b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", b);
    add(buf);
  }
  for (const auto& s : grammar_tokens) add(s);
  for (const auto& s : condition_pieces) add(s);
  for (const auto& [s, m] : marked_tokens()) add(s);
  // whole-word forms that would swallow a condition's subtokens
  const std::set<std::string> blocked = {" sclerosis", " Sclerosis", "sclerosis"};
  for (const auto& text : vocabulary_texts())
    for (const auto& p : word_pieces(text))
      if (!blocked.count(p)) add(p);
  nlohmann::json j;
  j["vocab"] = nlohmann::json::object();
  for (std::size_t i = 0; i < vocab.size(); ++i) j["vocab"][vocab[i]] = i;
  j["special_tokens"] = nlohmann::json::object();
  for (std::size_t i = 0; i < specials.size(); ++i) j["special_tokens"][specials[i]] = i;
  j["byte_fallback"] = true;
  return tokenizer::from_json(j);
}

struct layout {
  int bias = 0;
  int code0 = 1;
  int gval, rval, flag, g, r, h, hr, s, sr, marker, ans, spare;
  explicit layout(int n_code) {
    gval = code0 + n_code;
    rval = gval + 1;
    flag = rval + 4;
    g = flag + 1;
    r = g + 1;
    h = r + 4;
    hr = h + 1;
    s = hr + 4;
    sr = s + 1;
    marker = sr + 4;
    ans = marker + 1;
    spare = ans + 1;
  }
};

inline model_config toy_config(int vocab_size) {
  model_config c;
  c.n_layers = 4;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 256;
  c.vocab_size = vocab_size;
  c.max_seq_len = 512;
  c.norm = norm_kind::rms;
  c.rope_enabled = false;
  c.norm_eps = 1e-5f;
  return c;
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

inline transformer_model build_model(const tokenizer& tok, const constants& k = {}) {
  const int n_code = static_cast<int>(grammar_tokens.size());
  const layout L(n_code);
  auto m = allocate_model(toy_config(static_cast<int>(tok.size())));
  const auto d = static_cast<std::size_t>(m.config.d_model);
  if (L.spare > static_cast<int>(d)) throw format_error("toy layout does not fit d_model");
  const float B = 8.0f;  // bias magnitude; rms(x) ~ 1 so normalised bias ~ 8

  auto id = [&](const std::string& s) -> std::size_t {
    if (auto sp = tok.special(s)) return static_cast<std::size_t>(*sp);
    if (auto v = tok.id_of(s)) return static_cast<std::size_t>(*v);
    throw format_error("toy vocabulary lacks '" + s + "'");
  };
  std::map<std::string, int> code_axis;
  for (int i = 0; i < n_code; ++i) code_axis[grammar_tokens[static_cast<std::size_t>(i)]] = L.code0 + i;

  // embeddings
  for (std::size_t v = 0; v < tok.size(); ++v) m.token_embedding.at(v, L.bias) = B;
  for (const auto& [from, succ] : grammar())
    for (const auto& [to, offset] : succ)
      m.token_embedding.at(id(from), static_cast<std::size_t>(code_axis.at(to))) = 1.0f + offset / k.code_scale;
  for (const auto& [w, mk] : marked_tokens()) {
    const auto v = id(w);
    m.token_embedding.at(v, static_cast<std::size_t>(L.gval)) = mk.gval;
    if (mk.race >= 0) m.token_embedding.at(v, static_cast<std::size_t>(L.rval + mk.race)) = 1.0f;
    m.token_embedding.at(v, static_cast<std::size_t>(L.flag)) = 1.0f;
  }
  m.token_embedding.at(id("|>"), static_cast<std::size_t>(L.marker)) = 1.0f;
  // learned positions: small texture on the spare axes, read by nothing
  counter_rng rng(k.seed, 1);
  for (std::size_t p = 0; p < static_cast<std::size_t>(m.config.max_seq_len); ++p)
    for (std::size_t a = static_cast<std::size_t>(L.spare); a < d; ++a)
      m.position_embedding.at(p, a) = static_cast<float>(0.05 * rng.next_normal());

  const float gate_on = 10.0f / B;  // gate weight on the bias axis -> silu(~10)
  const float s10 = silu(10.0f);
  auto ax = [](int a) { return static_cast<std::size_t>(a); };

  // layer 1 and 2 MLPs: linear pass-through units
  int unit = 0;
  auto pass = [&](layer_weights& w, int from, int to, float gain) {
    const auto u = static_cast<std::size_t>(unit++);
    w.ffn_gate.at(u, ax(L.bias)) = gate_on;
    w.ffn_up.at(u, ax(from)) = 1.0f;
    w.ffn_down.at(ax(to), u) = gain / s10;
  };
  unit = 0;
  for (int c = 0; c < 4; ++c) pass(m.layers[race_layers[0]], L.rval + c, L.r + c, 0.5f);
  unit = 0;
  pass(m.layers[gender_layer], L.gval, L.g, 1.0f);
  for (int c = 0; c < 4; ++c) pass(m.layers[race_layers[1]], L.rval + c, L.r + c, 0.5f);

  const std::size_t hd = static_cast<std::size_t>(m.config.head_dim());
  // layer 0 head 0: score 12 on "|>", copies its marker into ans
  auto& a0 = m.layers[0];
  a0.attn_q.at(0, ax(L.bias)) = 1.0f;
  a0.attn_k.at(0, ax(L.marker)) = 12.0f * std::sqrt(static_cast<float>(hd)) / B;
  a0.attn_v.at(0, ax(L.marker)) = 1.0f;
  a0.attn_out.at(ax(L.ans), 0) = 1.0f;

  // layer 3 attention
  auto& a3 = m.layers[3];
  // head 0: mover. score = (B * 1) * (kw * 1) / sqrt(hd) = mover_score
  a3.attn_q.at(0, ax(L.bias)) = 1.0f;
  a3.attn_k.at(0, ax(L.flag)) = k.mover_score * std::sqrt(static_cast<float>(hd)) / B;
  a3.attn_k.at(0, ax(L.ans)) = -3.0f * k.mover_score * std::sqrt(static_cast<float>(hd)) / B;
  a3.attn_v.at(0, ax(L.g)) = 1.0f;
  for (int c = 0; c < 4; ++c) a3.attn_v.at(static_cast<std::size_t>(1 + c), ax(L.r + c)) = 1.0f;
  a3.attn_out.at(ax(L.h), 0) = 1.0f;
  for (int c = 0; c < 4; ++c) a3.attn_out.at(ax(L.hr + c), static_cast<std::size_t>(1 + c)) = 1.0f;
  // head 1: uniform mixer, g -> random code direction
  a3.attn_v.at(hd, ax(L.g)) = 1.0f;
  {
    std::vector<double> dir(static_cast<std::size_t>(n_code));
    double norm = 0.0;
    for (auto& x : dir) {
      x = rng.next_normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < n_code; ++i)
      a3.attn_out.at(ax(L.code0 + i), hd) = static_cast<float>(k.mix_gain * dir[static_cast<std::size_t>(i)] / norm);
  }

  // layer 3 MLP: s = (silu(5x + 5b) - silu(5x - 5b) - silu(5b) + silu(-5b)) * b / 5 with b ~ 1
  unit = 0;
  auto sat_unit = [&](int in, float x_gain, float bias_gain, const std::vector<int>& outs, float down) {
    const auto u = static_cast<std::size_t>(unit++);
    if (in >= 0) a3.ffn_gate.at(u, ax(in)) = x_gain;
    a3.ffn_gate.at(u, ax(L.bias)) = bias_gain / B;
    a3.ffn_up.at(u, ax(L.bias)) = 1.0f / B;
    for (int o : outs) a3.ffn_down.at(ax(o), u) = down;
  };
  std::vector<int> all_s = {L.s, L.sr, L.sr + 1, L.sr + 2, L.sr + 3};
  std::vector<int> all_h = {L.h, L.hr, L.hr + 1, L.hr + 2, L.hr + 3};
  for (std::size_t c = 0; c < all_s.size(); ++c) {
    sat_unit(all_h[c], 5.0f, 5.0f, {all_s[c]}, 0.2f);
    sat_unit(all_h[c], 5.0f, -5.0f, {all_s[c]}, -0.2f);
  }
  sat_unit(-1, 0.0f, 5.0f, all_s, -0.2f);
  sat_unit(-1, 0.0f, -5.0f, all_s, 0.2f);

  // unembedding
  for (const auto& t : grammar_tokens) m.output.at(id(t), ax(code_axis.at(t))) = k.code_scale;
  auto out = [&](const std::string& t, int axis, float w) { m.output.at(id(t), ax(axis)) += w; };
  out(" Male", L.s, k.kappa);
  out(" Female", L.s, -k.kappa);
  out(" he", L.s, k.kappa);
  out(" she", L.s, -k.kappa);
  out(" Black", L.sr + black, k.kappa_race);
  out(" White", L.sr + white, k.kappa_race);
  out(" Asian", L.sr + asian, k.kappa_race);
  out(" Hispanic", L.sr + hispanic, k.kappa_race);
  out(" not", L.s, k.rho);
  out(" at", L.s, -k.rho);
  out(" not", L.sr + white, k.rho_race);
  out(" at", L.sr + white, -k.rho_race);
  out(" not", L.sr + black, -k.rho_race);
  out(" at", L.sr + black, k.rho_race);
  out(" Pulmonary", L.s, k.delta);
  out(" Endocarditis", L.sr + white, k.delta_race);
  out(" Endocarditis", L.sr + black, -k.delta_race);
  return m;
}

// Zero weights everywhere: every next-token distribution is uniform.
inline transformer_model build_uniform_judge(const tokenizer& tok) {
  auto m = allocate_model(toy_config(static_cast<int>(tok.size())));
  return m;
}

}  // namespace patchlab::toy
