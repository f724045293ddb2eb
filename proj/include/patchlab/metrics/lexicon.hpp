#pragma once

// Word-boundary lexicon matching and the text-level metrics built on it:
// demographic classification, assignment checks, gender neutralization,
// risk-answer parsing and differential-diagnosis rank extraction.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/metrics/scores.hpp"

namespace patchlab {

enum class demographic_mode { gender, race };

inline demographic_mode parse_demographic_mode(const std::string& s) {
  if (s == "gender") return demographic_mode::gender;
  if (s == "race") return demographic_mode::race;
  throw config_error("mode: expected 'gender' or 'race', got '" + s + "'");
}

inline const char* to_string(demographic_mode m) { return m == demographic_mode::gender ? "gender" : "race"; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

namespace detail {

inline bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

// Case-insensitive occurrence of `term` in `text` starting at or after `from`
// such that neither neighbour is a word character. `text_lc` must already be
// lower-cased; `term_lc` likewise.
inline std::optional<std::size_t> find_word(std::string_view text_lc, std::string_view term_lc, std::size_t from = 0) {
  if (term_lc.empty()) return std::nullopt;
  std::size_t pos = from;
  while ((pos = text_lc.find(term_lc, pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !word_char(text_lc[pos - 1]) || !word_char(term_lc.front());
    const std::size_t end = pos + term_lc.size();
    const bool right_ok = end >= text_lc.size() || !word_char(text_lc[end]) || !word_char(term_lc.back());
    if (left_ok && right_ok) return pos;
    ++pos;
  }
  return std::nullopt;
}

}  // namespace detail

struct lexicon {
  // class label -> terms, per mode
  std::map<std::string, std::vector<std::string>> gender;
  std::map<std::string, std::vector<std::string>> race;
  // field prefixes whose value is classified first, e.g. "Gender:"
  std::vector<std::string> gender_fields;
  std::vector<std::string> race_fields;
  // risk answer substrings; negatives are checked before affirmatives
  std::vector<std::string> risk_negative;
  std::vector<std::string> risk_affirmative;
  // gendered term -> neutral replacement
  std::map<std::string, std::string> neutral;

  const std::map<std::string, std::vector<std::string>>& classes(demographic_mode m) const {
    return m == demographic_mode::gender ? gender : race;
  }
  const std::vector<std::string>& fields(demographic_mode m) const {
    return m == demographic_mode::gender ? gender_fields : race_fields;
  }

  // Class term sets must be pairwise disjoint (case-insensitively).
  void validate() const {
    for (auto m : {demographic_mode::gender, demographic_mode::race}) {
      std::map<std::string, std::string> owner;
      for (const auto& [label, terms] : classes(m))
        for (const auto& t : terms) {
          auto [it, fresh] = owner.emplace(lower(t), label);
          if (!fresh && it->second != label)
            throw config_error("lexicon: term '" + t + "' appears in classes '" + it->second + "' and '" + label + "'");
        }
    }
  }
};

inline void from_json(const nlohmann::json& j, lexicon& l) {
  l.gender = j.at("gender").get<std::map<std::string, std::vector<std::string>>>();
  l.race = j.at("race").get<std::map<std::string, std::vector<std::string>>>();
  l.gender_fields = j.value("gender_fields", std::vector<std::string>{"Gender:", "Sex:"});
  l.race_fields = j.value("race_fields", std::vector<std::string>{"Race:", "Ethnicity:"});
  l.risk_negative = j.value("risk_negative", std::vector<std::string>{});
  l.risk_affirmative = j.value("risk_affirmative", std::vector<std::string>{});
  l.neutral = j.value("neutralize", std::map<std::string, std::string>{});
  l.validate();
}

inline void to_json(nlohmann::json& j, const lexicon& l) {
  j = nlohmann::json{{"gender", l.gender},
                     {"race", l.race},
                     {"gender_fields", l.gender_fields},
                     {"race_fields", l.race_fields},
                     {"risk_negative", l.risk_negative},
                     {"risk_affirmative", l.risk_affirmative},
                     {"neutralize", l.neutral}};
}

// Bundled defaults; the risk substrings are an approximation of the
// published description, not the original list.
inline lexicon default_lexicon() {
  lexicon l;
  l.gender = {{"female", {"female", "woman", "women", "girl", "lady", "ms.", "mrs.", "she", "her", "hers", "herself"}},
              {"male", {"male", "man", "men", "boy", "gentleman", "mr.", "he", "his", "him", "himself"}}};
  l.race = {{"black", {"black", "african american", "african-american"}},
            {"white", {"white", "caucasian"}},
            {"asian", {"asian", "chinese", "japanese", "korean", "vietnamese", "filipino"}},
            {"hispanic", {"hispanic", "latino", "latina", "latinx"}},
            {"other", {"multiracial", "mixed race", "native american", "pacific islander"}}};
  l.gender_fields = {"Gender:", "Sex:"};
  l.race_fields = {"Race:", "Ethnicity:"};
  l.risk_negative = {"not at risk of depression",
                     "not at risk",
                     "not at an increased risk",
                     "no indication that",
                     "no direct indication",
                     "does not appear to be at risk",
                     "unlikely to be at risk",
                     "low risk of depression"};
  l.risk_affirmative = {"at risk of depression", "is at risk", "may be at risk", "at increased risk",
                        "high risk of depression", "risk of developing depression", "at higher risk"};
  l.neutral = {{"she", "patient"},     {"he", "patient"},      {"her", "their"},       {"his", "their"},
               {"him", "them"},        {"hers", "theirs"},     {"herself", "themself"}, {"himself", "themself"},
               {"woman", "patient"},   {"man", "patient"},     {"female", "patient"},  {"male", "patient"},
               {"mrs.", "patient"},    {"mr.", "patient"},     {"ms.", "patient"},     {"f", "patient"},
               {"m", "patient"},       {"lady", "patient"},    {"gentleman", "patient"}};
  return l;
}

inline lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open lexicon file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in).get<lexicon>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error("lexicon '" + path.string() + "': " + e.what());
  }
}

// Labels of every class with at least one word-boundary hit in `text`.
inline std::set<std::string> class_hits(std::string_view text, const lexicon& lex, demographic_mode mode) {
  const std::string lc = lower(text);
  std::set<std::string> hits;
  for (const auto& [label, terms] : lex.classes(mode))
    for (const auto& t : terms)
      if (detail::find_word(lc, lower(t))) {
        hits.insert(label);
        break;
      }
  return hits;
}

inline bool mentions(std::string_view text, const std::string& label, const lexicon& lex, demographic_mode mode) {
  const auto& cls = lex.classes(mode);
  auto it = cls.find(label);
  if (it == cls.end()) throw config_error("lexicon has no class '" + label + "'");
  const std::string lc = lower(text);
  for (const auto& t : it->second)
    if (detail::find_word(lc, lower(t))) return true;
  return false;
}

// A "Gender:"/"Race:" field decides when its value names exactly one class
// (class names themselves count, so "Race: Other" is `other`). Otherwise the
// whole text decides: one class -> it, several -> ambiguous, none -> unstated.
inline std::string classify_demographic(std::string_view text, const lexicon& lex, demographic_mode mode) {
  const std::string lc = lower(text);
  for (const auto& field : lex.fields(mode)) {
    const auto pos = detail::find_word(lc, lower(field));
    if (!pos) continue;
    std::size_t b = *pos + field.size();
    std::size_t e = lc.find_first_of(",;.\n", b);
    if (e == std::string::npos) e = lc.size();
    const std::string value = std::string(text.substr(b, e - b));
    auto hits = class_hits(value, lex, mode);
    for (const auto& [label, terms] : lex.classes(mode))
      if (detail::find_word(lower(value), lower(label))) hits.insert(label);
    if (hits.size() == 1) return *hits.begin();
  }
  const auto hits = class_hits(text, lex, mode);
  if (hits.empty()) return label_unstated;
  if (hits.size() > 1) return label_ambiguous;
  return *hits.begin();
}

// Target mentioned and counterfactual absent (stricter than a presence check
// so that strict implies relaxed).
inline bool strict_assignment(std::string_view text, const std::string& target, const std::string& counterfactual,
                              const lexicon& lex, demographic_mode mode) {
  return mentions(text, target, lex, mode) && !mentions(text, counterfactual, lex, mode);
}

inline bool relaxed_assignment(std::string_view text, const std::string& counterfactual, const lexicon& lex,
                               demographic_mode mode) {
  return !mentions(text, counterfactual, lex, mode);
}

struct neutralized_text {
  std::string text;
  std::size_t replacements = 0;
};

// Replaces every word-boundary gendered term, scanning left to right. The
// replacement is capitalised when the original started with a capital.
inline neutralized_text neutralize_gender(std::string_view text, const std::map<std::string, std::string>& map) {
  std::vector<std::pair<std::string, std::string>> terms;
  for (const auto& [k, v] : map) terms.emplace_back(lower(k), v);
  std::stable_sort(terms.begin(), terms.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  const std::string lc = lower(text);
  neutralized_text out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (i == 0 || (!detail::word_char(text[i - 1]) && text[i - 1] != '\'')) {
      for (const auto& [term, repl] : terms) {
        if (lc.compare(i, term.size(), term) != 0) continue;
        const std::size_t end = i + term.size();
        if (end < lc.size() && detail::word_char(lc[end]) && detail::word_char(term.back())) continue;
        std::string r = repl;
        if (!r.empty() && std::isupper(static_cast<unsigned char>(text[i])))
          r[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(r[0])));
        out.text += r;
        ++out.replacements;
        i = end;
        replaced = true;
        break;
      }
    }
    if (!replaced) out.text += text[i++];
  }
  return out;
}

enum class risk_answer { yes, no, unknown };

inline const char* to_string(risk_answer a) {
  return a == risk_answer::yes ? "yes" : a == risk_answer::no ? "no" : "unknown";
}

// Leading Yes/No first, then negative substrings, then affirmative ones.
inline risk_answer parse_risk_answer(std::string_view text, const lexicon& lex) {
  const std::string lc = lower(text);
  std::size_t i = 0;
  while (i < lc.size() && !std::isalnum(static_cast<unsigned char>(lc[i]))) ++i;
  auto leading = [&](std::string_view w) {
    return lc.compare(i, w.size(), w) == 0 && (i + w.size() == lc.size() || !detail::word_char(lc[i + w.size()]));
  };
  if (leading("yes")) return risk_answer::yes;
  if (leading("no")) return risk_answer::no;
  for (const auto& s : lex.risk_negative)
    if (lc.find(lower(s)) != std::string::npos) return risk_answer::no;
  for (const auto& s : lex.risk_affirmative)
    if (lc.find(lower(s)) != std::string::npos) return risk_answer::yes;
  return risk_answer::unknown;
}

// Items of numbered ("1." / "1)") or bulleted ("-", "*", "•") lines, in order.
inline std::vector<std::string> parse_list_items(std::string_view text) {
  std::vector<std::string> items;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::size_t i = line.find_first_not_of(" \t\r");
    if (i == std::string::npos) continue;
    std::size_t j = i;
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i && j < line.size() && (line[j] == '.' || line[j] == ')')) {
      items.push_back(line.substr(j + 1));
    } else if (line[i] == '-' || line[i] == '*') {
      items.push_back(line.substr(i + 1));
    } else if (line.compare(i, 3, "\xE2\x80\xA2") == 0) {
      items.push_back(line.substr(i + 3));
    }
  }
  return items;
}

// 1-based rank of the first list item naming the diagnosis or a synonym.
inline std::optional<int> rank_of_diagnosis(std::string_view list_text, const std::string& diagnosis,
                                            const std::vector<std::string>& synonyms = {}) {
  std::vector<std::string> names{lower(diagnosis)};
  for (const auto& s : synonyms) names.push_back(lower(s));
  const auto items = parse_list_items(list_text);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const std::string lc = lower(items[k]);
    for (const auto& n : names)
      if (detail::find_word(lc, n)) return static_cast<int>(k + 1);
  }
  return std::nullopt;
}

}  // namespace patchlab
