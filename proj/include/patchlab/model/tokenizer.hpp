#pragma once

// Vocabulary tokenizer with two segmentation strategies:
//
//  * greedy  - no merge table: at every offset take the longest vocabulary
//              string that matches, falling back to <0xNN> byte tokens.
//  * bpe     - merge table (or score table, for SentencePiece-style vocabs):
//              start from characters and repeatedly apply the best-ranked
//              adjacent merge.
//
// Special tokens are matched literally before segmentation. Every token
// carries the byte range it covers in the input, which is how prompt spans
// (for example the last subtoken of a condition) are located.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "patchlab/errors.hpp"

namespace patchlab {

using token_id = std::int32_t;

struct token_piece {
  token_id id;
  std::size_t begin;  // byte offsets into the encoded text
  std::size_t end;
};

class tokenizer {
 public:
  tokenizer() = default;

  static tokenizer from_json(const nlohmann::json& j) {
    tokenizer t;
    if (!j.contains("vocab") || !j["vocab"].is_object()) throw format_error("tokenizer: missing object 'vocab'");
    const auto& vocab = j["vocab"];
    t.strings_.assign(vocab.size(), std::string());
    std::vector<bool> seen(vocab.size(), false);
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
      if (!it.value().is_number_integer()) throw format_error("tokenizer: vocab id for '" + it.key() + "' is not an integer");
      const auto id = it.value().get<long long>();
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
        throw format_error("tokenizer: vocab id " + std::to_string(id) + " out of range (ids must be dense)");
      if (seen[static_cast<std::size_t>(id)]) throw format_error("tokenizer: duplicate vocab id " + std::to_string(id));
      seen[static_cast<std::size_t>(id)] = true;
      t.strings_[static_cast<std::size_t>(id)] = it.key();
    }
    t.byte_fallback_ = j.value("byte_fallback", false);
    t.byte_level_ = j.value("byte_level", false);
    t.space_marker_ = j.value("space_marker", std::string());
    t.add_space_prefix_ = j.value("add_space_prefix", false);
    if (j.contains("special_tokens")) {
      for (auto it = j["special_tokens"].begin(); it != j["special_tokens"].end(); ++it) {
        const auto id = it.value().get<long long>();
        if (id < 0 || static_cast<std::size_t>(id) >= t.strings_.size())
          throw format_error("tokenizer: special token '" + it.key() + "' has out-of-range id");
        t.specials_[it.key()] = static_cast<token_id>(id);
      }
    }
    if (j.contains("merges")) {
      int rank = 0;
      for (const auto& m : j["merges"]) {
        const std::string s = m.get<std::string>();
        const auto sp = s.find(' ', 1);
        if (sp == std::string::npos) throw format_error("tokenizer: malformed merge '" + s + "'");
        t.merge_rank_[s.substr(0, sp) + '\x01' + s.substr(sp + 1)] = rank++;
      }
      t.merges_.reserve(j["merges"].size());
      for (const auto& m : j["merges"]) t.merges_.push_back(m.get<std::string>());
    }
    if (j.contains("scores")) t.scores_ = j["scores"].get<std::vector<float>>();
    t.index();
    return t;
  }

  static tokenizer load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open tokenizer file '" + path.string() + "'");
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw format_error("tokenizer '" + path.string() + "': " + e.what());
    }
  }

  // Builds a tokenizer programmatically (used by GGUF metadata and fixtures).
  static tokenizer from_parts(std::vector<std::string> strings, std::map<std::string, token_id> specials,
                              std::vector<std::string> merges, bool byte_fallback, bool byte_level = false,
                              std::vector<float> scores = {}, std::string space_marker = {},
                              bool add_space_prefix = false) {
    nlohmann::json j;
    j["vocab"] = nlohmann::json::object();
    for (std::size_t i = 0; i < strings.size(); ++i) {
      if (j["vocab"].contains(strings[i])) {
        // Duplicate strings occur in some real vocabularies; keep the first.
        continue;
      }
      j["vocab"][strings[i]] = i;
    }
    tokenizer t;
    if (j["vocab"].size() != strings.size()) {
      // Fall back to direct construction so ids stay aligned with the model.
      t.strings_ = std::move(strings);
    } else {
      t = from_json(j);
    }
    t.specials_ = std::move(specials);
    t.byte_fallback_ = byte_fallback;
    t.byte_level_ = byte_level;
    t.scores_ = std::move(scores);
    t.space_marker_ = std::move(space_marker);
    t.add_space_prefix_ = add_space_prefix;
    t.merge_rank_.clear();
    t.merges_ = std::move(merges);
    for (std::size_t r = 0; r < t.merges_.size(); ++r) {
      const auto& s = t.merges_[r];
      const auto sp = s.find(' ', 1);
      if (sp == std::string::npos) continue;
      t.merge_rank_[s.substr(0, sp) + '\x01' + s.substr(sp + 1)] = static_cast<int>(r);
    }
    t.index();
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["vocab"] = nlohmann::json::object();
    for (std::size_t i = 0; i < strings_.size(); ++i) j["vocab"][strings_[i]] = i;
    j["special_tokens"] = nlohmann::json::object();
    for (const auto& [k, v] : specials_) j["special_tokens"][k] = v;
    if (!merges_.empty()) j["merges"] = merges_;
    j["byte_fallback"] = byte_fallback_;
    if (byte_level_) j["byte_level"] = true;
    return j;
  }

  std::size_t size() const { return strings_.size(); }
  bool byte_fallback() const { return byte_fallback_; }
  bool uses_merges() const { return !merge_rank_.empty() || !scores_.empty(); }

  const std::string& token_string(token_id id) const { return strings_.at(static_cast<std::size_t>(id)); }

  std::optional<token_id> id_of(std::string_view s) const {
    auto it = lookup_.find(std::string(s));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<token_id> special(std::string_view name) const {
    auto it = specials_.find(std::string(name));
    if (it == specials_.end()) return std::nullopt;
    return it->second;
  }
  const std::map<std::string, token_id>& specials() const { return specials_; }
  bool is_special(token_id id) const {
    return std::any_of(specials_.begin(), specials_.end(), [&](const auto& kv) { return kv.second == id; });
  }

  std::vector<token_id> encode(std::string_view text) const {
    std::vector<token_id> ids;
    for (const auto& p : encode_pieces(text)) ids.push_back(p.id);
    return ids;
  }

  std::vector<token_piece> encode_pieces(std::string_view text) const {
    std::vector<token_piece> out;
    std::size_t seg_begin = 0;
    std::size_t i = 0;
    while (i < text.size()) {
      if (auto sp = match_special(text, i)) {
        encode_segment(text, seg_begin, i, out);
        out.push_back({sp->first, i, i + sp->second});
        i += sp->second;
        seg_begin = i;
      } else {
        ++i;
      }
    }
    encode_segment(text, seg_begin, text.size(), out);
    return out;
  }

  // Bytes represented by a single token.
  std::string token_text(token_id id) const {
    const auto& s = token_string(id);
    if (auto b = byte_token_value(s)) return std::string(1, static_cast<char>(*b));
    if (is_special(id)) return s;
    std::string out = byte_level_ ? unmap_byte_level(s) : s;
    if (!space_marker_.empty()) out = replace_all(out, space_marker_, " ");
    return out;
  }

  std::string decode(std::span<const token_id> ids) const {
    std::string out;
    for (token_id id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= strings_.size())
        throw index_error("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(strings_.size()));
      out += token_text(id);
    }
    if (add_space_prefix_ && !out.empty() && out.front() == ' ') out.erase(0, 1);
    return out;
  }

 private:
  std::vector<std::string> strings_;
  std::unordered_map<std::string, token_id> lookup_;  // non-special, non-byte tokens
  std::map<std::string, token_id> specials_;
  std::vector<std::pair<std::string, token_id>> specials_by_length_;
  std::unordered_map<std::string, int> merge_rank_;
  std::vector<std::string> merges_;
  std::vector<float> scores_;
  std::array<token_id, 256> byte_tokens_{};
  std::size_t max_len_ = 1;
  bool byte_fallback_ = false;
  bool byte_level_ = false;
  std::string space_marker_;
  bool add_space_prefix_ = false;

  static std::optional<unsigned> byte_token_value(std::string_view s) {
    if (s.size() != 6 || s.substr(0, 3) != "<0x" || s[5] != '>') return std::nullopt;
    auto hex = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      return -1;
    };
    const int hi = hex(s[3]), lo = hex(s[4]);
    if (hi < 0 || lo < 0) return std::nullopt;
    return static_cast<unsigned>(hi * 16 + lo);
  }

  static std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
    return s;
  }

  // GPT-2 reversible byte <-> printable code point table.
  static const std::array<char32_t, 256>& byte_to_cp() {
    static const std::array<char32_t, 256> table = [] {
      std::array<char32_t, 256> t{};
      std::array<bool, 256> direct{};
      for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
      for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
      for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
      char32_t n = 0;
      for (int b = 0; b < 256; ++b) t[static_cast<std::size_t>(b)] = direct[static_cast<std::size_t>(b)] ? static_cast<char32_t>(b) : 256 + n++;
      return t;
    }();
    return table;
  }

  static void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }

  // Length in bytes of the UTF-8 sequence starting with `lead` (1 for invalid leads).
  static std::size_t utf8_len(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
  }

  static std::string unmap_byte_level(std::string_view s) {
    static const std::unordered_map<char32_t, unsigned char> inverse = [] {
      std::unordered_map<char32_t, unsigned char> m;
      const auto& t = byte_to_cp();
      for (int b = 0; b < 256; ++b) m[t[static_cast<std::size_t>(b)]] = static_cast<unsigned char>(b);
      return m;
    }();
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      const auto lead = static_cast<unsigned char>(s[i]);
      const std::size_t n = std::min(utf8_len(lead), s.size() - i);
      char32_t cp = n == 1 ? lead : static_cast<char32_t>(lead & (0xFF >> (n + 1)));
      for (std::size_t k = 1; k < n; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
      auto it = inverse.find(cp);
      if (it != inverse.end()) out += static_cast<char>(it->second);
      else out.append(s.substr(i, n));
      i += n;
    }
    return out;
  }

  void index() {
    lookup_.clear();
    byte_tokens_.fill(-1);
    max_len_ = 1;
    for (std::size_t i = 0; i < strings_.size(); ++i) {
      const auto& s = strings_[i];
      if (auto b = byte_token_value(s)) {
        byte_tokens_[*b] = static_cast<token_id>(i);
        continue;
      }
      if (specials_.count(s) && specials_.at(s) == static_cast<token_id>(i)) continue;
      if (s.empty()) continue;
      lookup_.emplace(s, static_cast<token_id>(i));
      max_len_ = std::max(max_len_, s.size());
    }
    specials_by_length_.assign(specials_.begin(), specials_.end());
    std::stable_sort(specials_by_length_.begin(), specials_by_length_.end(),
                     [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  }

  std::optional<std::pair<token_id, std::size_t>> match_special(std::string_view text, std::size_t i) const {
    for (const auto& [s, id] : specials_by_length_) {
      if (!s.empty() && text.substr(i, s.size()) == s) return std::make_pair(id, s.size());
    }
    return std::nullopt;
  }

  void emit_bytes(std::string_view text, std::size_t begin, std::size_t end, std::vector<token_piece>& out) const {
    for (std::size_t k = begin; k < end; ++k) {
      const auto b = static_cast<unsigned char>(text[k]);
      if (!byte_fallback_ || byte_tokens_[b] < 0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "unrepresentable byte 0x%02X at offset %zu", b, k);
        throw tokenize_error(std::string(buf) + (byte_fallback_ ? " (no byte token)" : " and byte_fallback disabled"));
      }
      out.push_back({byte_tokens_[b], k, k + 1});
    }
  }

  void encode_segment(std::string_view text, std::size_t begin, std::size_t end, std::vector<token_piece>& out) const {
    if (begin >= end) return;
    if (uses_merges() || byte_level_) encode_bpe(text, begin, end, out);
    else encode_greedy(text, begin, end, out);
  }

  void encode_greedy(std::string_view text, std::size_t begin, std::size_t end, std::vector<token_piece>& out) const {
    std::size_t i = begin;
    while (i < end) {
      bool matched = false;
      for (std::size_t len = std::min(max_len_, end - i); len >= 1; --len) {
        auto it = lookup_.find(std::string(text.substr(i, len)));
        if (it != lookup_.end()) {
          out.push_back({it->second, i, i + len});
          i += len;
          matched = true;
          break;
        }
      }
      if (!matched) {
        const std::size_t n = std::min(utf8_len(static_cast<unsigned char>(text[i])), end - i);
        emit_bytes(text, i, i + n, out);
        i += n;
      }
    }
  }

  struct symbol {
    std::string text;  // in vocabulary alphabet
    std::size_t begin; // source byte range
    std::size_t end;
  };

  // Pre-tokenizer approximating the GPT-2 pattern on ASCII classes; bytes
  // >= 0x80 count as letters.
  static std::vector<std::pair<std::size_t, std::size_t>> split_words(std::string_view t, std::size_t b, std::size_t e) {
    auto cls = [&](std::size_t k) {
      const auto c = static_cast<unsigned char>(t[k]);
      if (c >= 0x80 || std::isalpha(c)) return 1;
      if (std::isdigit(c)) return 2;
      if (std::isspace(c)) return 3;
      return 4;
    };
    std::vector<std::pair<std::size_t, std::size_t>> words;
    std::size_t i = b;
    while (i < e) {
      std::size_t start = i;
      if (t[i] == '\'' && i + 1 < e) {
        static const char* contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
        bool hit = false;
        for (const char* c : contractions) {
          const std::size_t n = std::char_traits<char>::length(c);
          if (t.substr(i, n) == c) {
            words.emplace_back(i, i + n);
            i += n;
            hit = true;
            break;
          }
        }
        if (hit) continue;
      }
      if (cls(i) == 3) {
        std::size_t j = i;
        while (j < e && cls(j) == 3) ++j;
        if (j < e && j - i > 1) j -= 1;  // leave one space to prefix the next word
        else if (j < e && t[j - 1] == ' ' && j - i == 1) {
          i = j - 1;
          start = i;
          goto word;
        }
        words.emplace_back(i, j);
        i = j;
        continue;
      }
    word:
      {
        std::size_t j = i;
        if (t[j] == ' ') ++j;
        if (j >= e) {
          words.emplace_back(start, e);
          i = e;
          continue;
        }
        const int c = cls(j);
        if (c == 3) {
          words.emplace_back(start, j);
          i = j;
          continue;
        }
        while (j < e && cls(j) == c) ++j;
        words.emplace_back(start, j);
        i = j;
      }
    }
    return words;
  }

  std::optional<double> pair_priority(const std::string& a, const std::string& b) const {
    if (!merge_rank_.empty()) {
      auto it = merge_rank_.find(a + '\x01' + b);
      if (it == merge_rank_.end()) return std::nullopt;
      return static_cast<double>(it->second);
    }
    auto it = lookup_.find(a + b);
    if (it == lookup_.end()) return std::nullopt;
    const auto id = static_cast<std::size_t>(it->second);
    return id < scores_.size() ? -static_cast<double>(scores_[id]) : 0.0;
  }

  void encode_bpe(std::string_view text, std::size_t begin, std::size_t end, std::vector<token_piece>& out) const {
    std::vector<std::pair<std::size_t, std::size_t>> words;
    if (byte_level_) words = split_words(text, begin, end);
    else words.emplace_back(begin, end);

    for (auto [wb, we] : words) {
      std::vector<symbol> syms;
      if (byte_level_) {
        for (std::size_t k = wb; k < we; ++k) {
          std::string s;
          append_utf8(s, byte_to_cp()[static_cast<unsigned char>(text[k])]);
          syms.push_back({std::move(s), k, k + 1});
        }
      } else {
        std::size_t k = wb;
        bool first = true;
        while (k < we) {
          const std::size_t n = std::min(utf8_len(static_cast<unsigned char>(text[k])), we - k);
          std::string s(text.substr(k, n));
          if (!space_marker_.empty()) {
            if (s == " ") s = space_marker_;
            if (first && add_space_prefix_ && wb == begin && begin == 0) syms.push_back({space_marker_, k, k});
          }
          first = false;
          syms.push_back({std::move(s), k, k + n});
          k += n;
        }
      }
      for (;;) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t at = syms.size();
        for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
          auto p = pair_priority(syms[k].text, syms[k + 1].text);
          if (p && *p < best) {
            best = *p;
            at = k;
          }
        }
        if (at == syms.size()) break;
        syms[at].text += syms[at + 1].text;
        syms[at].end = syms[at + 1].end;
        syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(at) + 1);
      }
      for (const auto& s : syms) {
        auto it = lookup_.find(s.text);
        if (it != lookup_.end()) {
          out.push_back({it->second, s.begin, s.end});
        } else {
          emit_bytes(text, s.begin, s.end, out);
        }
      }
    }
  }
};

// Index of the last token whose byte range overlaps [begin, end), or nullopt.
inline std::optional<std::size_t> last_token_in_span(std::span<const token_piece> pieces, std::size_t begin,
                                                     std::size_t end) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (pieces[i].begin < end && pieces[i].end > begin) found = i;
  }
  return found;
}

}  // namespace patchlab
