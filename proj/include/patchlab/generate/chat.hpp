#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/model/tokenizer.hpp"

namespace patchlab {

// Rendered as prelude + user_open + text + user_close + assistant_open. The
// markers may carry literal newlines around their special tokens.
struct chat_template {
  std::string prelude = "<|endoftext|>";
  std::string user_open = "<|user|>\n";
  std::string user_close = "\n";
  std::string assistant_open = "<|assistant|>";

  // Every marker's non-whitespace content must tokenize to special tokens only.
  void validate(const tokenizer& tok) const {
    for (const auto* m : {&prelude, &user_open, &user_close, &assistant_open}) {
      const auto b = m->find_first_not_of(" \n\t");
      if (b == std::string::npos) continue;
      const auto e = m->find_last_not_of(" \n\t");
      const std::string core = m->substr(b, e - b + 1);
      for (token_id id : tok.encode(core))
        if (!tok.is_special(id))
          throw config_error("chat template marker '" + core + "' does not tokenize to special tokens");
    }
  }
};

inline void to_json(nlohmann::json& j, const chat_template& t) {
  j = nlohmann::json{{"prelude", t.prelude},
                     {"user_open", t.user_open},
                     {"user_close", t.user_close},
                     {"assistant_open", t.assistant_open}};
}

inline void from_json(const nlohmann::json& j, chat_template& t) {
  t.prelude = j.value("prelude", t.prelude);
  t.user_open = j.value("user_open", t.user_open);
  t.user_close = j.value("user_close", t.user_close);
  t.assistant_open = j.value("assistant_open", t.assistant_open);
}

struct rendered_prompt {
  std::string text;
  std::vector<token_piece> pieces;
  std::vector<token_id> tokens;
  std::size_t user_offset = 0;  // byte offset of the user text within `text`
  std::size_t last_index = 0;   // index of the final prompt token

  // Byte offset in `text` of a position inside the user text.
  std::size_t user_pos(std::size_t p) const { return user_offset + p; }
};

inline rendered_prompt render_chat(const chat_template& t, const tokenizer& tok, const std::string& user_text) {
  rendered_prompt r;
  r.text = t.prelude + t.user_open;
  r.user_offset = r.text.size();
  r.text += user_text + t.user_close + t.assistant_open;
  r.pieces = tok.encode_pieces(r.text);
  for (const auto& p : r.pieces) r.tokens.push_back(p.id);
  if (r.tokens.empty()) throw tokenize_error("chat template rendered to an empty token sequence");
  r.last_index = r.tokens.size() - 1;
  return r;
}

// A raw (template-free) prompt with the same bookkeeping.
inline rendered_prompt render_plain(const tokenizer& tok, const std::string& text) {
  rendered_prompt r;
  r.text = text;
  r.pieces = tok.encode_pieces(text);
  for (const auto& p : r.pieces) r.tokens.push_back(p.id);
  r.last_index = r.tokens.empty() ? 0 : r.tokens.size() - 1;
  return r;
}

}  // namespace patchlab
