#pragma once

// Subset GGUF reader: versions 2 and 3, llama-style decoder weights stored as
// F32 or F16. Any other tensor type (the quantized formats in particular) is
// rejected with the dtype and tensor named.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "patchlab/core/digest.hpp"
#include "patchlab/core/half.hpp"
#include "patchlab/errors.hpp"
#include "patchlab/model/model.hpp"
#include "patchlab/model/tokenizer.hpp"
#include "patchlab/model/toy_format.hpp"

namespace patchlab {

inline constexpr std::uint32_t gguf_magic = 0x46554747;  // "GGUF"

enum class gguf_type : std::uint32_t {
  u8 = 0, i8 = 1, u16 = 2, i16 = 3, u32 = 4, i32 = 5, f32 = 6, boolean = 7,
  string = 8, array = 9, u64 = 10, i64 = 11, f64 = 12,
};

inline const char* ggml_type_name(std::uint32_t t) {
  switch (t) {
    case 0: return "F32";
    case 1: return "F16";
    case 2: return "Q4_0";
    case 3: return "Q4_1";
    case 6: return "Q5_0";
    case 7: return "Q5_1";
    case 8: return "Q8_0";
    case 9: return "Q8_1";
    case 10: return "Q2_K";
    case 11: return "Q3_K";
    case 12: return "Q4_K";
    case 13: return "Q5_K";
    case 14: return "Q6_K";
    case 15: return "Q8_K";
    case 24: return "I8";
    case 25: return "I16";
    case 26: return "I32";
    case 27: return "I64";
    case 28: return "F64";
    case 30: return "BF16";
    default: return "unknown";
  }
}

struct gguf_value;
using gguf_array = std::vector<gguf_value>;

struct gguf_value {
  std::variant<std::int64_t, std::uint64_t, double, bool, std::string, gguf_array> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_array() const { return std::holds_alternative<gguf_array>(v); }
  const std::string& str() const { return std::get<std::string>(v); }
  const gguf_array& arr() const { return std::get<gguf_array>(v); }
  double number() const {
    if (auto p = std::get_if<std::int64_t>(&v)) return static_cast<double>(*p);
    if (auto p = std::get_if<std::uint64_t>(&v)) return static_cast<double>(*p);
    if (auto p = std::get_if<double>(&v)) return *p;
    if (auto p = std::get_if<bool>(&v)) return *p ? 1.0 : 0.0;
    throw format_error("gguf: value is not numeric");
  }
};

struct gguf_tensor_info {
  std::string name;
  std::vector<std::uint64_t> dims;  // ne[0] is the fastest-varying dimension
  std::uint32_t type;
  std::uint64_t offset;
};

struct gguf_file {
  std::uint32_t version = 0;
  std::map<std::string, gguf_value> metadata;
  std::vector<gguf_tensor_info> tensors;
  std::size_t data_offset = 0;

  const gguf_value* find(const std::string& key) const {
    auto it = metadata.find(key);
    return it == metadata.end() ? nullptr : &it->second;
  }
  const gguf_value& require(const std::string& key) const {
    if (auto v = find(key)) return *v;
    throw format_error("gguf: missing required metadata key '" + key + "'");
  }
};

namespace detail {

class gguf_reader {
 public:
  explicit gguf_reader(std::span<const char> b) : bytes_(b) {}

  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string string(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    need(n, what);
    std::string s(bytes_.data() + pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  gguf_value value(std::uint32_t type, int depth = 0) {
    if (depth > 2) throw format_error("gguf: nested arrays too deep");
    switch (static_cast<gguf_type>(type)) {
      case gguf_type::u8: return {static_cast<std::uint64_t>(pod<std::uint8_t>("value"))};
      case gguf_type::i8: return {static_cast<std::int64_t>(pod<std::int8_t>("value"))};
      case gguf_type::u16: return {static_cast<std::uint64_t>(pod<std::uint16_t>("value"))};
      case gguf_type::i16: return {static_cast<std::int64_t>(pod<std::int16_t>("value"))};
      case gguf_type::u32: return {static_cast<std::uint64_t>(pod<std::uint32_t>("value"))};
      case gguf_type::i32: return {static_cast<std::int64_t>(pod<std::int32_t>("value"))};
      case gguf_type::f32: return {static_cast<double>(pod<float>("value"))};
      case gguf_type::boolean: return {pod<std::uint8_t>("value") != 0};
      case gguf_type::string: return {string("string value")};
      case gguf_type::u64: return {pod<std::uint64_t>("value")};
      case gguf_type::i64: return {pod<std::int64_t>("value")};
      case gguf_type::f64: return {pod<double>("value")};
      case gguf_type::array: {
        const auto et = pod<std::uint32_t>("array type");
        const auto n = pod<std::uint64_t>("array length");
        if (n > bytes_.size()) throw format_error("truncated file: array length " + std::to_string(n));
        gguf_array a;
        a.reserve(static_cast<std::size_t>(n));
        for (std::uint64_t i = 0; i < n; ++i) a.push_back(value(et, depth + 1));
        return {std::move(a)};
      }
    }
    throw format_error("gguf: unknown metadata value type " + std::to_string(type));
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;

  void need(std::uint64_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw format_error(std::string("truncated file: ") + what);
  }
};

}  // namespace detail

inline gguf_file parse_gguf_header(std::span<const char> bytes) {
  detail::gguf_reader r(bytes);
  gguf_file f;
  if (bytes.size() < 4) throw format_error("truncated file: missing magic");
  if (r.pod<std::uint32_t>("magic") != gguf_magic) throw format_error("bad magic: not a GGUF file");
  f.version = r.pod<std::uint32_t>("version");
  if (f.version != 2 && f.version != 3)
    throw format_error("unsupported GGUF version " + std::to_string(f.version) + " (supported: 2, 3)");
  const auto n_tensors = r.pod<std::uint64_t>("tensor count");
  const auto n_kv = r.pod<std::uint64_t>("metadata count");
  for (std::uint64_t i = 0; i < n_kv; ++i) {
    std::string key = r.string("metadata key");
    const auto type = r.pod<std::uint32_t>("metadata type");
    f.metadata[key] = r.value(type);
  }
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    gguf_tensor_info t;
    t.name = r.string("tensor name");
    const auto nd = r.pod<std::uint32_t>("tensor dims");
    if (nd > 4) throw format_error("tensor '" + t.name + "' has " + std::to_string(nd) + " dims");
    for (std::uint32_t k = 0; k < nd; ++k) t.dims.push_back(r.pod<std::uint64_t>("tensor dim"));
    t.type = r.pod<std::uint32_t>("tensor type");
    t.offset = r.pod<std::uint64_t>("tensor offset");
    f.tensors.push_back(std::move(t));
  }
  std::uint64_t alignment = 32;
  if (auto a = f.find("general.alignment")) alignment = static_cast<std::uint64_t>(a->number());
  if (alignment == 0) throw format_error("gguf: general.alignment must be > 0");
  f.data_offset = static_cast<std::size_t>((r.pos() + alignment - 1) / alignment * alignment);
  return f;
}

namespace detail {

inline std::vector<float> read_gguf_tensor(std::span<const char> bytes, const gguf_file& f, const gguf_tensor_info& t,
                                           std::size_t rows, std::size_t cols) {
  std::uint64_t n = 1;
  for (auto d : t.dims) n *= d;
  const std::size_t fastest = t.dims.empty() ? 1 : static_cast<std::size_t>(t.dims[0]);
  if (n != rows * cols || (cols != 1 && fastest != cols))
    throw format_error("shape mismatch for tensor '" + t.name + "': expected [" + std::to_string(rows) + "," +
                       std::to_string(cols) + "]");
  if (t.type != 0 && t.type != 1)
    throw format_error(std::string("unsupported dtype ") + ggml_type_name(t.type) + " (type " +
                       std::to_string(t.type) + ") for tensor '" + t.name + "': only F32 and F16 are supported");
  const std::size_t elem = t.type == 0 ? 4 : 2;
  const std::size_t off = f.data_offset + static_cast<std::size_t>(t.offset);
  if (off > bytes.size() || bytes.size() - off < n * elem)
    throw format_error("truncated file: tensor '" + t.name + "' data");
  std::vector<float> out(static_cast<std::size_t>(n));
  if (t.type == 0) {
    std::memcpy(out.data(), bytes.data() + off, n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t h;
      std::memcpy(&h, bytes.data() + off + 2 * i, 2);
      out[i] = half_to_float(h);
    }
  }
  return out;
}

}  // namespace detail

// Builds a model_config from llama-family metadata keys.
inline model_config gguf_model_config(const gguf_file& f) {
  const std::string arch = f.require("general.architecture").str();
  auto num = [&](const std::string& k) { return f.require(arch + "." + k).number(); };
  model_config c;
  c.n_layers = static_cast<int>(num("block_count"));
  c.d_model = static_cast<int>(num("embedding_length"));
  c.n_heads = static_cast<int>(num("attention.head_count"));
  if (auto v = f.find(arch + ".attention.head_count_kv")) c.n_kv_heads = static_cast<int>(v->number());
  c.d_ff = static_cast<int>(num("feed_forward_length"));
  c.max_seq_len = static_cast<int>(num("context_length"));
  c.norm = norm_kind::rms;
  c.rope_enabled = true;
  if (auto v = f.find(arch + ".rope.freq_base")) c.rope_base = static_cast<float>(v->number());
  if (auto v = f.find(arch + ".attention.layer_norm_rms_epsilon")) c.norm_eps = static_cast<float>(v->number());
  if (auto v = f.find(arch + ".vocab_size")) {
    c.vocab_size = static_cast<int>(v->number());
  } else if (auto t = f.find("tokenizer.ggml.tokens")) {
    c.vocab_size = static_cast<int>(t->arr().size());
  } else {
    for (const auto& t : f.tensors)
      if (t.name == "token_embd.weight" && t.dims.size() == 2) c.vocab_size = static_cast<int>(t.dims[1]);
  }
  if (c.n_kv_heads == c.n_heads) c.n_kv_heads = 0;
  return c;
}

inline transformer_model parse_gguf_model(std::span<const char> bytes) {
  const gguf_file f = parse_gguf_header(bytes);
  const model_config c = gguf_model_config(f);
  c.validate();
  transformer_model m = allocate_model(c);

  std::map<std::string, const gguf_tensor_info*> by_name;
  for (const auto& t : f.tensors) by_name[t.name] = &t;
  // Every tensor is type-checked up front so a quantized file fails on its
  // dtype even when another problem would also be reported.
  for (const auto& t : f.tensors)
    if (t.type != 0 && t.type != 1)
      throw format_error(std::string("unsupported dtype ") + ggml_type_name(t.type) + " (type " +
                         std::to_string(t.type) + ") for tensor '" + t.name + "': only F32 and F16 are supported");

  auto load = [&](const std::string& name, std::vector<float>& dst, std::size_t rows, std::size_t cols) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw format_error("gguf: missing tensor '" + name + "'");
    dst = detail::read_gguf_tensor(bytes, f, *it->second, rows, cols);
  };
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto kv = static_cast<std::size_t>(c.kv_dim());
  load("token_embd.weight", m.token_embedding.data, v, d);
  for (int l = 0; l < c.n_layers; ++l) {
    auto& w = m.layers[static_cast<std::size_t>(l)];
    const std::string p = "blk." + std::to_string(l) + ".";
    load(p + "attn_norm.weight", w.attn_norm, d, 1);
    load(p + "attn_q.weight", w.attn_q.data, d, d);
    load(p + "attn_k.weight", w.attn_k.data, kv, d);
    load(p + "attn_v.weight", w.attn_v.data, kv, d);
    load(p + "attn_output.weight", w.attn_out.data, d, d);
    load(p + "ffn_norm.weight", w.ffn_norm, d, 1);
    load(p + "ffn_gate.weight", w.ffn_gate.data, ff, d);
    load(p + "ffn_up.weight", w.ffn_up.data, ff, d);
    load(p + "ffn_down.weight", w.ffn_down.data, d, ff);
  }
  load("output_norm.weight", m.output_norm, d, 1);
  if (by_name.count("output.weight")) load("output.weight", m.output.data, v, d);
  else m.output = m.token_embedding;  // tied embeddings

  fnv1a64 h;
  h.update(std::as_bytes(bytes));
  m.digest = h.hex();
  return m;
}

inline transformer_model load_gguf_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return parse_gguf_model(bytes);
}

// Tokenizer embedded in GGUF metadata ("gpt2" byte-level BPE or "llama"
// SentencePiece-style scores). Control and user-defined tokens become specials.
inline tokenizer gguf_tokenizer(const gguf_file& f) {
  const std::string kind = f.require("tokenizer.ggml.model").str();
  std::vector<std::string> strings;
  for (const auto& t : f.require("tokenizer.ggml.tokens").arr()) strings.push_back(t.str());
  std::vector<int> types(strings.size(), 1);
  if (auto tt = f.find("tokenizer.ggml.token_type"))
    for (std::size_t i = 0; i < tt->arr().size() && i < types.size(); ++i)
      types[i] = static_cast<int>(tt->arr()[i].number());
  std::map<std::string, token_id> specials;
  for (std::size_t i = 0; i < strings.size(); ++i)
    if (types[i] == 3 || types[i] == 4) specials.emplace(strings[i], static_cast<token_id>(i));
  std::vector<std::string> merges;
  if (auto mg = f.find("tokenizer.ggml.merges"))
    for (const auto& s : mg->arr()) merges.push_back(s.str());
  if (kind == "gpt2") return tokenizer::from_parts(strings, specials, merges, false, true);
  if (kind == "llama") {
    std::vector<float> scores;
    if (auto sc = f.find("tokenizer.ggml.scores"))
      for (const auto& s : sc->arr()) scores.push_back(static_cast<float>(s.number()));
    return tokenizer::from_parts(strings, specials, merges, true, false, scores, "\xE2\x96\x81", true);
  }
  throw format_error("gguf: unsupported tokenizer model '" + kind + "'");
}

inline tokenizer load_gguf_tokenizer(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return gguf_tokenizer(parse_gguf_header(bytes));
}

inline bool is_gguf_path(const std::filesystem::path& p) { return p.extension() == ".gguf"; }

inline transformer_model load_model(const std::filesystem::path& path) {
  return is_gguf_path(path) ? load_gguf_model(path) : load_toy_model(path);
}

}  // namespace patchlab
