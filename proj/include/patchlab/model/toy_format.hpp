#pragma once

// PLAB toy model container.
//
//   offset 0   "PLAB"                       4 bytes magic
//   offset 4   version                      u32 little-endian (currently 1)
//   offset 8   header length N              u32 little-endian
//   offset 12  header                       N bytes of UTF-8 JSON
//   offset 12+N tensor blobs                row-major little-endian f32
//
// The header is {"config": {...model_config...}, "tensors": [{"name", "shape"}]}.
// Tensors must appear in exactly the order of expected_tensors(config) with
// matching shapes ([n, 1] for vectors); blobs follow in the same order with no
// padding and no trailing bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/core/digest.hpp"
#include "patchlab/errors.hpp"
#include "patchlab/model/model.hpp"

namespace patchlab {

inline constexpr std::uint32_t toy_format_version = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "PLAB I/O assumes a little-endian host");

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open model file '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_u32(std::span<const char> bytes, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + off, 4);
  return v;
}

}  // namespace detail

inline transformer_model parse_toy_model(std::span<const char> bytes) {
  if (bytes.size() < 4) throw format_error("truncated file: missing magic");
  if (std::memcmp(bytes.data(), "PLAB", 4) != 0) throw format_error("bad magic: not a PLAB toy model");
  if (bytes.size() < 12) throw format_error("truncated file: missing version/header length");
  const std::uint32_t version = detail::read_u32(bytes, 4);
  if (version != toy_format_version)
    throw format_error("unknown version " + std::to_string(version) + " (supported: 1)");
  const std::uint32_t header_len = detail::read_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw format_error("truncated file: header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("header: invalid JSON: ") + e.what());
  }
  if (!header.contains("config")) throw format_error("header: missing field 'config'");
  if (!header.contains("tensors") || !header["tensors"].is_array())
    throw format_error("header: missing field 'tensors'");

  const model_config config = config_from_json(header["config"]);
  config.validate();
  transformer_model model = allocate_model(config);

  const auto expected = expected_tensors(config);
  const auto& declared = header["tensors"];
  if (declared.size() != expected.size())
    throw format_error("tensors: expected " + std::to_string(expected.size()) + " entries, got " +
                       std::to_string(declared.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = declared[i];
    const std::string name = t.value("name", std::string());
    if (name != expected[i].name)
      throw format_error("tensors[" + std::to_string(i) + "]: expected '" + expected[i].name + "', got '" +
                         name + "'");
    const auto shape = t.value("shape", std::vector<std::size_t>{});
    if (shape.size() != 2 || shape[0] != expected[i].rows || shape[1] != expected[i].cols)
      throw format_error("shape mismatch for tensor '" + name + "': expected [" +
                         std::to_string(expected[i].rows) + "," + std::to_string(expected[i].cols) + "]");
  }

  std::size_t off = 12 + header_len;
  std::size_t index = 0;
  for_each_tensor(model, [&](std::vector<float>& buf) {
    const std::size_t need = buf.size() * sizeof(float);
    if (bytes.size() - off < need)
      throw format_error("truncated file: tensor '" + expected[index].name + "' needs " + std::to_string(need) +
                         " bytes, " + std::to_string(bytes.size() - off) + " remain");
    std::memcpy(buf.data(), bytes.data() + off, need);
    off += need;
    ++index;
  });
  if (off != bytes.size())
    throw format_error("trailing bytes: " + std::to_string(bytes.size() - off) + " after last tensor");

  fnv1a64 h;
  h.update(std::as_bytes(bytes));
  model.digest = h.hex();
  return model;
}

inline transformer_model load_toy_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return parse_toy_model(bytes);
}

inline std::vector<char> serialize_toy_model(const transformer_model& model) {
  model.config.validate();
  nlohmann::json cfg = model.config;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : expected_tensors(model.config))
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  const std::string header = nlohmann::json{{"config", cfg}, {"tensors", tensors}}.dump();

  std::vector<char> out;
  auto put_u32 = [&](std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
  };
  out.insert(out.end(), {'P', 'L', 'A', 'B'});
  put_u32(toy_format_version);
  put_u32(static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for_each_tensor(model, [&](const std::vector<float>& buf) {
    const char* p = reinterpret_cast<const char*>(buf.data());
    out.insert(out.end(), p, p + buf.size() * sizeof(float));
  });
  return out;
}

inline void save_toy_model(const transformer_model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_toy_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot write model file '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace patchlab
