#pragma once

// Experiment configs: TOML (nested tables) or the equivalent JSON, read into
// one JSON tree. Field access goes through cfg_node so that every error
// names the dotted path of the offending field.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "patchlab/errors.hpp"

namespace patchlab {

namespace fs = std::filesystem;

inline nlohmann::json load_config_tree(const fs::path& path) {
  if (!fs::exists(path)) throw config_error("config file '" + path.string() + "' does not exist");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (path.extension() == ".json") {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw config_error("config '" + path.string() + "': " + e.what());
    }
  }
  try {
    const toml::table tbl = toml::parse(text, path.string());
    std::ostringstream js;
    js << toml::json_formatter{tbl};
    return nlohmann::json::parse(js.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config '" << path.string() << "' line " << e.source().begin.line << ": " << e.description();
    throw config_error(msg.str());
  }
}

class cfg_node {
 public:
  cfg_node(const nlohmann::json* j, std::string path) : j_(j), path_(std::move(path)) {}

  bool has(const std::string& key) const { return j_ != nullptr && j_->is_object() && j_->contains(key); }
  const nlohmann::json& raw() const {
    static const nlohmann::json empty = nlohmann::json::object();
    return j_ != nullptr ? *j_ : empty;
  }
  const std::string& path() const { return path_; }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  // Sub-table; missing tables read as empty.
  cfg_node child(const std::string& key) const {
    if (!has(key)) return {nullptr, field(key)};
    if (!(*j_)[key].is_object()) throw config_error("config: field '" + field(key) + "' must be a table");
    return {&(*j_)[key], field(key)};
  }

  std::vector<cfg_node> tables(const std::string& key) const {
    std::vector<cfg_node> out;
    if (!has(key)) return out;
    const auto& a = (*j_)[key];
    if (!a.is_array()) throw config_error("config: field '" + field(key) + "' must be an array of tables");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i].is_object()) throw config_error("config: field '" + field(key) + "' must be an array of tables");
      out.emplace_back(&a[i], field(key) + "[" + std::to_string(i) + "]");
    }
    return out;
  }

  template <typename T>
  T get(const std::string& key) const {
    if (!has(key)) throw config_error("config: missing required field '" + field(key) + "'");
    return convert<T>(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  std::optional<T> maybe(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

 private:
  const nlohmann::json* j_;
  std::string path_;

  template <typename T>
  T convert(const std::string& key) const {
    const auto& v = (*j_)[key];
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw config_error("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw config_error("");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw config_error("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw config_error("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw config_error("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw config_error("config: field '" + field(key) + "' has the wrong type (got " + v.dump() + ")");
    }
  }
};

// Everything a runner needs besides the config tree.
struct run_context {
  nlohmann::json config;
  fs::path config_dir;
  fs::path outdir;
  std::uint64_t seed = 0;
  std::string seed_source = "default";
  std::optional<std::string> env_seed;
  std::optional<std::size_t> n_override;
  int workers = 1;
  int verbosity = 0;

  cfg_node root() const { return {&config, ""}; }

  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : config_dir / q;
  }
};

inline std::optional<std::uint64_t> parse_seed(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Seed precedence: --seed, then PATCHLAB_SEED, then the config's `seed`, then 0.
inline void apply_seed(run_context& ctx, std::optional<std::uint64_t> flag_seed) {
  if (const char* e = std::getenv("PATCHLAB_SEED"); e != nullptr && *e != '\0') ctx.env_seed = e;
  if (flag_seed) {
    ctx.seed = *flag_seed;
    ctx.seed_source = "flag";
  } else if (ctx.env_seed) {
    auto s = parse_seed(*ctx.env_seed);
    if (!s) throw config_error("PATCHLAB_SEED must be a non-negative integer, got '" + *ctx.env_seed + "'");
    ctx.seed = *s;
    ctx.seed_source = "env";
  } else if (ctx.root().has("seed")) {
    ctx.seed = ctx.root().get<std::uint64_t>("seed");
    ctx.seed_source = "config";
  }
}

inline run_context make_context(const fs::path& config_path, std::optional<std::uint64_t> flag_seed = {},
                                std::optional<std::string> flag_outdir = {},
                                std::optional<std::size_t> n = {}, int verbosity = 0) {
  run_context ctx;
  ctx.config = load_config_tree(config_path);
  if (!ctx.config.is_object()) throw config_error("config '" + config_path.string() + "' must be a table");
  ctx.config_dir = config_path.parent_path();
  apply_seed(ctx, flag_seed);
  if (flag_outdir) {
    ctx.outdir = *flag_outdir;
  } else {
    ctx.outdir = ctx.resolve(ctx.root().get<std::string>("outdir", "out"));
  }
  if (n && *n == 0) throw config_error("--n must be >= 1");
  ctx.n_override = n;
  ctx.verbosity = verbosity;
  return ctx;
}

// The config as echoed into reports: everything except where it was written.
inline nlohmann::json config_echo(const run_context& ctx) {
  nlohmann::json j = ctx.config;
  j.erase("outdir");
  return j;
}

}  // namespace patchlab
