#pragma once

// Report bundles and their on-disk form:
//
//   <outdir>/report.json       schema-versioned bundle (sorted keys)
//   <outdir>/records.jsonl     one generation record per line
//   <outdir>/tables/<name>.csv one file per table, columns in declared order
//   <outdir>/grid.svg          rewrite-score heatmap (scan only)
//
// Each file is written to a temporary sibling and renamed into place, with
// report.json last.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/errors.hpp"

namespace patchlab {

namespace fs = std::filesystem;

inline constexpr int report_schema_version = 1;
inline constexpr const char* engine_version = "0.4.0";

struct table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;

  void add(std::vector<nlohmann::json> row) {
    if (row.size() != columns.size()) throw experiment_error("table row has the wrong number of cells");
    rows.push_back(std::move(row));
  }
  bool operator==(const table&) const = default;
};

inline void to_json(nlohmann::json& j, const table& t) { j = nlohmann::json{{"columns", t.columns}, {"rows", t.rows}}; }
inline void from_json(const nlohmann::json& j, table& t) {
  t.columns = j.at("columns").get<std::vector<std::string>>();
  t.rows = j.at("rows").get<std::vector<std::vector<nlohmann::json>>>();
}

// layers x columns; missing cells are nullopt.
struct rewrite_grid {
  std::vector<std::string> column_labels;
  std::vector<std::vector<std::optional<double>>> values;

  std::size_t layers() const { return values.size(); }
  std::size_t columns() const { return values.empty() ? 0 : values[0].size(); }
  bool operator==(const rewrite_grid&) const = default;
};

inline void to_json(nlohmann::json& j, const rewrite_grid& g) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& row : g.values) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& x : row) r.push_back(x ? nlohmann::json(*x) : nlohmann::json());
    v.push_back(r);
  }
  j = nlohmann::json{{"column_labels", g.column_labels}, {"values", v}};
}

inline void from_json(const nlohmann::json& j, rewrite_grid& g) {
  g.column_labels = j.at("column_labels").get<std::vector<std::string>>();
  g.values.clear();
  for (const auto& row : j.at("values")) {
    std::vector<std::optional<double>> r;
    for (const auto& x : row) r.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
    g.values.push_back(std::move(r));
  }
}

inline table grid_table(const rewrite_grid& g) {
  table t{{"layer", "token_index", "score"}, {}};
  for (std::size_t l = 0; l < g.layers(); ++l)
    for (std::size_t c = 0; c < g.columns(); ++c)
      t.add({l, c, g.values[l][c] ? nlohmann::json(*g.values[l][c]) : nlohmann::json()});
  return t;
}

struct report_bundle {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  std::map<std::string, table> tables;
  std::optional<rewrite_grid> grid;
  std::vector<nlohmann::json> records;

  bool operator==(const report_bundle&) const = default;
};

// report.json body; records live in records.jsonl.
inline nlohmann::json report_json(const report_bundle& b) {
  nlohmann::json j;
  j["schema_version"] = report_schema_version;
  j["kind"] = b.kind;
  j["config"] = b.config;
  j["provenance"] = b.provenance;
  j["metrics"] = b.metrics;
  j["tables"] = nlohmann::json::object();
  for (const auto& [name, t] : b.tables) j["tables"][name] = t;
  if (b.grid) j["grid"] = *b.grid;
  j["record_count"] = b.records.size();
  return j;
}

namespace detail {

inline std::string csv_cell(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  return v.dump();
}

inline void write_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw experiment_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw experiment_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw experiment_error("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

inline std::string fmt(double v, const char* f = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

inline std::string to_csv(const table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + detail::csv_cell(t.columns[i]);
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + detail::csv_cell(row[i]);
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::string xml_escape(std::string_view in) {
  std::string out;
  for (char ch : in) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace detail

// Heatmap: one row per layer (layer 0 at the bottom), one column per token.
// Blue for negative scores, red for positive, grey for missing cells.
inline std::string to_svg(const rewrite_grid& g) {
  const int cell = 14, left = 40, top = 10, bottom = 30;
  const int w = left + static_cast<int>(g.columns()) * cell + 10;
  const int h = top + static_cast<int>(g.layers()) * cell + bottom;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
                  std::to_string(h) + "\" font-family=\"monospace\" font-size=\"9\">\n";
  for (std::size_t l = 0; l < g.layers(); ++l) {
    const int y = top + static_cast<int>(g.layers() - 1 - l) * cell;
    s += "<text x=\"2\" y=\"" + std::to_string(y + cell - 3) + "\">L" + std::to_string(l) + "</text>\n";
    for (std::size_t c = 0; c < g.columns(); ++c) {
      const int x = left + static_cast<int>(c) * cell;
      std::string fill = "#bbbbbb";
      std::string title = "missing";
      if (const auto& v = g.values[l][c]) {
        const double a = std::min(1.0, std::fabs(*v));
        const int k = static_cast<int>(std::lround(255.0 * (1.0 - a)));
        char buf[16];
        if (*v >= 0)
          std::snprintf(buf, sizeof buf, "#ff%02x%02x", k, k);
        else
          std::snprintf(buf, sizeof buf, "#%02x%02xff", k, k);
        fill = buf;
        title = detail::fmt(*v);
      }
      s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" + std::to_string(cell) +
           "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill + "\"><title>layer " + std::to_string(l) +
           ", column " + std::to_string(c) +
           (c < g.column_labels.size() ? " " + detail::xml_escape(g.column_labels[c]) : std::string()) + ": " + title + "</title></rect>\n";
    }
  }
  for (std::size_t c = 0; c < g.columns(); c += 5) {
    const int x = left + static_cast<int>(c) * cell;
    s += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(h - 12) + "\">" + std::to_string(c) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline void emit_report(const report_bundle& b, const fs::path& outdir) {
  std::error_code ec;
  fs::create_directories(outdir / "tables", ec);
  if (ec) throw experiment_error("cannot create output directory '" + outdir.string() + "': " + ec.message());
  std::string lines;
  for (const auto& r : b.records) lines += r.dump() + '\n';
  detail::write_atomic(outdir / "records.jsonl", lines);
  for (const auto& [name, t] : b.tables) detail::write_atomic(outdir / "tables" / (name + ".csv"), to_csv(t));
  if (b.grid) detail::write_atomic(outdir / "grid.svg", to_svg(*b.grid));
  detail::write_atomic(outdir / "report.json", report_json(b).dump(2) + '\n');
}

inline report_bundle load_report(const fs::path& outdir) {
  std::ifstream in(outdir / "report.json");
  if (!in) throw experiment_error("cannot open '" + (outdir / "report.json").string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw experiment_error("report.json: " + std::string(e.what()));
  }
  if (j.value("schema_version", 0) != report_schema_version)
    throw experiment_error("report.json: unsupported schema_version");
  report_bundle b;
  b.kind = j.at("kind").get<std::string>();
  b.config = j.at("config");
  b.provenance = j.at("provenance");
  b.metrics = j.at("metrics");
  for (auto it = j.at("tables").begin(); it != j.at("tables").end(); ++it) b.tables[it.key()] = it.value().get<table>();
  if (j.contains("grid")) b.grid = j["grid"].get<rewrite_grid>();
  std::ifstream rec(outdir / "records.jsonl");
  std::string line;
  while (std::getline(rec, line))
    if (!line.empty()) b.records.push_back(nlohmann::json::parse(line));
  if (b.records.size() != j.value("record_count", std::size_t{0}))
    throw experiment_error("records.jsonl has " + std::to_string(b.records.size()) + " records, report.json expects " +
                           std::to_string(j.value("record_count", std::size_t{0})));
  return b;
}

}  // namespace patchlab
