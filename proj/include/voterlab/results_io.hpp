#pragma once

// Result tables: fixed schemas, CSV with a '#' preamble, or JSON.
// Cells are kept as text so that what is written is exactly what is read.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace voterlab {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kArtifactVersion = "1.0.0";

struct Schema {
  std::string_view name;
  std::vector<std::string_view> columns;
};

inline const std::vector<Schema>& known_schemas() {
  static const std::vector<Schema> schemas{
      {"persistence", {"t", "rho", "p_hat", "stderr", "replicas", "aborted"}},
      {"tail", {"t", "rho", "level_alpha", "p_hat", "stderr", "replicas", "marks", "aborted"}},
      {"window", {"t", "mean_count", "stderr", "replicas"}},
      {"fit", {"model", "slope", "slope_stderr", "intercept", "r_squared", "n_points"}},
      {"duality",
       {"t", "rho", "level_alpha", "forward_p", "forward_stderr", "forward_replicas", "dual_p", "dual_stderr",
        "dual_replicas", "z", "verdict"}},
      {"walk", {"test", "t", "param", "estimate", "stderr", "reference", "ratio", "replicas"}},
  };
  return schemas;
}

inline const Schema& schema_by_name(std::string_view name) {
  for (const auto& s : known_schemas())
    if (s.name == name) return s;
  throw std::invalid_argument("unknown schema: " + std::string(name));
}

// Thrown when a file's columns match no schema (or not its declared one).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Table {
  std::string schema;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string manifest_hash;  // from the preamble, if read from a file
  std::string source;         // path it was read from

  void add_row(std::vector<std::string> row) {
    if (row.size() != columns.size()) throw std::logic_error("Table::add_row: width mismatch");
    rows.push_back(std::move(row));
  }
  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw SchemaError(source + ": no column '" + std::string(name) + "'");
  }
  double number(std::size_t row, std::string_view name) const {
    const auto& cell = rows.at(row)[column(name)];
    if (cell == "nan") return std::nan("");
    double v = 0.0;
    const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || end != cell.data() + cell.size())
      throw SchemaError(source + ": column '" + std::string(name) + "' row " + std::to_string(row + 1) +
                        ": not a number: '" + cell + "'");
    return v;
  }
};

inline Table make_table(std::string_view schema) {
  Table t;
  t.schema = std::string(schema);
  for (auto c : schema_by_name(schema).columns) t.columns.emplace_back(c);
  return t;
}

// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}
inline std::string format_number(std::int64_t v) { return std::to_string(v); }

// 64-bit FNV-1a, hex.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

inline void write_csv(std::ostream& os, const Table& t, std::string_view manifest_hash) {
  os << "# voterlab results\n";
  os << "# schema: " << t.schema << "\n";
  os << "# schema_version: " << kSchemaVersion << "\n";
  os << "# manifest_hash: " << manifest_hash << "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
}

inline nlohmann::ordered_json cell_to_json(const std::string& cell) {
  if (cell == "nan") return nullptr;
  double v = 0.0;
  const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec == std::errc() && end == cell.data() + cell.size()) {
    std::int64_t i = 0;
    const auto [iend, iec] = std::from_chars(cell.data(), cell.data() + cell.size(), i);
    if (iec == std::errc() && iend == cell.data() + cell.size()) return i;
    return v;
  }
  return cell;
}

inline void write_json(std::ostream& os, const Table& t, std::string_view manifest_hash) {
  nlohmann::ordered_json j;
  j["schema"] = t.schema;
  j["schema_version"] = kSchemaVersion;
  j["manifest_hash"] = manifest_hash;
  j["columns"] = t.columns;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    auto r = nlohmann::ordered_json::array();
    for (const auto& c : row) r.push_back(cell_to_json(c));
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  os << j.dump(2) << "\n";
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s.empty() ? "(none)" : s;
}

// Columns missing from / unexpected in `columns` relative to `schema`.
inline std::string column_diff(const Schema& schema, const std::vector<std::string>& columns) {
  std::vector<std::string> missing, unexpected;
  for (auto c : schema.columns)
    if (std::find(columns.begin(), columns.end(), c) == columns.end()) missing.emplace_back(c);
  for (const auto& c : columns)
    if (std::find(schema.columns.begin(), schema.columns.end(), c) == schema.columns.end())
      unexpected.push_back(c);
  std::string msg = "missing columns: " + join(missing) + "; unexpected columns: " + join(unexpected);
  if (missing.empty() && unexpected.empty()) msg = "columns out of order";
  return msg;
}

inline bool same_columns(const Schema& s, const std::vector<std::string>& columns) {
  return std::equal(s.columns.begin(), s.columns.end(), columns.begin(), columns.end());
}
}  // namespace detail

// Checks the header against the declared schema, or finds the schema it
// matches. On failure the message lists the offending columns against the
// declared (or closest) schema.
inline void resolve_schema(Table& t) {
  if (!t.schema.empty()) {
    const Schema* declared = nullptr;
    for (const auto& s : known_schemas())
      if (s.name == t.schema) declared = &s;
    if (!declared) throw SchemaError(t.source + ": unknown schema '" + t.schema + "'");
    if (!detail::same_columns(*declared, t.columns))
      throw SchemaError(t.source + ": does not match schema '" + t.schema + "': " +
                        detail::column_diff(*declared, t.columns));
    return;
  }
  const Schema* best = nullptr;
  std::size_t best_overlap = 0;
  for (const auto& s : known_schemas()) {
    if (detail::same_columns(s, t.columns)) {
      t.schema = std::string(s.name);
      return;
    }
    std::size_t overlap = 0;
    for (const auto& c : t.columns) overlap += std::count(s.columns.begin(), s.columns.end(), c);
    if (!best || overlap > best_overlap) {
      best = &s;
      best_overlap = overlap;
    }
  }
  throw SchemaError(t.source + ": columns match no known schema; closest is '" + std::string(best->name) +
                    "': " + detail::column_diff(*best, t.columns));
}

inline Table read_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open results file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  Table t;
  t.source = path;

  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.contains("columns") || !j.contains("rows"))
      throw SchemaError(path + ": not a results JSON document (needs 'columns' and 'rows')");
    t.schema = j.value("schema", "");
    t.manifest_hash = j.value("manifest_hash", "");
    for (const auto& c : j["columns"]) t.columns.push_back(c.get<std::string>());
    for (const auto& r : j["rows"]) {
      std::vector<std::string> row;
      for (const auto& c : r) {
        if (c.is_null()) row.emplace_back("nan");
        else if (c.is_string()) row.push_back(c.get<std::string>());
        else if (c.is_number_integer()) row.push_back(std::to_string(c.get<std::int64_t>()));
        else row.push_back(format_number(c.get<double>()));
      }
      if (row.size() != t.columns.size()) throw SchemaError(path + ": row width differs from header");
      t.rows.push_back(std::move(row));
    }
  } else {
    std::istringstream is(text);
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line[0] == '#') {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        auto key = line.substr(1, colon - 1);
        auto value = line.substr(colon + 1);
        key.erase(0, key.find_first_not_of(' '));
        value.erase(0, value.find_first_not_of(' '));
        if (key == "schema") t.schema = value;
        if (key == "manifest_hash") t.manifest_hash = value;
        continue;
      }
      auto cells = detail::split_csv_line(line);
      if (!header) {
        t.columns = std::move(cells);
        header = true;
        continue;
      }
      if (cells.size() != t.columns.size())
        throw SchemaError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                          " cells, header has " + std::to_string(t.columns.size()));
      t.rows.push_back(std::move(cells));
    }
    if (!header) throw SchemaError(path + ": no header row");
  }
  resolve_schema(t);
  return t;
}

}  // namespace voterlab
