#include "fpanel/io.hpp"

#include "fpanel/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fpanel::io {

std::string format_double(double value) {
  if (std::isnan(value)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) fail(ErrorCode::Io, "cannot format number");
  return std::string(buf, ptr);
}

std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value))
    return std::nullopt;
  return value;
}

std::optional<long> parse_int(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_field(std::string_view text) {
  const bool needs_quotes = text.find_first_of(",\"\n") != std::string_view::npos ||
                            (!text.empty() && (text.front() == ' ' || text.back() == ' '));
  if (!needs_quotes) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << contents;
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  fail(ErrorCode::Io, "missing column '" + std::string(name) + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) fail(ErrorCode::Io, path.string() + " is empty");
  return table;
}

void write_curve_csv(const std::filesystem::path& path, const GridCurve& curve) {
  std::string out = "t,value\n";
  for (Eigen::Index g = 0; g < curve.grid.size(); ++g)
    out += format_double(curve.grid[g]) + "," + format_double(curve.values[g]) + "\n";
  write_file(path, out);
}

namespace {

double field_number(const std::vector<std::string>& row, std::size_t col, const std::filesystem::path& path) {
  if (col >= row.size()) fail(ErrorCode::Io, "short row in " + path.string());
  auto v = parse_double(row[col]);
  if (!v) {
    if (row[col] == "NA") return std::nan("");
    fail(ErrorCode::Io, "bad number '" + row[col] + "' in " + path.string());
  }
  return *v;
}

}  // namespace

GridCurve read_curve_csv(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t tc = csv.column("t");
  const std::size_t vc = csv.column("value");
  GridCurve curve;
  curve.grid.resize(static_cast<Eigen::Index>(csv.rows.size()));
  curve.values.resize(curve.grid.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    curve.grid[static_cast<Eigen::Index>(r)] = field_number(csv.rows[r], tc, path);
    curve.values[static_cast<Eigen::Index>(r)] = field_number(csv.rows[r], vc, path);
  }
  return curve;
}

void write_surface_csv(const std::filesystem::path& path, const GridSurface& surface) {
  std::string out = "s,t,value\n";
  const Eigen::Index n = surface.grid.size();
  for (Eigen::Index a = 0; a < n; ++a) {
    const std::string s = format_double(surface.grid[a]) + ",";
    for (Eigen::Index b = 0; b < n; ++b)
      out += s + format_double(surface.grid[b]) + "," + format_double(surface.values(a, b)) + "\n";
  }
  write_file(path, out);
}

GridSurface read_surface_csv(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t sc = csv.column("s");
  const std::size_t tc = csv.column("t");
  const std::size_t vc = csv.column("value");
  const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(csv.rows.size()))));
  if (n * n != static_cast<Eigen::Index>(csv.rows.size()) || n < 2)
    fail(ErrorCode::Io, path.string() + " is not a square surface");
  GridSurface surface;
  surface.grid.resize(n);
  surface.values.resize(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto& row = csv.rows[static_cast<std::size_t>(a * n + b)];
      if (a == 0) surface.grid[b] = field_number(row, tc, path);
      surface.values(a, b) = field_number(row, vc, path);
    }
  }
  for (Eigen::Index a = 0; a < n; ++a) {
    if (field_number(csv.rows[static_cast<std::size_t>(a * n)], sc, path) != surface.grid[a])
      fail(ErrorCode::Io, path.string() + " has inconsistent s/t grids");
  }
  return surface;
}

}  // namespace fpanel::io
