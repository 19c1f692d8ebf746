#pragma once

#include "fpanel/grid.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fpanel::io {

/// Shortest decimal form that parses back to the same double; "NA" for NaN.
std::string format_double(double value);

/// Whole-field parse; rejects trailing junk and non-finite values.
std::optional<double> parse_double(std::string_view text);
std::optional<long> parse_int(std::string_view text);

/// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> split_csv_line(std::string_view line);
/// Quotes a field when it contains a comma, quote, or leading/trailing space.
std::string csv_field(std::string_view text);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate then write.
void write_file(const std::filesystem::path& path, const std::string& contents);

/// Rows of a CSV file with a header; the header is returned separately.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws Io if absent
};
CsvTable read_csv(const std::filesystem::path& path);

// Curve and surface interchange (`t,value` and `s,t,value`, long form).
void write_curve_csv(const std::filesystem::path& path, const GridCurve& curve);
GridCurve read_curve_csv(const std::filesystem::path& path);
void write_surface_csv(const std::filesystem::path& path, const GridSurface& surface);
GridSurface read_surface_csv(const std::filesystem::path& path);

}  // namespace fpanel::io
