#include "fpanel/panel.hpp"

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace fpanel {

double DomainMap::to_unit(double year) const {
  if (year_max == year_min) return 0.0;
  return (year - year_min) / static_cast<double>(year_max - year_min);
}

double DomainMap::to_year(double t) const {
  return year_min + t * static_cast<double>(year_max - year_min);
}

double DomainMap::year_step() const {
  if (year_max == year_min) return 1.0;
  return 1.0 / static_cast<double>(year_max - year_min);
}

PanelTable::PanelTable(std::vector<std::string> subjects, int year_min, int year_max,
                       std::vector<std::string> variables)
    : subjects_(std::move(subjects)),
      year_min_(year_min),
      year_max_(year_max),
      variables_(std::move(variables)) {
  if (year_min_ > year_max_) fail(ErrorCode::InvalidArgument, "year_min > year_max");
  const std::size_t n = subjects_.size() * year_count() * variables_.size();
  values_.assign(n, 0.0);
  present_.assign(n, 0);
}

std::optional<std::size_t> PanelTable::subject_index(const std::string& id) const {
  auto it = std::find(subjects_.begin(), subjects_.end(), id);
  if (it == subjects_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - subjects_.begin());
}

std::optional<std::size_t> PanelTable::variable_index(const std::string& name) const {
  auto it = std::find(variables_.begin(), variables_.end(), name);
  if (it == variables_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - variables_.begin());
}

std::size_t PanelTable::offset(std::size_t subject, int year, std::size_t variable) const {
  if (subject >= subjects_.size() || variable >= variables_.size() || year < year_min_ ||
      year > year_max_)
    fail(ErrorCode::InvalidArgument, "cell outside the panel cube");
  return (variable * subjects_.size() + subject) * year_count() +
         static_cast<std::size_t>(year - year_min_);
}

std::optional<double> PanelTable::get(std::size_t subject, int year, std::size_t variable) const {
  const std::size_t k = offset(subject, year, variable);
  if (!present_[k]) return std::nullopt;
  return values_[k];
}

std::optional<double> PanelTable::get(const std::string& subject, int year,
                                      const std::string& variable) const {
  auto s = subject_index(subject);
  auto v = variable_index(variable);
  if (!s || !v) return std::nullopt;
  return get(*s, year, *v);
}

void PanelTable::set(std::size_t subject, int year, std::size_t variable,
                     std::optional<double> value) {
  const std::size_t k = offset(subject, year, variable);
  present_[k] = value.has_value();
  values_[k] = value.value_or(0.0);
}

std::size_t PanelTable::present_count(std::size_t variable) const {
  const std::size_t block = subjects_.size() * year_count();
  return static_cast<std::size_t>(std::count(present_.begin() + static_cast<std::ptrdiff_t>(variable * block),
                                             present_.begin() + static_cast<std::ptrdiff_t>((variable + 1) * block),
                                             static_cast<unsigned char>(1)));
}

bool PanelTable::operator==(const PanelTable& other) const {
  if (subjects_ != other.subjects_ || variables_ != other.variables_ ||
      year_min_ != other.year_min_ || year_max_ != other.year_max_ || present_ != other.present_)
    return false;
  for (std::size_t k = 0; k < values_.size(); ++k)
    if (present_[k] && values_[k] != other.values_[k]) return false;
  return true;
}

namespace {

bool is_missing_token(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (text.empty()) return true;
  return text.size() == 2 && std::toupper(static_cast<unsigned char>(text[0])) == 'N' &&
         std::toupper(static_cast<unsigned char>(text[1])) == 'A';
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

struct RawCell {
  std::string subject;
  int year;
  std::string variable;
  std::optional<double> value;
};

}  // namespace

PanelTable parse_panel(const std::string& raw_text, const std::vector<std::string>& schema) {
  std::string_view text = raw_text;
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    header = io::split_csv_line(line);
    for (auto& h : header) h = trim(h);
  }
  if (header.empty()) fail(ErrorCode::EmptyFile, "no header row");

  auto column = [&](const char* name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      fail(ErrorCode::MalformedRow, std::string("header lacks column '") + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_country = column("country");
  const std::size_t c_year = column("year");
  const std::size_t c_variable = column("variable");
  const std::size_t c_value = column("value");
  const std::size_t width = std::max({c_country, c_year, c_variable, c_value}) + 1;

  std::vector<std::string> variables = schema;
  const bool open_schema = schema.empty();

  std::vector<RawCell> cells;
  std::set<std::tuple<std::string, int, std::string>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = io::split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() < width) fail(ErrorCode::MalformedRow, where + ": too few fields");

    RawCell cell;
    cell.subject = trim(fields[c_country]);
    if (cell.subject.empty()) fail(ErrorCode::MalformedRow, where + ": empty country");
    auto year = io::parse_int(fields[c_year]);
    if (!year || *year < std::numeric_limits<int>::min() / 2 || *year > std::numeric_limits<int>::max() / 2)
      fail(ErrorCode::MalformedRow, where + ": non-numeric year '" + fields[c_year] + "'");
    cell.year = static_cast<int>(*year);
    cell.variable = trim(fields[c_variable]);
    if (std::find(variables.begin(), variables.end(), cell.variable) == variables.end()) {
      if (!open_schema) fail(ErrorCode::UnknownVariable, where + ": '" + cell.variable + "'");
      variables.push_back(cell.variable);
    }
    if (!is_missing_token(fields[c_value])) {
      auto v = io::parse_double(fields[c_value]);
      if (!v) fail(ErrorCode::MalformedRow, where + ": non-numeric value '" + fields[c_value] + "'");
      cell.value = *v;
    }
    if (!seen.emplace(cell.subject, cell.year, cell.variable).second)
      fail(ErrorCode::DuplicateCell, where + ": " + cell.subject + "/" + std::to_string(cell.year) + "/" +
                                         cell.variable);
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) fail(ErrorCode::EmptyFile, "no data rows");

  std::set<std::string> subject_set;
  int year_min = cells.front().year;
  int year_max = cells.front().year;
  for (const auto& c : cells) {
    subject_set.insert(c.subject);
    year_min = std::min(year_min, c.year);
    year_max = std::max(year_max, c.year);
  }
  PanelTable table({subject_set.begin(), subject_set.end()}, year_min, year_max, variables);
  for (const auto& c : cells) {
    table.set(*table.subject_index(c.subject), c.year, *table.variable_index(c.variable), c.value);
  }
  return table;
}

PanelTable load_panel(const std::filesystem::path& path, const std::vector<std::string>& schema) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::Io, "input not found: " + path.string());
  return parse_panel(io::read_file(path), schema);
}

std::string format_panel(const PanelTable& table) {
  std::string out = "country,year,variable,value\n";
  for (std::size_t s = 0; s < table.subjects().size(); ++s) {
    const std::string subject = io::csv_field(table.subjects()[s]);
    for (int y = table.year_min(); y <= table.year_max(); ++y) {
      for (std::size_t v = 0; v < table.variables().size(); ++v) {
        auto value = table.get(s, y, v);
        out += subject + "," + std::to_string(y) + "," + io::csv_field(table.variables()[v]) + "," +
               (value ? io::format_double(*value) : std::string("NA")) + "\n";
      }
    }
  }
  return out;
}

void write_panel(const PanelTable& table, const std::filesystem::path& path) {
  io::write_file(path, format_panel(table));
}

std::vector<MissingnessRow> missingness_report(const PanelTable& table) {
  const std::size_t total = table.subjects().size() * table.year_count();
  if (total == 0) fail(ErrorCode::EmptyDataset, "panel has no cells");
  std::vector<MissingnessRow> rows;
  for (std::size_t v = 0; v < table.variables().size(); ++v) {
    MissingnessRow row;
    row.variable = table.variables()[v];
    row.total = total;
    row.present = table.present_count(v);
    row.missing = total - row.present;
    // Integer half-up rounding of 10000 * missing / total, i.e. hundredths of a percent.
    const unsigned long long hundredths = (20000ULL * row.missing + total) / (2ULL * total);
    row.percent = static_cast<double>(hundredths) / 100.0;
    rows.push_back(row);
  }
  return rows;
}

Transform Transform::parse(const std::string& raw) {
  std::string text = trim(raw);
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "none" || text.empty()) return none();
  if (text == "log") return log();
  if (text == "log-offset") return log_offset();
  std::string arg;
  if (text.starts_with("log-offset:")) {
    arg = text.substr(11);
  } else if (text.starts_with("log-offset(") && text.ends_with(")")) {
    arg = text.substr(11, text.size() - 12);
  } else {
    fail(ErrorCode::InvalidConfig, "unknown transform '" + raw + "'");
  }
  auto c = io::parse_double(arg);
  if (!c) fail(ErrorCode::InvalidConfig, "bad log-offset constant in '" + raw + "'");
  return log_offset(*c);
}

std::string Transform::tag() const {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::Log: return "log";
    case Kind::LogOffset:
      return offset ? "log-offset(" + io::format_double(*offset) + ")" : "log-offset";
  }
  return "none";
}

double Transform::apply(double value) const {
  switch (kind) {
    case Kind::None: return value;
    case Kind::Log: return std::log(value);
    case Kind::LogOffset: return std::log(value + offset.value_or(0.0));
  }
  return value;
}

double Transform::invert(double value) const {
  switch (kind) {
    case Kind::None: return value;
    case Kind::Log: return std::exp(value);
    case Kind::LogOffset: return std::exp(value) - offset.value_or(0.0);
  }
  return value;
}

std::size_t FunctionalDataset::observation_count() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

std::vector<std::string> FunctionalDataset::subject_ids() const {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.subject);
  return ids;
}

void validate(const FunctionalDataset& data) {
  for (const auto& s : data.samples) {
    if (s.times.size() != s.values.size() || s.times.empty())
      fail(ErrorCode::InvalidArgument, "subject " + s.subject + ": times/values size mismatch or empty");
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      if (!(s.times[j] >= 0.0 && s.times[j] <= 1.0))
        fail(ErrorCode::InvalidArgument, "subject " + s.subject + ": time outside [0,1]");
      if (j > 0 && !(s.times[j] > s.times[j - 1]))
        fail(ErrorCode::InvalidArgument, "subject " + s.subject + ": times not strictly increasing");
      if (!std::isfinite(s.values[j]))
        fail(ErrorCode::NonFiniteEntries, "subject " + s.subject + ": non-finite value");
    }
  }
}

SparseConversion to_sparse_functional(const PanelTable& table, const std::string& variable,
                                      const Transform& transform) {
  auto v = table.variable_index(variable);
  if (!v) fail(ErrorCode::UnknownVariable, "'" + variable + "'");
  if (table.present_count(*v) == 0) fail(ErrorCode::VariableMissingEverywhere, "'" + variable + "'");

  Transform resolved = transform;
  if (resolved.kind == Transform::Kind::LogOffset && !resolved.offset) {
    double min_positive = std::numeric_limits<double>::infinity();
    bool has_zero = false;
    for (std::size_t s = 0; s < table.subjects().size(); ++s) {
      for (int y = table.year_min(); y <= table.year_max(); ++y) {
        if (auto x = table.get(s, y, *v)) {
          if (*x > 0.0) min_positive = std::min(min_positive, *x);
          if (*x == 0.0) has_zero = true;
        }
      }
    }
    if (!std::isfinite(min_positive))
      fail(ErrorCode::NonPositiveUnderLog, "'" + variable + "' has no positive values");
    resolved.offset = has_zero ? 0.01 * min_positive : 0.0;
  }
  const double shift = resolved.kind == Transform::Kind::LogOffset ? *resolved.offset : 0.0;

  SparseConversion out;
  out.dataset.domain = table.domain();
  out.dataset.variable = variable;
  out.dataset.transform = resolved;
  for (std::size_t s = 0; s < table.subjects().size(); ++s) {
    SparseFunctionalSample sample;
    sample.subject = table.subjects()[s];
    for (int y = table.year_min(); y <= table.year_max(); ++y) {
      auto x = table.get(s, y, *v);
      if (!x) continue;
      if (resolved.kind != Transform::Kind::None && !(*x + shift > 0.0))
        fail(ErrorCode::NonPositiveUnderLog,
             "'" + variable + "' at " + sample.subject + "/" + std::to_string(y) + " = " + io::format_double(*x));
      sample.times.push_back(out.dataset.domain.to_unit(y));
      sample.values.push_back(resolved.apply(*x));
    }
    if (sample.times.empty()) {
      out.excluded.push_back(sample.subject);
      continue;
    }
    if (sample.times.size() == 1) out.single_observation.push_back(sample.subject);
    out.dataset.samples.push_back(std::move(sample));
  }
  return out;
}

}  // namespace fpanel
