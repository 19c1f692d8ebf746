#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fpanel {

/// Affine map between calendar years and the unit interval.
struct DomainMap {
  int year_min = 0;
  int year_max = 1;

  double to_unit(double year) const;
  double to_year(double t) const;
  /// Spacing of consecutive years on [0, 1].
  double year_step() const;

  bool operator==(const DomainMap&) const = default;
};

/// Long-format country x year x variable panel. Cells are dense over the
/// declared cube; a missing cell holds no value.
class PanelTable {
 public:
  PanelTable(std::vector<std::string> subjects, int year_min, int year_max,
             std::vector<std::string> variables);

  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::vector<std::string>& variables() const { return variables_; }
  int year_min() const { return year_min_; }
  int year_max() const { return year_max_; }
  std::size_t year_count() const { return static_cast<std::size_t>(year_max_ - year_min_ + 1); }
  DomainMap domain() const { return {year_min_, year_max_}; }

  std::optional<std::size_t> subject_index(const std::string& id) const;
  std::optional<std::size_t> variable_index(const std::string& name) const;

  std::optional<double> get(std::size_t subject, int year, std::size_t variable) const;
  std::optional<double> get(const std::string& subject, int year, const std::string& variable) const;
  void set(std::size_t subject, int year, std::size_t variable, std::optional<double> value);

  std::size_t present_count(std::size_t variable) const;

  bool operator==(const PanelTable&) const;

 private:
  std::size_t offset(std::size_t subject, int year, std::size_t variable) const;

  std::vector<std::string> subjects_;
  int year_min_;
  int year_max_;
  std::vector<std::string> variables_;
  std::vector<double> values_;
  std::vector<unsigned char> present_;
};

/// Reads a `country,year,variable,value` CSV. Subjects are sorted; variables
/// follow `schema` order. An empty schema accepts every variable in the file
/// (in order of first appearance).
PanelTable load_panel(const std::filesystem::path& path, const std::vector<std::string>& schema);
PanelTable parse_panel(const std::string& text, const std::vector<std::string>& schema);

/// Writes every cell of the cube; missing cells as `NA`.
void write_panel(const PanelTable& table, const std::filesystem::path& path);
std::string format_panel(const PanelTable& table);

struct MissingnessRow {
  std::string variable;
  std::size_t present = 0;
  std::size_t missing = 0;
  std::size_t total = 0;
  double percent = 0.0;  // rounded half-up to 2 decimals
};

std::vector<MissingnessRow> missingness_report(const PanelTable& table);

struct Transform {
  enum class Kind { None, Log, LogOffset };
  Kind kind = Kind::None;
  /// LogOffset constant; unset means "choose from the data".
  std::optional<double> offset;

  static Transform none() { return {}; }
  static Transform log() { return {Kind::Log, std::nullopt}; }
  static Transform log_offset(std::optional<double> c = std::nullopt) { return {Kind::LogOffset, c}; }

  /// "none", "log", "log-offset", "log-offset(0.01)" or "log-offset:0.01".
  static Transform parse(const std::string& text);
  std::string tag() const;
  double apply(double value) const;
  double invert(double value) const;
};

/// One subject's irregular observations on [0, 1].
struct SparseFunctionalSample {
  std::string subject;
  std::vector<double> times;
  std::vector<double> values;

  std::size_t size() const { return times.size(); }
};

struct FunctionalDataset {
  std::vector<SparseFunctionalSample> samples;
  DomainMap domain;
  std::string variable;
  /// Transform as applied, with any data-chosen offset resolved.
  Transform transform;

  std::size_t observation_count() const;
  std::vector<std::string> subject_ids() const;
};

/// Throws InvalidArgument when a sample breaks the ordering/range invariants.
void validate(const FunctionalDataset& data);

struct SparseConversion {
  FunctionalDataset dataset;
  std::vector<std::string> excluded;            // no observation of the variable
  std::vector<std::string> single_observation;  // retained, N_i = 1
};

SparseConversion to_sparse_functional(const PanelTable& table, const std::string& variable,
                                      const Transform& transform);

}  // namespace fpanel
