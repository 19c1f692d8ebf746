#pragma once

#include "fpanel/cluster.hpp"
#include "fpanel/fpca.hpp"
#include "fpanel/regress.hpp"
#include "fpanel/static_fe.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fpanel {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";

/// k-means on penalized-spline smooths of one variable's reconstructed curves.
struct ClusterConfig {
  std::string variable = "MCAP";
  std::size_t k = 3;
  /// Unset: derived from the global seed under the label "cluster".
  std::optional<std::uint64_t> seed;
  std::size_t restarts = 20;
  std::size_t max_iterations = 100;
  std::size_t n_basis = 15;
  std::size_t order = 4;
  std::vector<double> lambda_grid = log_spaced(1e-6, 1e0, 7);
};

/// One regression: response, terms, bases and penalty search. A term with a
/// scalar S multiplies the predictor by AV<S>, the subject mean of the
/// reconstructed S curve.
struct RegressionConfig {
  std::string name;
  RegressionSpec spec;
  TermKind mode = TermKind::Surface;
};

struct StaticConfig {
  StaticPanelSpec spec;
  /// Apply the configured variable transforms before fitting.
  bool transformed = true;
};

struct RunConfig {
  std::filesystem::path input;
  std::filesystem::path output;
  std::uint64_t seed = 20170131;
  /// Variable -> transform; variables absent here are used untransformed.
  std::map<std::string, Transform> transforms;
  PaceConfig pace;
  std::optional<ClusterConfig> cluster;
  std::vector<RegressionConfig> regressions;
  std::optional<StaticConfig> static_fe;

  /// Relative paths resolve against `base` (the config file's directory).
  static RunConfig from_json(const json& j, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& path);
  json to_json() const;

  Transform transform_of(const std::string& variable) const;
  /// Variables that get a PACE fit: cluster variable, regression responses,
  /// predictors and scalar sources, in first-mention order.
  std::vector<std::string> functional_variables() const;
  /// Every variable the config names.
  std::vector<std::string> referenced_variables() const;
  /// Throws InvalidConfig for structural problems.
  void validate() const;
  /// Throws UnknownVariable for names missing from the panel.
  void check_schema(const PanelTable& table) const;
};

/// Per-stage seed from the global seed and a stage label (FNV-1a then splitmix64).
std::uint64_t stage_seed(std::uint64_t global, const std::string& label);

/// Output root: an absolute `requested` path as is, a relative one under
/// FPANEL_OUTPUT_ROOT when that is set, else relative to the working directory.
std::filesystem::path resolve_output(const std::filesystem::path& requested);

/// Stage-prefixed progress lines on standard error.
void log_stage(const std::string& stage, const std::string& message);

// Stage exports. Every CSV number is written in shortest round-trip form so
// that a stage re-read from disk reproduces the in-memory doubles exactly.

void write_missingness(const std::filesystem::path& path, const std::vector<MissingnessRow>& rows);

/// smooth/<VAR>: mean.csv + mean.json, covariance.csv + covariance.json.
void write_smoothing(const std::filesystem::path& dir, const SmoothingResult& result, const FunctionalDataset& data,
                     std::size_t grid_size);
SmoothingResult read_smoothing(const std::filesystem::path& dir);

/// fpca/<VAR>: mean, eigenfunctions, eigenvalues, scores, reconstructed curves
/// and fpca_summary.json.
void write_fpca(const std::filesystem::path& dir, const FpcaFit& fit, const SparseConversion& conversion);
/// Reconstructed curves from an fpca directory (curves.csv).
CurveSet read_fpca_curves(const std::filesystem::path& dir);
CurveSet fpca_curves(const FpcaFit& fit);

struct ClusterRun {
  ClusterModel model;
  std::vector<std::string> subjects;
  std::vector<PenalizedCurve> smooths;
  std::vector<GridCurve> curves;  // smoothed curves on the grid
};
ClusterRun run_cluster(const CurveSet& curves, const ClusterConfig& config, std::uint64_t seed);
void write_cluster(const std::filesystem::path& dir, const ClusterRun& run, const DomainMap& domain);

/// Aligns the curve sets on common subjects and fits one regression.
RegressionFit run_regression(const RegressionConfig& config, const std::map<std::string, CurveSet>& curves);
void write_regression(const std::filesystem::path& dir, const RegressionFit& fit);

PanelTable transform_panel(const PanelTable& table, const RunConfig& config);
StaticPanelFit run_static(const PanelTable& table, const RunConfig& config);
void write_static(const std::filesystem::path& path, const StaticPanelFit& fit, const StaticConfig& config);

/// What run_pipeline did, also written to run_summary.json.
struct RunReport {
  json summary;
  std::filesystem::path output;
};

struct PipelineStages {
  bool cluster = true;
  bool regress = true;
  bool static_fe = true;
};

/// ingest -> transform -> smooth -> fpca -> cluster -> regress -> static FE.
/// Stage errors propagate labelled; completed outputs stay and a FAILED file
/// names the failing stage. Schema errors surface before anything is written.
RunReport run_pipeline(const RunConfig& config, PipelineStages stages = {});

}  // namespace fpanel
