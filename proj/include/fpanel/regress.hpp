#pragma once

#include "fpanel/bspline.hpp"
#include "fpanel/grid.hpp"
#include "fpanel/panel.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fpanel {

/// Curves of one variable for a list of subjects on a shared grid.
struct CurveSet {
  std::vector<std::string> subjects;
  Eigen::VectorXd grid;
  Eigen::MatrixXd values;  // subjects x G
  DomainMap domain;

  std::size_t size() const { return subjects.size(); }
  GridCurve curve(std::size_t i) const { return {grid, values.row(static_cast<Eigen::Index>(i)).transpose()}; }
  /// Restriction to `keep` (which must be a subset of `subjects`), in that order.
  CurveSet subset(const std::vector<std::string>& keep) const;
};

struct RegressionData {
  CurveSet response;
  std::map<std::string, CurveSet> predictors;
  /// Per-subject scalars aligned with response.subjects (e.g. AVMCAP).
  std::map<std::string, Eigen::VectorXd> scalars;
};

/// Subjects present in every curve set, sorted.
std::vector<std::string> common_subjects(const std::vector<const CurveSet*>& sets);

enum class TermKind { Surface, Concurrent };
std::string to_string(TermKind kind);
TermKind parse_term_kind(const std::string& text);

enum class PenaltyMode { Both, Literal };
std::string to_string(PenaltyMode mode);
PenaltyMode parse_penalty_mode(const std::string& text);

struct TermSpec {
  std::string predictor;
  TermKind kind = TermKind::Surface;
  /// Subject-level scalar multiplying the predictor curve.
  std::optional<std::string> scalar;

  /// "HHI" or "HHI_x_AVMCAP".
  std::string label() const;
};

struct RegressionSpec {
  std::string response;
  std::vector<TermSpec> terms;
  std::size_t kx = 15;
  std::size_t ky = 15;
  std::size_t order = 4;
  std::vector<double> penalty_grid = log_spaced(1e-4, 1e4, 7);
  PenaltyMode penalty_mode = PenaltyMode::Both;
  std::size_t max_sweeps = 3;
};

/// Adds the term scalar * functional(s). Throws MissingScalar unless `data`
/// carries a finite value of the scalar for every subject.
RegressionSpec attach_interaction(RegressionSpec spec, const std::string& functional, const std::string& scalar,
                                  const RegressionData& data, TermKind kind);

struct TermFit {
  TermSpec spec;
  double lambda = 0.0;
  Eigen::MatrixXd coefficients;  // kx x ky (surface) or ky x 1 (concurrent)
  Eigen::MatrixXd surface;       // G x G, rows s, columns t (surface terms)
  Eigen::VectorXd beta_t;        // G (concurrent terms)
  Eigen::VectorXd center;        // training mean of the term design, per grid point
};

struct RegressionFit {
  RegressionSpec spec;
  Eigen::VectorXd grid;
  DomainMap domain;
  std::vector<std::string> subjects;
  GridCurve alpha;
  std::vector<TermFit> terms;
  Eigen::MatrixXd response;   // subjects x G
  Eigen::MatrixXd fitted;     // subjects x G
  Eigen::MatrixXd residuals;  // subjects x G
  double gcv = 0.0;
  double effective_df = 0.0;
  std::vector<std::string> warnings;

  // Maps from curve values on the grid to basis quantities, kept for predict().
  Eigen::MatrixXd x_projection;  // G x kx: centered curve -> integrals against phi_l
  Eigen::MatrixXd psi;           // G x ky: response basis on the grid

  const TermFit* term(const std::string& label) const;
};

/// Fits every term as given (surface and concurrent terms may be mixed).
RegressionFit fit_regression(const RegressionData& data, const RegressionSpec& spec);
/// All terms as coefficient surfaces beta_j(s, t).
RegressionFit fit_mflm(const RegressionData& data, RegressionSpec spec);
/// All terms as concurrent coefficients beta_j(t).
RegressionFit fit_concurrent(const RegressionData& data, RegressionSpec spec);

/// Predicted curves for new subjects; predictors are centered with the training means.
Eigen::MatrixXd predict(const RegressionFit& fit, const std::map<std::string, CurveSet>& predictors,
                        const std::map<std::string, Eigen::VectorXd>& scalars = {});

/// 1 - sum_i e_i(t)^2 / sum_i (Y_i(t) - Ybar(t))^2; NaN where the denominator is below 1e-12.
GridCurve r2_functional(const RegressionFit& fit);

/// Integrated squared second derivatives of a fitted surface in s and t.
double surface_roughness(const RegressionFit& fit, const TermFit& term);

}  // namespace fpanel
