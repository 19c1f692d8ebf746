#pragma once

#include "fpanel/panel.hpp"

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

namespace fpanel {

/// Two-way fixed-effects model
///   y_it = a_i + l_t + b1 HHI_it + b2 MCAP_it + b3 HHI_it * AVMCAP_i + g'Z_it + e_it.
struct StaticPanelSpec {
  std::string response = "POV";
  std::string competition = "HHI";
  std::string development = "MCAP";
  bool interaction = true;
  std::vector<std::string> controls;
};

struct StaticPanelFit {
  std::vector<std::string> names;  // regressor labels in coefficient order
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;      // clustered by country
  Eigen::MatrixXd covariance;
  std::size_t observations = 0;    // complete cases used
  std::size_t dropped = 0;         // country-year rows removed by listwise deletion
  std::size_t countries = 0;
  std::size_t years = 0;
  std::size_t demean_iterations = 0;
  std::map<std::string, double> country_effects;
  std::map<int, double> year_effects;  // first year normalized to 0
  std::map<std::string, double> avmcap;

  double coefficient(const std::string& name) const;
  double std_error(const std::string& name) const;
};

/// Complete-case rows of a panel for a static specification.
struct PanelRows {
  std::vector<std::string> names;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  std::vector<std::size_t> country;  // index into `countries`
  std::vector<std::size_t> year;     // index into `years`
  std::vector<std::string> countries;
  std::vector<int> years;
  std::size_t dropped = 0;
  std::map<std::string, double> avmcap;
};

/// Builds regressors and applies listwise deletion. Throws NoCompleteCases, UnknownVariable.
PanelRows assemble_panel_rows(const PanelTable& table, const StaticPanelSpec& spec);

/// Within estimator: alternating country/year demeaning to 1e-10, OLS, and
/// country-clustered covariance scaled by G/(G-1) (N-1)/(N-K).
StaticPanelFit fit_static_panel_fe(const PanelTable& table, const StaticPanelSpec& spec);
StaticPanelFit fit_two_way_fe(const PanelRows& rows);

/// Least-squares dummy-variable estimator of the same model.
StaticPanelFit fit_static_panel_dummy(const PanelTable& table, const StaticPanelSpec& spec);
StaticPanelFit fit_two_way_dummy(const PanelRows& rows);

}  // namespace fpanel
