#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace fpanel {

/// G equally spaced points on [0, 1], G >= 2.
Eigen::VectorXd uniform_grid(std::size_t size);

/// Trapezoidal quadrature weights for a uniform grid.
Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& grid);

/// True when both grids have the same size and identical points.
bool same_grid(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Throws InvalidArgument unless `grid` is uniform with G >= 2 on [0, 1].
void check_uniform_grid(const Eigen::VectorXd& grid);

/// A function sampled on a uniform grid.
struct GridCurve {
  Eigen::VectorXd grid;
  Eigen::VectorXd values;

  std::size_t size() const { return static_cast<std::size_t>(grid.size()); }

  /// Linear interpolation; t is clamped to the grid range.
  double at(double t) const;

  /// Trapezoidal integral over the grid.
  double integral() const;
};

/// A bivariate function sampled on grid x grid.
struct GridSurface {
  Eigen::VectorXd grid;
  Eigen::MatrixXd values;

  std::size_t size() const { return static_cast<std::size_t>(grid.size()); }
};

/// Linear interpolation of `values` (defined on `grid`) at t, clamped.
double interpolate(const Eigen::VectorXd& grid, const Eigen::Ref<const Eigen::VectorXd>& values,
                   double t);

}  // namespace fpanel
