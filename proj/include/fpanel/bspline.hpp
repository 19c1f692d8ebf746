#pragma once

#include "fpanel/grid.hpp"
#include "fpanel/panel.hpp"

#include <filesystem>
#include <vector>

namespace fpanel {

/// Clamped B-spline basis on [0, 1] with uniform interior knots.
/// n_basis = #interior knots + order.
class BSplineBasis {
 public:
  BSplineBasis(std::size_t n_basis, std::size_t order = 4);

  std::size_t n_basis() const { return n_basis_; }
  std::size_t order() const { return order_; }
  std::size_t degree() const { return order_ - 1; }
  const std::vector<double>& knots() const { return knots_; }
  /// Distinct knot values, 0 and 1 included.
  std::vector<double> breakpoints() const;

  /// Index mu of the knot span [knots[mu], knots[mu+1]) holding t; t = 1 falls in the last span.
  std::size_t span(double t) const;
  /// Values (or derivatives of order `deriv`) of all basis functions at t.
  Eigen::VectorXd evaluate(double t, std::size_t deriv = 0) const;
  /// #points x n_basis. Throws PointOutsideDomain.
  Eigen::MatrixXd design_matrix(const Eigen::VectorXd& points, std::size_t deriv = 0) const;
  /// P with x'Px = integral of (d^m/dt^m of the spline x)^2. Throws OrderTooLow unless order > m.
  Eigen::MatrixXd penalty_matrix(std::size_t derivative_order = 2) const;
  /// G with x'Gy = integral of spline(x) * spline(y).
  Eigen::MatrixXd gram_matrix() const;

  bool operator==(const BSplineBasis& other) const = default;

 private:
  // Nonzero basis functions of span mu and their derivatives up to n: (n+1) x order.
  Eigen::MatrixXd local_derivatives(double t, std::size_t mu, std::size_t n) const;
  Eigen::MatrixXd integrate_products(std::size_t deriv) const;

  std::size_t n_basis_;
  std::size_t order_;
  std::vector<double> knots_;
};

/// Gauss-Legendre nodes and weights on [a, b].
void gauss_legendre(std::size_t points, double a, double b, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

struct PenalizedCurve {
  BSplineBasis basis;
  Eigen::VectorXd coefficients;
  double lambda = 0.0;

  double value(double t) const;
  GridCurve on_grid(const Eigen::VectorXd& grid) const;
  /// Curvature functional x'Px.
  double roughness() const;
};

/// argmin ||y - B x||^2 + lambda x'Px with P the second-derivative penalty.
PenalizedCurve smooth_penalized(const Eigen::VectorXd& points, const Eigen::VectorXd& values,
                                const BSplineBasis& basis, double lambda);
PenalizedCurve smooth_penalized(const SparseFunctionalSample& sample, const BSplineBasis& basis, double lambda);
PenalizedCurve smooth_penalized(const GridCurve& curve, const BSplineBasis& basis, double lambda);

struct LambdaChoice {
  double lambda = 0.0;
  std::vector<double> candidates;
  std::vector<double> scores;  // +inf where tr(H) >= n
};

/// GCV(lambda) = n RSS / (n - tr H)^2 over the candidates; ties go to the larger lambda.
LambdaChoice gcv_lambda(const Eigen::VectorXd& points, const Eigen::VectorXd& values, const BSplineBasis& basis,
                        const std::vector<double>& candidates);
LambdaChoice gcv_lambda(const GridCurve& curve, const BSplineBasis& basis, const std::vector<double>& candidates);

/// `count` values spaced evenly in log10 between lo and hi.
std::vector<double> log_spaced(double lo, double hi, std::size_t count);

/// Smooths every curve, choosing lambda per curve by GCV when `candidates` has
/// more than one entry. Curves are processed in parallel.
std::vector<PenalizedCurve> smooth_curves(const std::vector<GridCurve>& curves, const BSplineBasis& basis,
                                          const std::vector<double>& candidates);

/// Writes basis.json (knots, order), design.csv on `grid` and penalty.csv into `dir`.
void export_basis(const BSplineBasis& basis, const Eigen::VectorXd& grid, const std::filesystem::path& dir);

}  // namespace fpanel
