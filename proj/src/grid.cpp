#include "fpanel/grid.hpp"

#include "fpanel/error.hpp"

#include <algorithm>
#include <cmath>

namespace fpanel {

Eigen::VectorXd uniform_grid(std::size_t size) {
  if (size < 2) fail(ErrorCode::InvalidArgument, "grid needs at least 2 points");
  Eigen::VectorXd grid(static_cast<Eigen::Index>(size));
  const double denom = static_cast<double>(size - 1);
  for (std::size_t g = 0; g < size; ++g) grid[static_cast<Eigen::Index>(g)] = static_cast<double>(g) / denom;
  return grid;
}

Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& grid) {
  const Eigen::Index n = grid.size();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index g = 0; g + 1 < n; ++g) {
    const double half = 0.5 * (grid[g + 1] - grid[g]);
    w[g] += half;
    w[g + 1] += half;
  }
  return w;
}

bool same_grid(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

void check_uniform_grid(const Eigen::VectorXd& grid) {
  if (grid.size() < 2) fail(ErrorCode::InvalidArgument, "grid needs at least 2 points");
  const double step = (grid[grid.size() - 1] - grid[0]) / static_cast<double>(grid.size() - 1);
  if (!(step > 0.0)) fail(ErrorCode::InvalidArgument, "grid must be strictly increasing");
  for (Eigen::Index g = 1; g < grid.size(); ++g) {
    if (std::abs((grid[g] - grid[g - 1]) - step) > 1e-9 * step)
      fail(ErrorCode::InvalidArgument, "grid is not uniformly spaced");
  }
  if (grid[0] < -1e-12 || grid[grid.size() - 1] > 1.0 + 1e-12)
    fail(ErrorCode::InvalidArgument, "grid must lie in [0, 1]");
}

double interpolate(const Eigen::VectorXd& grid, const Eigen::Ref<const Eigen::VectorXd>& values,
                   double t) {
  const Eigen::Index n = grid.size();
  if (t <= grid[0]) return values[0];
  if (t >= grid[n - 1]) return values[n - 1];
  const double* begin = grid.data();
  const double* hi = std::upper_bound(begin, begin + n, t);
  const Eigen::Index k = static_cast<Eigen::Index>(hi - begin) - 1;
  const double frac = (t - grid[k]) / (grid[k + 1] - grid[k]);
  return values[k] + frac * (values[k + 1] - values[k]);
}

double GridCurve::at(double t) const { return interpolate(grid, values, t); }

double GridCurve::integral() const { return trapezoid_weights(grid).dot(values); }

}  // namespace fpanel
