#pragma once

// Shared synthetic fixtures for unit and acceptance tests.

#include "fpanel/regress.hpp"
#include "fpanel/synth.hpp"

#include <cmath>
#include <numbers>

namespace fixtures {

using namespace fpanel;

inline constexpr std::uint64_t kSeed = 20170131;

// Standard fixture observed densely without noise: every lattice point of the grid.
inline KlTruth dense_truth(std::size_t G = 51) {
  KlTruth t = KlTruth::standard();
  t.sigma = 0.0;
  t.lattice = G;
  t.n_min = t.n_max = G;
  return t;
}

// Predictor process rich enough to identify a smooth surface: eight sine
// components with geometric variances around a sinusoidal mean.
inline KlTruth rich_predictor(std::uint64_t seed = kSeed, std::size_t G = 51) {
  KlTruth t = dense_truth(G);
  t.eigenvalues.clear();
  for (int k = 0; k < 8; ++k) t.eigenvalues.push_back(4.0 * std::pow(0.6, k));
  t.seed = seed;
  return t;
}

inline CurveSet curve_set(const Eigen::MatrixXd& values, const Eigen::VectorXd& grid, const std::string& prefix = "S") {
  CurveSet c;
  c.grid = grid;
  c.values = values;
  c.domain = {0, static_cast<int>(grid.size()) - 1};
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::string num = std::to_string(i + 1);
    c.subjects.push_back(prefix + std::string(num.size() < 4 ? 4 - num.size() : 0, '0') + num);
  }
  return c;
}

inline double grid_l2(const Eigen::VectorXd& grid, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt(trapezoid_weights(grid).dot((a - b).cwiseAbs2()));
}

// Three planted groups: constant offsets 5 noise units apart, smooth and
// pointwise noise of unit scale.
struct PlantedClusters {
  std::vector<GridCurve> curves;
  std::vector<std::size_t> labels;
};

inline PlantedClusters planted_clusters(std::uint64_t seed, std::size_t per_group = 20, double scale = 1.0) {
  Rng rng(seed);
  const Eigen::VectorXd grid = uniform_grid(51);
  PlantedClusters out;
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < per_group; ++i) {
      const double z1 = rng.normal(), z2 = rng.normal();
      Eigen::VectorXd v(grid.size());
      for (Eigen::Index j = 0; j < grid.size(); ++j) {
        const double t = grid[j];
        v[j] = 5.0 * scale * static_cast<double>(g) +
               scale * (0.7 * z1 * std::sqrt(2.0) * std::sin(std::numbers::pi * t) +
                        0.5 * z2 * std::sqrt(2.0) * std::sin(2.0 * std::numbers::pi * t) + 0.5 * rng.normal());
      }
      out.curves.push_back({grid, v});
      out.labels.push_back(g);
    }
  return out;
}

}  // namespace fixtures
