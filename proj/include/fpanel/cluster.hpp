#pragma once

#include "fpanel/grid.hpp"

#include <cstdint>
#include <vector>

namespace fpanel {

/// sqrt of the trapezoidal integral of (a - b)^2. Throws GridMismatch.
double l2_distance(const GridCurve& a, const GridCurve& b);

struct KMeansOptions {
  std::size_t k = 3;
  std::uint64_t seed = 20170131;
  std::size_t restarts = 20;
  std::size_t max_iterations = 100;
};

struct RestartTrace {
  std::vector<double> objectives;  // after each centroid update
  std::size_t iterations = 0;
  bool converged = false;
  double objective = 0.0;
};

struct ClusterModel {
  std::size_t k = 0;
  std::vector<std::size_t> assignments;  // 0-based cluster per curve
  std::vector<GridCurve> centroids;
  double objective = 0.0;
  std::uint64_t seed = 0;
  std::size_t restarts = 0;
  std::size_t best_restart = 0;
  std::vector<RestartTrace> traces;

  std::vector<std::size_t> sizes() const;
};

/// Functional k-means: k-means++ seeding, Lloyd iterations on pointwise-mean
/// centroids, best of `restarts` by (objective, restart index). Restarts run
/// in parallel; the result does not depend on the thread count.
ClusterModel fkmeans(const std::vector<GridCurve>& curves, const KMeansOptions& options);

/// Sum over curves of the squared L2 distance to the assigned centroid.
double clustering_objective(const ClusterModel& model, const std::vector<GridCurve>& curves);

/// Pointwise mean of `aux` within each cluster of `model`. Throws IndexMismatch.
std::vector<GridCurve> cluster_means(const ClusterModel& model, const std::vector<GridCurve>& aux);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

/// Final objective of fkmeans for each k (elbow table).
std::vector<double> objective_by_k(const std::vector<GridCurve>& curves, const std::vector<std::size_t>& ks,
                                   KMeansOptions options);

/// Number of iterations whose objective rose above the previous one by more than rounding.
std::size_t monotonicity_violations(const RestartTrace& trace);

}  // namespace fpanel
