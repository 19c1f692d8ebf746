#pragma once

#include "fpanel/grid.hpp"
#include "fpanel/panel.hpp"

#include <string>
#include <vector>

namespace fpanel {

enum class KernelKind { Gaussian, Epanechnikov };

std::string to_string(KernelKind kind);
KernelKind parse_kernel_kind(const std::string& text);

struct KernelSpec {
  KernelKind kind = KernelKind::Gaussian;
  double bandwidth = 0.1;  // on the normalized [0, 1] time axis

  /// Throws InvalidArgument unless bandwidth > 0 and finite.
  void validate() const;
};

/// K(u / h): the unnormalized weight used in the ratio estimators.
/// Gaussian: exp(-x^2/2)/sqrt(2 pi); Epanechnikov: 0.75 (1 - x^2) on |x| <= 1.
double kernel_weight(const KernelSpec& spec, double u);

/// Pooled Nadaraya-Watson estimate of the mean curve on `grid`.
GridCurve smooth_mean(const FunctionalDataset& data, const KernelSpec& spec, const Eigen::VectorXd& grid);

/// Two-dimensional kernel-ratio smoother of the off-diagonal raw covariances
/// C_ijl = (X_ij - mu(t_ij)) (X_il - mu(t_il)), j != l, symmetrized.
GridSurface smooth_covariance(const FunctionalDataset& data, const GridCurve& mean,
                              const KernelSpec& spec_s, const KernelSpec& spec_t,
                              const Eigen::VectorXd& grid);

struct BandwidthChoice {
  double bandwidth = 0.0;
  std::vector<double> candidates;  // as supplied
  std::vector<double> scores;      // +inf marks a degenerate candidate
};

/// Leave-one-curve-out cross-validation of the pooled mean: for each candidate
/// the held-out subject's observations are predicted by the ratio estimator
/// fitted on the other subjects. Ties go to the larger bandwidth.
BandwidthChoice select_bandwidth(const FunctionalDataset& data, const std::vector<double>& candidates,
                                 KernelKind kind);

/// Leave-one-curve-out cross-validation of the covariance smoother: each
/// subject's off-diagonal raw products are predicted from the surface fitted
/// on the remaining subjects (h1 = h2 = candidate). Ties go to the larger
/// bandwidth.
BandwidthChoice select_covariance_bandwidth(const FunctionalDataset& data, const GridCurve& mean,
                                            const std::vector<double>& candidates, KernelKind kind);

/// Candidate bandwidths as multiples of the year spacing on [0, 1].
std::vector<double> default_bandwidth_candidates(const DomainMap& domain);
/// Twice the year spacing: the bandwidth used when selection is disabled.
double default_bandwidth(const DomainMap& domain);

namespace reference {

// Serial, formula-literal implementations kept for testing and benchmarks.

GridCurve smooth_mean(const FunctionalDataset& data, const KernelSpec& spec, const Eigen::VectorXd& grid);

GridSurface smooth_covariance(const FunctionalDataset& data, const GridCurve& mean,
                              const KernelSpec& spec_s, const KernelSpec& spec_t,
                              const Eigen::VectorXd& grid);

/// Cross-validation score of one candidate; refits the mean for every held-out
/// subject on the grid-free ratio estimator.
double mean_cv_score(const FunctionalDataset& data, const KernelSpec& spec);

}  // namespace reference

}  // namespace fpanel
