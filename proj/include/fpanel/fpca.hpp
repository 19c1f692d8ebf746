#pragma once

#include "fpanel/grid.hpp"
#include "fpanel/kernel.hpp"
#include "fpanel/panel.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fpanel {

/// Eigenpairs of the covariance operator discretized with trapezoidal weights.
/// Eigenfunctions are the columns of `eigenfunctions` (grid x count) and are
/// orthonormal in the weighted inner product.
struct EigenSystem {
  Eigen::VectorXd grid;
  Eigen::VectorXd weights;
  Eigen::VectorXd eigenvalues;     // descending, all > 0
  Eigen::MatrixXd eigenfunctions;  // G x count

  std::size_t count() const { return static_cast<std::size_t>(eigenvalues.size()); }
  GridCurve eigenfunction(std::size_t k) const;
};

/// Solves W^{1/2} G W^{1/2} u = lambda u and returns phi = W^{-1/2} u.
/// Eigenvalues <= max(0, 1e-12 lambda_1) are dropped. Each eigenfunction is
/// signed so its integral is positive; when the integral vanishes, the first
/// clearly nonzero grid value is made positive.
EigenSystem eigendecompose(const GridSurface& surface);

/// sigma^2 from the gap between the 1-D smooth of squared residuals V(t) and
/// the covariance diagonal G(t, t), averaged over the central half of the
/// grid and clamped at zero.
double estimate_noise_variance(const FunctionalDataset& data, const GridCurve& mean,
                               const GridSurface& surface, const KernelSpec& spec);

/// Conditional-expectation (BLUP) scores, one row per sample.
Eigen::MatrixXd conditional_scores(const FunctionalDataset& data, const GridCurve& mean,
                                   const EigenSystem& eigen, double sigma2, std::size_t components);

/// Cumulative fraction of variance explained.
std::vector<double> cumulative_fve(const Eigen::VectorXd& eigenvalues);

/// Smallest K whose cumulative FVE reaches `threshold` (in (0, 1]).
std::size_t choose_K(const Eigen::VectorXd& eigenvalues, double threshold);

/// How a smoothing bandwidth is obtained.
struct BandwidthSetting {
  enum class Mode { Auto, Default, Fixed };
  Mode mode = Mode::Auto;
  double value = 0.0;  // Fixed only

  static BandwidthSetting automatic() { return {}; }
  static BandwidthSetting fallback() { return {Mode::Default, 0.0}; }
  static BandwidthSetting fixed(double h) { return {Mode::Fixed, h}; }
  /// "auto", "default" or a positive number.
  static BandwidthSetting parse(const std::string& text);
  std::string describe() const;
};

struct PaceConfig {
  std::size_t grid_size = 51;
  KernelKind kernel = KernelKind::Gaussian;
  BandwidthSetting mean_bandwidth;
  BandwidthSetting cov_bandwidth;
  /// Independent bandwidth for the second covariance argument; unset means h2 = h1.
  std::optional<double> cov_bandwidth_t;
  /// Cross-validation candidates; empty means multiples of the year spacing.
  std::vector<double> bandwidth_candidates;
  double fve_threshold = 0.95;
};

/// Output of the mean and covariance smoothing stage.
struct SmoothingResult {
  GridCurve mean;
  GridSurface covariance;
  KernelSpec mean_kernel;
  KernelSpec cov_kernel_s;
  KernelSpec cov_kernel_t;
  std::optional<BandwidthChoice> mean_selection;
  std::optional<BandwidthChoice> cov_selection;
};

SmoothingResult smooth_stage(const FunctionalDataset& data, const PaceConfig& config);

struct FpcaFit {
  std::string variable;
  DomainMap domain;
  Transform transform;
  std::vector<std::string> subjects;
  SmoothingResult smoothing;
  EigenSystem eigen;
  double sigma2 = 0.0;
  std::size_t K = 0;
  Eigen::MatrixXd scores;  // subjects x K
  std::vector<double> fve;
  double fve_threshold = 0.95;

  const GridCurve& mean() const { return smoothing.mean; }
  const Eigen::VectorXd& grid() const { return smoothing.mean.grid; }
  std::optional<std::size_t> subject_index(const std::string& id) const;
};

/// Eigendecomposition, noise variance, K and scores from a finished smoothing stage.
FpcaFit fit_pace_from_smoothing(const FunctionalDataset& data, SmoothingResult smoothing,
                                const PaceConfig& config);

/// smooth_stage followed by fit_pace_from_smoothing. Errors carry the stage label.
FpcaFit fit_pace(const FunctionalDataset& data, const PaceConfig& config);

/// mu(t) + sum_k xi_ik phi_k(t) on the fit grid.
GridCurve reconstruct(const FpcaFit& fit, std::size_t subject);
GridCurve reconstruct(const FpcaFit& fit, const std::string& subject);
/// All reconstructions, one row per subject (subjects x G).
Eigen::MatrixXd reconstruct_all(const FpcaFit& fit);

namespace reference {

/// Per-subject scores by explicit inversion, one subject at a time.
Eigen::MatrixXd conditional_scores(const FunctionalDataset& data, const GridCurve& mean,
                                   const EigenSystem& eigen, double sigma2, std::size_t components);

}  // namespace reference

}  // namespace fpanel
