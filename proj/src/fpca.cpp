#include "fpanel/fpca.hpp"

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fpanel {

GridCurve EigenSystem::eigenfunction(std::size_t k) const {
  return {grid, eigenfunctions.col(static_cast<Eigen::Index>(k))};
}

EigenSystem eigendecompose(const GridSurface& surface) {
  const Eigen::Index n = surface.grid.size();
  if (surface.values.rows() != n || surface.values.cols() != n)
    fail(ErrorCode::InvalidArgument, "surface dimensions do not match its grid");
  check_uniform_grid(surface.grid);
  if (!surface.values.allFinite()) fail(ErrorCode::NonFiniteEntries, "covariance surface");
  const double scale = surface.values.cwiseAbs().maxCoeff();
  if ((surface.values - surface.values.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1e-300))
    fail(ErrorCode::AsymmetricInput, "covariance surface is not symmetric");

  EigenSystem out;
  out.grid = surface.grid;
  out.weights = trapezoid_weights(surface.grid);
  const Eigen::VectorXd sw = out.weights.cwiseSqrt();
  const Eigen::MatrixXd op = sw.asDiagonal() * surface.values * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (op + op.transpose()));
  if (solver.info() != Eigen::Success) fail(ErrorCode::NonFiniteEntries, "eigensolver did not converge");

  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const double top = values[n - 1];
  const double floor = std::max(0.0, 1e-12 * top);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = n - 1; k >= 0; --k)
    if (values[k] > floor) keep.push_back(k);

  out.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
  out.eigenfunctions.resize(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    out.eigenvalues[col] = values[keep[c]];
    Eigen::VectorXd phi = solver.eigenvectors().col(keep[c]).cwiseQuotient(sw);
    const double integral = out.weights.dot(phi);
    const double mass = out.weights.dot(phi.cwiseAbs());
    double sign = 1.0;
    if (std::abs(integral) > 1e-10 * mass) {
      sign = integral < 0.0 ? -1.0 : 1.0;
    } else {
      const double peak = phi.cwiseAbs().maxCoeff();
      for (Eigen::Index g = 0; g < n; ++g) {
        if (std::abs(phi[g]) > 1e-10 * peak) {
          sign = phi[g] < 0.0 ? -1.0 : 1.0;
          break;
        }
      }
    }
    out.eigenfunctions.col(col) = sign * phi;
  }
  return out;
}

double estimate_noise_variance(const FunctionalDataset& data, const GridCurve& mean,
                               const GridSurface& surface, const KernelSpec& spec) {
  if (data.observation_count() == 0) fail(ErrorCode::EmptyDataset, "no observations");
  if (!same_grid(mean.grid, surface.grid)) fail(ErrorCode::GridMismatch, "mean and surface grids differ");

  FunctionalDataset squared = data;
  for (auto& s : squared.samples)
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double r = s.values[j] - mean.at(s.times[j]);
      s.values[j] = r * r;
    }
  const GridCurve variance = smooth_mean(squared, spec, mean.grid);

  double total = 0.0;
  std::size_t used = 0;
  for (Eigen::Index g = 0; g < mean.grid.size(); ++g) {
    const double t = mean.grid[g];
    if (t < 0.25 - 1e-12 || t > 0.75 + 1e-12) continue;
    total += variance.values[g] - surface.values(g, g);
    ++used;
  }
  if (used == 0) {
    for (Eigen::Index g = 0; g < mean.grid.size(); ++g) total += variance.values[g] - surface.values(g, g);
    used = static_cast<std::size_t>(mean.grid.size());
  }
  return std::max(0.0, total / static_cast<double>(used));
}

namespace {

struct SubjectSolve {
  Eigen::VectorXd scores;
  bool ok = true;
};

SubjectSolve subject_scores(const SparseFunctionalSample& s, const GridCurve& mean, const EigenSystem& eigen,
                            double sigma2, Eigen::Index K) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd phi(n, K);
  Eigen::VectorXd centered(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = s.times[static_cast<std::size_t>(j)];
    centered[j] = s.values[static_cast<std::size_t>(j)] - mean.at(t);
    for (Eigen::Index k = 0; k < K; ++k) phi(j, k) = interpolate(eigen.grid, eigen.eigenfunctions.col(k), t);
  }
  const Eigen::VectorXd lambda = eigen.eigenvalues.head(K);
  Eigen::MatrixXd sigma = phi * lambda.asDiagonal() * phi.transpose();
  sigma.diagonal().array() += sigma2;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> spectrum(sigma, Eigen::EigenvaluesOnly);
  const double hi = spectrum.eigenvalues().maxCoeff();
  const double lo = spectrum.eigenvalues().minCoeff();
  const bool ill = !(lo > 0.0) || hi / lo > 1e12;
  if (ill || (sigma2 == 0.0 && n > K)) sigma.diagonal().array() += 1e-8 * sigma.trace() / static_cast<double>(n);

  Eigen::LLT<Eigen::MatrixXd> chol(sigma);
  SubjectSolve out;
  if (chol.info() != Eigen::Success) {
    out.ok = false;
    return out;
  }
  out.scores = lambda.asDiagonal() * (phi.transpose() * chol.solve(centered));
  out.ok = out.scores.allFinite();
  return out;
}

void check_score_inputs(const FunctionalDataset& data, const GridCurve& mean, const EigenSystem& eigen,
                        double sigma2, std::size_t components) {
  if (components == 0 || components > eigen.count())
    fail(ErrorCode::InvalidArgument, "component count " + std::to_string(components) + " exceeds " +
                                         std::to_string(eigen.count()) + " retained eigenpairs");
  if (!(sigma2 >= 0.0)) fail(ErrorCode::InvalidArgument, "noise variance must be nonnegative");
  if (!same_grid(mean.grid, eigen.grid)) fail(ErrorCode::GridMismatch, "mean and eigenfunction grids differ");
  for (const auto& s : data.samples)
    if (s.size() == 0) fail(ErrorCode::InvalidArgument, "subject " + s.subject + " has no observations");
}

}  // namespace

Eigen::MatrixXd conditional_scores(const FunctionalDataset& data, const GridCurve& mean,
                                   const EigenSystem& eigen, double sigma2, std::size_t components) {
  check_score_inputs(data, mean, eigen, sigma2, components);
  const auto K = static_cast<Eigen::Index>(components);
  const auto n = static_cast<Eigen::Index>(data.samples.size());
  Eigen::MatrixXd scores(n, K);
  std::vector<unsigned char> failed(static_cast<std::size_t>(n), 0);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < n; ++i) {
    const SubjectSolve solved = subject_scores(data.samples[static_cast<std::size_t>(i)], mean, eigen, sigma2, K);
    if (!solved.ok) {
      failed[static_cast<std::size_t>(i)] = 1;
      continue;
    }
    scores.row(i) = solved.scores.transpose();
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (failed[static_cast<std::size_t>(i)])
      fail(ErrorCode::SingularSubjectCovariance, "subject " + data.samples[static_cast<std::size_t>(i)].subject);
  return scores;
}

std::vector<double> cumulative_fve(const Eigen::VectorXd& eigenvalues) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) total += eigenvalues[k];
  std::vector<double> fve;
  double running = 0.0;
  for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
    running += eigenvalues[k];
    fve.push_back(running / total);
  }
  return fve;
}

std::size_t choose_K(const Eigen::VectorXd& eigenvalues, double threshold) {
  if (eigenvalues.size() == 0) fail(ErrorCode::InvalidArgument, "no eigenvalues");
  if (!(threshold > 0.0 && threshold <= 1.0)) fail(ErrorCode::InvalidArgument, "FVE threshold must lie in (0, 1]");
  if (!(eigenvalues.array() > 0.0).all()) fail(ErrorCode::InvalidArgument, "eigenvalues must be positive");
  const std::vector<double> fve = cumulative_fve(eigenvalues);
  for (std::size_t k = 0; k < fve.size(); ++k)
    if (fve[k] >= threshold) return k + 1;
  return fve.size();
}

BandwidthSetting BandwidthSetting::parse(const std::string& text) {
  if (text == "auto") return automatic();
  if (text == "default") return fallback();
  auto h = io::parse_double(text);
  if (!h || !(*h > 0.0)) fail(ErrorCode::InvalidConfig, "bandwidth must be 'auto', 'default' or positive: " + text);
  return fixed(*h);
}

std::string BandwidthSetting::describe() const {
  switch (mode) {
    case Mode::Auto: return "auto";
    case Mode::Default: return "default";
    case Mode::Fixed: return io::format_double(value);
  }
  return "auto";
}

SmoothingResult smooth_stage(const FunctionalDataset& data, const PaceConfig& config) {
  validate(data);
  if (data.samples.empty()) fail(ErrorCode::EmptyDataset, "no subjects");
  const Eigen::VectorXd grid = uniform_grid(config.grid_size);
  const std::vector<double> candidates =
      config.bandwidth_candidates.empty() ? default_bandwidth_candidates(data.domain) : config.bandwidth_candidates;

  SmoothingResult out;
  out.mean_kernel.kind = config.kernel;
  switch (config.mean_bandwidth.mode) {
    case BandwidthSetting::Mode::Auto:
      out.mean_selection = select_bandwidth(data, candidates, config.kernel);
      out.mean_kernel.bandwidth = out.mean_selection->bandwidth;
      break;
    case BandwidthSetting::Mode::Default:
      out.mean_kernel.bandwidth = default_bandwidth(data.domain);
      break;
    case BandwidthSetting::Mode::Fixed:
      out.mean_kernel.bandwidth = config.mean_bandwidth.value;
      break;
  }
  try {
    out.mean = smooth_mean(data, out.mean_kernel, grid);
  } catch (const Error& e) {
    throw e.with_stage("smooth_mean");
  }

  out.cov_kernel_s.kind = config.kernel;
  switch (config.cov_bandwidth.mode) {
    case BandwidthSetting::Mode::Auto:
      try {
        out.cov_selection = select_covariance_bandwidth(data, out.mean, candidates, config.kernel);
      } catch (const Error& e) {
        throw e.with_stage("smooth_covariance");
      }
      out.cov_kernel_s.bandwidth = out.cov_selection->bandwidth;
      break;
    case BandwidthSetting::Mode::Default:
      out.cov_kernel_s.bandwidth = default_bandwidth(data.domain);
      break;
    case BandwidthSetting::Mode::Fixed:
      out.cov_kernel_s.bandwidth = config.cov_bandwidth.value;
      break;
  }
  out.cov_kernel_t = out.cov_kernel_s;
  if (config.cov_bandwidth_t) out.cov_kernel_t.bandwidth = *config.cov_bandwidth_t;
  try {
    out.covariance = smooth_covariance(data, out.mean, out.cov_kernel_s, out.cov_kernel_t, grid);
  } catch (const Error& e) {
    throw e.with_stage("smooth_covariance");
  }
  return out;
}

std::optional<std::size_t> FpcaFit::subject_index(const std::string& id) const {
  auto it = std::find(subjects.begin(), subjects.end(), id);
  if (it == subjects.end()) return std::nullopt;
  return static_cast<std::size_t>(it - subjects.begin());
}

FpcaFit fit_pace_from_smoothing(const FunctionalDataset& data, SmoothingResult smoothing, const PaceConfig& config) {
  FpcaFit fit;
  fit.variable = data.variable;
  fit.domain = data.domain;
  fit.transform = data.transform;
  fit.subjects = data.subject_ids();
  fit.fve_threshold = config.fve_threshold;
  try {
    fit.eigen = eigendecompose(smoothing.covariance);
  } catch (const Error& e) {
    throw e.with_stage("eigendecompose");
  }
  if (fit.eigen.count() == 0)
    fail(ErrorCode::ZeroSpectrum, "covariance surface has no positive eigenvalue (variable " + data.variable + ")");
  try {
    fit.sigma2 = estimate_noise_variance(data, smoothing.mean, smoothing.covariance, smoothing.mean_kernel);
  } catch (const Error& e) {
    throw e.with_stage("estimate_noise_variance");
  }
  try {
    fit.K = choose_K(fit.eigen.eigenvalues, config.fve_threshold);
  } catch (const Error& e) {
    throw e.with_stage("choose_K");
  }
  fit.fve = cumulative_fve(fit.eigen.eigenvalues);
  try {
    fit.scores = conditional_scores(data, smoothing.mean, fit.eigen, fit.sigma2, fit.K);
  } catch (const Error& e) {
    throw e.with_stage("conditional_scores");
  }
  fit.smoothing = std::move(smoothing);
  return fit;
}

FpcaFit fit_pace(const FunctionalDataset& data, const PaceConfig& config) {
  return fit_pace_from_smoothing(data, smooth_stage(data, config), config);
}

GridCurve reconstruct(const FpcaFit& fit, std::size_t subject) {
  if (subject >= fit.subjects.size()) fail(ErrorCode::UnknownSubject, "index " + std::to_string(subject));
  const auto K = static_cast<Eigen::Index>(fit.K);
  GridCurve out = fit.mean();
  out.values += fit.eigen.eigenfunctions.leftCols(K) * fit.scores.row(static_cast<Eigen::Index>(subject)).transpose();
  return out;
}

GridCurve reconstruct(const FpcaFit& fit, const std::string& subject) {
  auto idx = fit.subject_index(subject);
  if (!idx) fail(ErrorCode::UnknownSubject, "'" + subject + "'");
  return reconstruct(fit, *idx);
}

Eigen::MatrixXd reconstruct_all(const FpcaFit& fit) {
  const auto K = static_cast<Eigen::Index>(fit.K);
  Eigen::MatrixXd out = fit.scores * fit.eigen.eigenfunctions.leftCols(K).transpose();
  out.rowwise() += fit.mean().values.transpose();
  return out;
}

}  // namespace fpanel
