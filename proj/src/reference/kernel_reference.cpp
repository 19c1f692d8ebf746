#include "fpanel/error.hpp"
#include "fpanel/kernel.hpp"

namespace fpanel::reference {

GridCurve smooth_mean(const FunctionalDataset& data, const KernelSpec& spec, const Eigen::VectorXd& grid) {
  spec.validate();
  if (data.observation_count() == 0) fail(ErrorCode::EmptyDataset, "no observations");
  GridCurve out{grid, Eigen::VectorXd(grid.size())};
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& s : data.samples) {
      for (std::size_t j = 0; j < s.size(); ++j) {
        const double w = kernel_weight(spec, s.times[j] - grid[g]);
        num += w * s.values[j];
        den += w;
      }
    }
    if (!(den > 0.0)) fail(ErrorCode::ZeroDenominator, "mean smoother");
    out.values[g] = num / den;
  }
  return out;
}

GridSurface smooth_covariance(const FunctionalDataset& data, const GridCurve& mean,
                              const KernelSpec& spec_s, const KernelSpec& spec_t,
                              const Eigen::VectorXd& grid) {
  const Eigen::Index n = grid.size();
  Eigen::MatrixXd raw(n, n);
  bool any_pair = false;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      double num = 0.0;
      double den = 0.0;
      for (const auto& s : data.samples) {
        for (std::size_t j = 0; j < s.size(); ++j) {
          for (std::size_t l = 0; l < s.size(); ++l) {
            if (j == l) continue;
            any_pair = true;
            const double cj = s.values[j] - mean.at(s.times[j]);
            const double cl = s.values[l] - mean.at(s.times[l]);
            const double k = kernel_weight(spec_s, s.times[j] - grid[a]) * kernel_weight(spec_t, s.times[l] - grid[b]);
            num += k * (cj * cl);
            den += k;
          }
        }
      }
      if (!any_pair) fail(ErrorCode::NoOffDiagonalPairs, "no pairs");
      if (!(den > 0.0)) fail(ErrorCode::ZeroDenominator, "covariance smoother");
      raw(a, b) = num / den;
    }
  }
  return {grid, 0.5 * (raw + raw.transpose())};
}

double mean_cv_score(const FunctionalDataset& data, const KernelSpec& spec) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    FunctionalDataset rest = data;
    rest.samples.erase(rest.samples.begin() + static_cast<std::ptrdiff_t>(i));
    const auto& held = data.samples[i];
    const Eigen::VectorXd at = Eigen::Map<const Eigen::VectorXd>(held.times.data(), static_cast<Eigen::Index>(held.size()));
    const GridCurve fit = reference::smooth_mean(rest, spec, at);
    for (std::size_t j = 0; j < held.size(); ++j) {
      const double r = held.values[j] - fit.values[static_cast<Eigen::Index>(j)];
      total += r * r;
    }
  }
  return total;
}

}  // namespace fpanel::reference
