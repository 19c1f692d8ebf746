#include "fpanel/error.hpp"
#include "fpanel/fpca.hpp"

namespace fpanel::reference {

Eigen::MatrixXd conditional_scores(const FunctionalDataset& data, const GridCurve& mean,
                                   const EigenSystem& eigen, double sigma2, std::size_t components) {
  const auto K = static_cast<Eigen::Index>(components);
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(data.samples.size()), K);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    const auto n = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd sigma(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index l = 0; l < n; ++l) {
        double v = j == l ? sigma2 : 0.0;
        for (Eigen::Index k = 0; k < K; ++k)
          v += eigen.eigenvalues[k] * interpolate(eigen.grid, eigen.eigenfunctions.col(k), s.times[static_cast<std::size_t>(j)]) *
               interpolate(eigen.grid, eigen.eigenfunctions.col(k), s.times[static_cast<std::size_t>(l)]);
        sigma(j, l) = v;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> spectrum(sigma, Eigen::EigenvaluesOnly);
    const double hi = spectrum.eigenvalues().maxCoeff();
    const double lo = spectrum.eigenvalues().minCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12 || (sigma2 == 0.0 && n > K))
      sigma.diagonal().array() += 1e-8 * sigma.trace() / static_cast<double>(n);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sigma);
    if (!lu.isInvertible()) fail(ErrorCode::SingularSubjectCovariance, "subject " + s.subject);
    const Eigen::MatrixXd inv = lu.inverse();
    for (Eigen::Index k = 0; k < K; ++k) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double phi = interpolate(eigen.grid, eigen.eigenfunctions.col(k), s.times[static_cast<std::size_t>(j)]);
        double row = 0.0;
        for (Eigen::Index l = 0; l < n; ++l) row += inv(j, l) * (s.values[static_cast<std::size_t>(l)] - mean.at(s.times[static_cast<std::size_t>(l)]));
        acc += phi * row;
      }
      scores(static_cast<Eigen::Index>(i), k) = eigen.eigenvalues[k] * acc;
    }
  }
  return scores;
}

}  // namespace fpanel::reference
