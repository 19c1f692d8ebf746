#include "fpanel/grid.hpp"
#include "fpanel/kernel.hpp"
#include "fpanel/synth.hpp"
#include "support/expect_error.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace fpanel;

namespace {

FunctionalDataset dataset(std::vector<SparseFunctionalSample> samples) {
  FunctionalDataset d;
  d.samples = std::move(samples);
  d.domain = {2000, 2026};
  d.variable = "X";
  return d;
}

double gauss(double u, double h) { return std::exp(-0.5 * (u / h) * (u / h)) / std::sqrt(2.0 * std::numbers::pi); }

// Linear interpolation written out independently of the library helper.
double lerp_on(const Eigen::VectorXd& grid, const Eigen::VectorXd& v, double t) {
  const double step = grid[1] - grid[0];
  auto j = static_cast<Eigen::Index>(std::floor(t / step));
  j = std::clamp<Eigen::Index>(j, 0, grid.size() - 2);
  const double a = (t - grid[j]) / step;
  return (1 - a) * v[j] + a * v[j + 1];
}

}  // namespace

TEST(KernelWeight, ClosedFormsAndSymmetry) {
  EXPECT_NEAR(kernel_weight({KernelKind::Gaussian, 1.0}, 0.0), 0.398942, 1e-6);
  EXPECT_EQ(kernel_weight({KernelKind::Epanechnikov, 0.3}, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(kernel_weight({KernelKind::Epanechnikov, 1.0}, 0.5), 0.75 * 0.75);
  for (KernelKind k : {KernelKind::Gaussian, KernelKind::Epanechnikov})
    for (double u : {0.01, 0.1, 0.7, 2.0}) EXPECT_EQ(kernel_weight({k, 0.5}, u), kernel_weight({k, 0.5}, -u));
}

TEST(KernelSpecTest, RejectsNonPositiveBandwidth) {
  EXPECT_CODE(InvalidArgument, (KernelSpec{KernelKind::Gaussian, 0.0}.validate()));
  EXPECT_CODE(InvalidArgument, (KernelSpec{KernelKind::Gaussian, -1.0}.validate()));
}

TEST(SmoothMean, ConstantDataGivesConstant) {
  const auto d = dataset({{"A", {0.0, 0.3, 0.9}, {2.5, 2.5, 2.5}}, {"B", {0.5}, {2.5}}});
  for (double h : {0.01, 0.2, 5.0}) {
    const GridCurve m = smooth_mean(d, {KernelKind::Gaussian, h}, uniform_grid(11));
    for (Eigen::Index g = 0; g < m.values.size(); ++g) EXPECT_NEAR(m.values[g], 2.5, 1e-14);
  }
}

TEST(SmoothMean, SingleObservationIsFlat) {
  const auto d = dataset({{"A", {0.4}, {-1.75}}});
  const GridCurve m = smooth_mean(d, {KernelKind::Gaussian, 0.05}, uniform_grid(21));
  for (Eigen::Index g = 0; g < m.values.size(); ++g) EXPECT_DOUBLE_EQ(m.values[g], -1.75);
}

TEST(SmoothMean, MatchesHandRatio) {
  const auto d = dataset({{"A", {0.1, 0.6}, {1.0, 3.0}}, {"B", {0.3}, {-2.0}}});
  const double h = 0.2, t = 0.5;
  const double w1 = gauss(0.1 - t, h), w2 = gauss(0.6 - t, h), w3 = gauss(0.3 - t, h);
  const double expected = (w1 * 1.0 + w2 * 3.0 + w3 * -2.0) / (w1 + w2 + w3);
  const GridCurve m = smooth_mean(d, {KernelKind::Gaussian, h}, uniform_grid(3));  // 0, 0.5, 1
  EXPECT_NEAR(m.values[1], expected, 1e-14);
}

TEST(SmoothMean, EmptyAndZeroDenominator) {
  EXPECT_CODE(EmptyDataset, smooth_mean(dataset({}), {KernelKind::Gaussian, 0.1}, uniform_grid(5)));
  const auto d = dataset({{"A", {0.0}, {1.0}}});
  EXPECT_CODE(ZeroDenominator, smooth_mean(d, {KernelKind::Epanechnikov, 0.01}, uniform_grid(5)));
}

TEST(SmoothMean, ConvexOrderInvariantAndScaled) {
  const KlSample s = generate_kl(KlTruth::standard(), 80, uniform_grid(51));
  const KernelSpec spec{KernelKind::Gaussian, 0.06};
  const Eigen::VectorXd grid = uniform_grid(51);
  const GridCurve m = smooth_mean(s.data, spec, grid);
  double lo = 1e300, hi = -1e300;
  for (const auto& smp : s.data.samples)
    for (double v : smp.values) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_GE(m.values.minCoeff(), lo);
  EXPECT_LE(m.values.maxCoeff(), hi);

  FunctionalDataset reversed = s.data;
  std::reverse(reversed.samples.begin(), reversed.samples.end());
  const GridCurve mr = smooth_mean(reversed, spec, grid);
  EXPECT_LT((m.values - mr.values).cwiseAbs().maxCoeff(), 1e-12);

  FunctionalDataset scaled = s.data;
  for (auto& smp : scaled.samples)
    for (double& v : smp.values) v *= 4.0;
  const GridCurve ms = smooth_mean(scaled, spec, grid);
  EXPECT_LT((ms.values - 4.0 * m.values).cwiseAbs().maxCoeff(), 1e-12);
  const GridSurface c = smooth_covariance(s.data, m, spec, spec, grid);
  const GridSurface cs = smooth_covariance(scaled, ms, spec, spec, grid);
  EXPECT_LT((cs.values - 16.0 * c.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SmoothCovariance, FlatProcessIsNearOne) {
  // X_i(t) = xi_i with Var(xi) = 1, observed without noise at lattice times.
  Rng rng(7);
  std::vector<SparseFunctionalSample> samples;
  const std::size_t n = 4000;
  std::vector<double> xis(n);
  for (double& x : xis) x = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    SparseFunctionalSample s{"S" + std::to_string(i), {}, {}};
    std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
    const std::size_t a = rng.index(5), b = (a + 1 + rng.index(4)) % 5;
    s.times = {std::min(times[a], times[b]), std::max(times[a], times[b])};
    s.values = {xis[i], xis[i]};
    samples.push_back(s);
  }
  const auto d = dataset(samples);
  const Eigen::VectorXd grid = uniform_grid(11);
  const KernelSpec spec{KernelKind::Gaussian, 0.1};
  const GridSurface g = smooth_covariance(d, smooth_mean(d, spec, grid), spec, spec, grid);
  EXPECT_LT((g.values.array() - 1.0).abs().maxCoeff(), 0.1);
}

TEST(SmoothCovariance, SinglePairHandCheck) {
  const auto d = dataset({{"A", {0.2, 0.7}, {1.0, 1.0}}});
  const Eigen::VectorXd grid = uniform_grid(3);
  GridCurve zero{grid, Eigen::VectorXd::Zero(3)};
  const KernelSpec spec{KernelKind::Gaussian, 0.3};
  const GridSurface g = smooth_covariance(d, zero, spec, spec, grid);
  // Both ordered pairs carry the product 1, so every ratio is 1.
  for (Eigen::Index a = 0; a < 3; ++a)
    for (Eigen::Index b = 0; b < 3; ++b) EXPECT_NEAR(g.values(a, b), 1.0, 1e-14);

  const auto d2 = dataset({{"A", {0.2, 0.7}, {2.0, 3.0}}, {"B", {0.0, 1.0}, {1.0, -1.0}}});
  const GridSurface g2 = smooth_covariance(d2, zero, spec, spec, grid);
  const double s = 0.5, t = 1.0;
  // Ordered pairs (t_j, t_l, product) with j != l.
  const double pairs[][3] = {{0.2, 0.7, 6.0}, {0.7, 0.2, 6.0}, {0.0, 1.0, -1.0}, {1.0, 0.0, -1.0}};
  double num = 0.0, den = 0.0;
  for (const auto& p : pairs) {
    const double w = gauss(p[0] - s, 0.3) * gauss(p[1] - t, 0.3);
    num += w * p[2];
    den += w;
  }
  EXPECT_NEAR(g2.values(1, 2), num / den, 1e-13);
}

TEST(SmoothCovariance, SymmetricAndErrors) {
  KlTruth truth = KlTruth::standard();
  const KlSample s = generate_kl(truth, 60, uniform_grid(31));
  const Eigen::VectorXd grid = uniform_grid(31);
  const KernelSpec h1{KernelKind::Gaussian, 0.05}, h2{KernelKind::Gaussian, 0.12};
  const GridCurve m = smooth_mean(s.data, h1, grid);
  const GridSurface g = smooth_covariance(s.data, m, h1, h2, grid);
  EXPECT_TRUE(g.values == g.values.transpose());
  EXPECT_CODE(NoOffDiagonalPairs, smooth_covariance(dataset({{"A", {0.5}, {1.0}}}), m, h1, h1, grid));
  EXPECT_CODE(GridMismatch, smooth_covariance(s.data, m, h1, h1, uniform_grid(11)));
}

TEST(SmoothCovariance, NoiseLeavesOffDiagonalExpectation) {
  // Same latent curves with and without noise; the difference of the two
  // surfaces at probe points is compared with a subject-level standard error
  // of the ratio estimator.
  KlTruth clean = KlTruth::standard();
  clean.sigma = 0.0;
  const std::size_t n = 500;
  const Eigen::VectorXd grid = uniform_grid(21);
  const KlSample a = generate_kl(clean, n, grid);
  KlSample b = a;
  Rng rng(99);
  for (auto& smp : b.data.samples)
    for (double& v : smp.values) v += 0.5 * rng.normal();
  const KernelSpec spec{KernelKind::Gaussian, 0.08};
  const GridCurve ma = smooth_mean(a.data, spec, grid), mb = smooth_mean(b.data, spec, grid);
  const GridSurface ga = smooth_covariance(a.data, ma, spec, spec, grid);
  const GridSurface gb = smooth_covariance(b.data, mb, spec, spec, grid);

  const std::pair<Eigen::Index, Eigen::Index> probes[] = {{5, 10}, {10, 15}, {4, 16}, {8, 12}};
  for (auto [p, q] : probes) {
    const double s = grid[p], t = grid[q];
    double den = 0.0;
    std::vector<double> wsum(n, 0.0), diff(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ca = a.data.samples[i];
      const auto& cb = b.data.samples[i];
      for (std::size_t j = 0; j < ca.size(); ++j)
        for (std::size_t l = 0; l < ca.size(); ++l) {
          if (j == l) continue;
          const double w = gauss(ca.times[j] - s, spec.bandwidth) * gauss(ca.times[l] - t, spec.bandwidth);
          const double pa = (ca.values[j] - lerp_on(grid, ma.values, ca.times[j])) *
                            (ca.values[l] - lerp_on(grid, ma.values, ca.times[l]));
          const double pb = (cb.values[j] - lerp_on(grid, mb.values, cb.times[j])) *
                            (cb.values[l] - lerp_on(grid, mb.values, cb.times[l]));
          wsum[i] += w;
          diff[i] += w * (pb - pa);
          den += w;
        }
    }
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) d += diff[i];
    d /= den;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (diff[i] - d * wsum[i]) * (diff[i] - d * wsum[i]);
    const double se = std::sqrt(var) / den;
    // The library's symmetrized surfaces average (s,t) and (t,s); our sum over
    // ordered pairs is already symmetric in that sense.
    EXPECT_NEAR(gb.values(p, q) - ga.values(p, q), d, 1e-10) << "oracle mismatch at " << p << "," << q;
    EXPECT_LT(std::abs(d), 3.0 * se) << "probe " << p << "," << q << " se=" << se;
  }
}

TEST(SelectBandwidth, PrefersCandidateThatResolvesWigglyMean) {
  KlTruth t = KlTruth::standard();
  t.mean_amplitude = 3.0;
  const KlSample s = generate_kl(t, 200, uniform_grid(51));
  const double h = 0.05;
  const BandwidthChoice c = select_bandwidth(s.data, {h, 1000 * h}, KernelKind::Gaussian);
  EXPECT_EQ(c.bandwidth, h);
  ASSERT_EQ(c.scores.size(), 2u);
  EXPECT_LT(c.scores[0], c.scores[1]);
}

TEST(SelectBandwidth, TiesGoToLargerAndPreconditions) {
  const auto flat = dataset({{"A", {0.0, 0.5}, {1.0, 1.0}}, {"B", {0.25, 1.0}, {1.0, 1.0}}, {"C", {0.75}, {1.0}}});
  EXPECT_EQ(select_bandwidth(flat, {0.1, 0.3, 0.2}, KernelKind::Gaussian).bandwidth, 0.3);
  EXPECT_CODE(InvalidArgument, select_bandwidth(dataset({{"A", {0.0, 1.0}, {1.0, 2.0}}}), {0.1, 0.2},
                                                KernelKind::Gaussian));
  const auto sparse = dataset({{"A", {0.0}, {1.0}}, {"B", {1.0}, {2.0}}});
  EXPECT_CODE(AllCandidatesDegenerate, select_bandwidth(sparse, {0.01, 0.02}, KernelKind::Epanechnikov));
}

TEST(SelectCovarianceBandwidth, ReturnsACandidate) {
  const KlSample s = generate_kl(KlTruth::standard(), 120, uniform_grid(51));
  const std::vector<double> cands = default_bandwidth_candidates(s.data.domain);
  const GridCurve m = smooth_mean(s.data, {KernelKind::Gaussian, 0.05}, uniform_grid(51));
  const BandwidthChoice c = select_covariance_bandwidth(s.data, m, cands, KernelKind::Gaussian);
  EXPECT_NE(std::find(cands.begin(), cands.end(), c.bandwidth), cands.end());
  EXPECT_EQ(c.scores.size(), cands.size());
}

TEST(ReferenceKernels, AgreeWithParallel) {
  const KlSample s = generate_kl(KlTruth::standard(), 150, uniform_grid(51));
  const Eigen::VectorXd grid = uniform_grid(51);
  for (KernelKind kind : {KernelKind::Gaussian, KernelKind::Epanechnikov}) {
    const KernelSpec spec{kind, 0.12};
    const GridCurve m = smooth_mean(s.data, spec, grid);
    const GridCurve mr = reference::smooth_mean(s.data, spec, grid);
    EXPECT_LT((m.values - mr.values).cwiseAbs().maxCoeff(), 1e-12);
    const GridSurface g = smooth_covariance(s.data, m, spec, spec, grid);
    const GridSurface gr = reference::smooth_covariance(s.data, m, spec, spec, grid);
    EXPECT_LT((g.values - gr.values).cwiseAbs().maxCoeff(), 1e-11);
  }
}

TEST(ReferenceKernels, MeanCvMatchesSelection) {
  const KlSample s = generate_kl(KlTruth::standard(), 60, uniform_grid(51));
  const std::vector<double> cands{0.04, 0.08, 0.16};
  const BandwidthChoice c = select_bandwidth(s.data, cands, KernelKind::Gaussian);
  for (std::size_t k = 0; k < cands.size(); ++k) {
    const double ref = reference::mean_cv_score(s.data, {KernelKind::Gaussian, cands[k]});
    EXPECT_NEAR(c.scores[k], ref, 1e-9 * std::max(1.0, ref));
  }
}
